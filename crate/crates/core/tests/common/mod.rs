#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use adaptlab::experiment::{DomainSource, ExperimentConfig};
use adaptlab::model::TransformerConfig;

/// A config small enough for every CLI stage to finish in seconds.
pub fn tiny_config(out: &Path) -> ExperimentConfig {
    let mut c = ExperimentConfig {
        output_dir: out.to_path_buf(),
        ..ExperimentConfig::default()
    };
    c.corpus.domains = std::iter::once(DomainSource::synthetic("general", "copy", 600))
        .chain((1..=6).map(|i| DomainSource::synthetic(&format!("d{i}"), &format!("lexicon:{i}"), 600)))
        .collect();
    c.model = TransformerConfig {
        model_dim: 16,
        ffn_dim: 32,
        adapter_hidden: Some(4),
        ..TransformerConfig::lab(0)
    };
    c.pretrain.steps = 60;
    c.pretrain.checkpoint_every = 25;
    c.pretrain.log_every = 10;
    c.tasks.train_tasks_per_domain = 2;
    c.tasks.test_replicates = 2;
    c.tasks.train_budgets.support_words = 60;
    c.tasks.train_budgets.query_words = 120;
    c.meta.epochs = 2;
    c.adapt.test_time.epochs = 2;
    c.adapt.pool.epochs = 1;
    c.eval.decode.beam_size = 2;
    c.eval.sweep.support_total = 480;
    c.eval.sweep.support_sizes = vec![60, 120];
    c.eval.sweep.query_sizes = vec![60, 120];
    c.eval.sweep.seeds = vec![0];
    c.eval.gradcheck.samples = 16;
    c
}

pub fn write_config(c: &ExperimentConfig, path: &Path) -> PathBuf {
    std::fs::write(path, serde_json::to_string_pretty(c).unwrap()).unwrap();
    path.to_path_buf()
}

pub fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_adaptlab")).args(args).output().unwrap()
}

/// Runs the CLI and panics with its stderr unless it succeeds.
pub fn cli_ok(args: &[&str]) -> String {
    let out = cli(args);
    assert!(
        out.status.success(),
        "adaptlab {args:?} failed with {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Relative path and contents of every file under `root`, sorted.
pub fn snapshot(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}
