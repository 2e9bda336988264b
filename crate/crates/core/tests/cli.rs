mod common;

use std::path::Path;

use adaptlab::experiment::{DomainSource, ExperimentConfig};
use adaptlab::model::{load_checkpoint, CheckpointKind};
use adaptlab::tasks::{Split, TaskManifest};
use common::{cli, cli_ok, snapshot, tiny_config, write_config};

fn setup(dir: &Path, edit: impl FnOnce(&mut ExperimentConfig)) -> String {
    let mut c = tiny_config(&dir.join("out"));
    edit(&mut c);
    write_config(&c, &dir.join("config.json")).to_str().unwrap().to_string()
}

fn three_domains(c: &mut ExperimentConfig) {
    c.corpus.domains = vec![
        DomainSource::synthetic("general", "copy", 300),
        DomainSource::synthetic("a", "lexicon:1", 300),
        DomainSource::synthetic("b", "reverse", 300),
    ];
    c.tasks.meta_train_domains = vec!["a".into()];
    c.tasks.meta_test_domains = vec!["b".into()];
}

#[test]
fn prepare_writes_one_file_per_domain_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), three_domains);
    let out = dir.path().join("out");
    cli_ok(&["--config", &cfg, "--deterministic", "prepare"]);
    let first = snapshot(&out);
    let corpora = first.iter().filter(|(n, _)| n.starts_with("corpora")).count();
    let vocabs = first.iter().filter(|(n, _)| n.ends_with("vocab.json")).count();
    assert_eq!((corpora, vocabs), (3, 1));
    assert!(first.iter().any(|(n, _)| n == "resolved_config.json"));
    cli_ok(&["--config", &cfg, "--deterministic", "prepare"]);
    assert_eq!(snapshot(&out), first);
}

#[test]
fn resolved_config_echoes_every_default() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, r#"{"seed": 3}"#).unwrap();
    let out = dir.path().join("out");
    cli_ok(&["--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "prepare"]);
    let text = std::fs::read_to_string(out.join("resolved_config.json")).unwrap();
    let resolved: ExperimentConfig = serde_json::from_str(&text).unwrap();
    let mut want = ExperimentConfig {
        seed: 3,
        output_dir: out.clone(),
        ..ExperimentConfig::default()
    };
    assert_ne!(resolved.model.vocab_size, 0);
    want.model.vocab_size = resolved.model.vocab_size;
    assert_eq!(resolved, want);
    let json: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert!(json["meta"]["inner_alpha"].is_number());
    assert!(json["adapt"]["test_time"]["lr"].is_number());
}

#[test]
fn missing_inputs_fail_with_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let o = cli(&["--config", "/no/such/config.json", "prepare"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("/no/such/config.json"));

    let cfg = setup(dir.path(), |c| {
        c.corpus.domains.push(DomainSource::files("user", "/no/such/src.txt", "/no/such/tgt.txt"));
    });
    let o = cli(&["--config", &cfg, "prepare"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("/no/such/src.txt"));

    let cfg = setup(dir.path(), |_| {});
    let o = cli(&["--config", &cfg, "meta-train"]);
    assert_ne!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stderr).contains("vocab.json"));
}

#[test]
fn usage_and_config_errors_exit_one() {
    assert_eq!(cli(&["frobnicate"]).status.code(), Some(1));
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"seeed": 1}"#).unwrap();
    let o = cli(&["--config", bad.to_str().unwrap(), "prepare"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("seeed"));
    let o = cli(&["--out", dir.path().to_str().unwrap(), "compare", "--strategies", "A,Q"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn user_supplied_parallel_text_is_loaded() {
    let dir = tempfile::tempdir().unwrap();
    let (src, tgt) = (dir.path().join("s.txt"), dir.path().join("t.txt"));
    std::fs::write(&src, "ba be\nbi bo bu\n\nda de\n").unwrap();
    std::fs::write(&tgt, "x y\nz w v\nq\nr s\n").unwrap();
    let cfg = setup(dir.path(), |c| c.corpus.domains.push(DomainSource::files("user", &src, &tgt)));
    cli_ok(&["--config", &cfg, "prepare"]);
    let tsv = std::fs::read_to_string(dir.path().join("out/corpora/user.tsv")).unwrap();
    // the pair with an empty source line is dropped
    assert_eq!(tsv, "ba be\tx y\nbi bo bu\tz w v\nda de\tr s\n");
}

#[test]
fn manifests_match_config_and_reseeding_keeps_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), |_| {});
    let out = dir.path().join("out");
    cli_ok(&["--config", &cfg, "prepare"]);
    let stdout = cli_ok(&["--config", &cfg, "make-tasks"]);
    assert!(stdout.contains("8 meta-train"), "{stdout}");
    let load = |s: Split| TaskManifest::load(&out.join(format!("tasks/{}.json", s.as_str()))).unwrap();
    let counts = |_: ()| (load(Split::MetaTrain).tasks.len(), load(Split::MetaValidation).tasks.len(), load(Split::MetaTest).tasks.len());
    assert_eq!(counts(()), (8, 4, 4));
    let before = load(Split::MetaTrain);
    cli_ok(&["--config", &cfg, "--seed", "9", "make-tasks"]);
    assert_eq!(counts(()), (8, 4, 4));
    assert_ne!(load(Split::MetaTrain), before);
}

#[test]
fn undersized_domain_fails_with_its_name() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), |c| {
        c.corpus.domains[3] = DomainSource::synthetic("d3", "lexicon:3", 20);
    });
    cli_ok(&["--config", &cfg, "prepare"]);
    let o = cli(&["--config", &cfg, "make-tasks"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("d3"));
}

#[test]
fn pretrain_resume_and_zero_steps() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let ckpt = out.join("checkpoints/pretrained.ckpt");
    let zero = setup(dir.path(), |c| c.pretrain.steps = 0);
    cli_ok(&["--config", &zero, "prepare"]);
    cli_ok(&["--config", &zero, "pretrain"]);
    let m = load_checkpoint::<f32>(&ckpt).unwrap();
    assert_eq!(m.kind, CheckpointKind::Initialized);
    assert_eq!(m.counters.pretrain_steps, 0);

    let short = setup(dir.path(), |c| c.pretrain.steps = 30);
    cli_ok(&["--config", &short, "--deterministic", "pretrain"]);
    assert_eq!(load_checkpoint::<f32>(&ckpt).unwrap().counters.pretrain_steps, 30);
    let full = setup(dir.path(), |c| c.pretrain.steps = 60);
    cli_ok(&["--config", &full, "--deterministic", "pretrain", "--resume"]);
    let resumed = std::fs::read(&ckpt).unwrap();
    let metrics = std::fs::read_to_string(out.join("reports/pretrain_metrics.csv")).unwrap();
    assert_eq!(load_checkpoint::<f32>(&ckpt).unwrap().counters.pretrain_steps, 60);

    cli_ok(&["--config", &full, "--deterministic", "pretrain"]);
    assert_eq!(std::fs::read(&ckpt).unwrap(), resumed, "resumed run differs from an uninterrupted one");
    let fresh = std::fs::read_to_string(out.join("reports/pretrain_metrics.csv")).unwrap();
    assert_eq!(metrics, fresh);
    let losses: Vec<f64> = fresh.lines().skip(1).map(|l| l.split(',').nth(2).unwrap().parse().unwrap()).collect();
    assert!(losses.last().unwrap() < losses.first().unwrap(), "{losses:?}");
}

#[test]
fn full_pipeline_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), |_| {});
    let out = dir.path().join("out");
    for c in ["prepare", "make-tasks", "pretrain"] {
        cli_ok(&["--config", &cfg, c]);
    }
    let stdout = cli_ok(&["--config", &cfg, "meta-train"]);
    assert!(stdout.contains("16 task updates"), "{stdout}");
    let log = std::fs::read_to_string(out.join("reports/meta_train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 1 + 8 * 2);
    let pre = load_checkpoint::<f32>(&out.join("checkpoints/pretrained.ckpt")).unwrap();
    let meta = load_checkpoint::<f32>(&out.join("checkpoints/meta_trained.ckpt")).unwrap();
    assert!(meta.params.group_bit_identical(&pre.params, adaptlab::autodiff::ParamGroup::Base));
    let val = std::fs::read_to_string(out.join("reports/meta_validation.csv")).unwrap();
    let rows: Vec<Vec<String>> = val.lines().skip(1).map(|l| l.split(',').map(String::from).collect()).collect();
    let best = rows.iter().min_by(|a, b| a[1].parse::<f64>().unwrap().total_cmp(&b[1].parse().unwrap())).unwrap();
    assert_eq!(rows.iter().filter(|r| r[2] == "true").collect::<Vec<_>>(), vec![best]);

    let table = cli_ok(&["--config", &cfg, "compare", "--strategies", "A,D"]);
    assert!(table.starts_with("domain"), "{table}");
    assert!(table.contains('A') && table.contains('D') && !table.contains(" B "), "{table}");
    assert!(!out.join("checkpoints/pool_finetuned.ckpt").exists());
    let csv = std::fs::read_to_string(out.join("reports/comparison_tasks.csv")).unwrap();
    let mut reader = csv::Reader::from_reader(csv.as_bytes());
    let records: Vec<csv::StringRecord> = reader.records().map(|r| r.unwrap()).collect();
    assert_eq!(records.len(), 2 * 4);
    let bleu: Vec<f64> = records.iter().map(|r| r[4].parse().unwrap()).collect();
    assert!(bleu.iter().all(|b| (0.0..=100.0).contains(b)));

    cli_ok(&["--config", &cfg, "compare"]);
    assert!(out.join("checkpoints/pool_finetuned.ckpt").exists());
    let summary = std::fs::read_to_string(out.join("reports/comparison_summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 1 + 2 * 4);

    cli_ok(&["--config", &cfg, "adapt", "--strategies", "B"]);
    let results: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("reports/adapt.json")).unwrap()).unwrap();
    let results = results.as_array().unwrap();
    assert_eq!(results.len(), 4);
    assert!(results.iter().all(|r| r["strategy"] == "FineTuneOnTask" && r["tokens_seen"].as_u64().unwrap() >= 60));

    cli_ok(&["--config", &cfg, "sweep", "--axis", "support"]);
    let sweep = std::fs::read_to_string(out.join("reports/sweep_support.csv")).unwrap();
    assert_eq!(sweep.lines().count(), 1 + 2 * 2);
    assert!(std::fs::read_to_string(out.join("reports/sweep_support.svg")).unwrap().starts_with("<svg"));
    assert!(!out.join("reports/sweep_query.csv").exists());
}

#[test]
fn gradcheck_passes_and_corruption_fails_loudly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), |_| {});
    let out = dir.path().join("out");
    let table = cli_ok(&["--config", &cfg, "gradcheck"]);
    assert!(table.contains("max relative error"));
    let csv = std::fs::read_to_string(out.join("reports/gradcheck.csv")).unwrap();
    assert!(csv.starts_with("param,element,analytic,numeric,rel_error\n"));
    assert_eq!(csv.lines().count(), 1 + 16);
    let o = cli(&["--config", &cfg, "gradcheck", "--corrupt"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("gradient check failed"));
}
