//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Criterion 8 sweeps support and query sizes over three seeds and takes
//! several minutes on one core, so it only runs with `ADAPTLAB_EXTENDED=1`.

mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use adaptlab::autodiff::{ParamGroup, ParamView};
use adaptlab::baselines::Strategy;
use adaptlab::corpus::{synth_domain, BaseLanguage, Vocabulary};
use adaptlab::eval::{corpus_bleu, evaluate_bleu, DecodeConfig, SweepResult};
use adaptlab::experiment::{self, gradcheck, ExperimentConfig, SweepSelection};
use adaptlab::meta::{
    meta_gradient, meta_train, meta_train_model, Algorithm, MetaOptimizer, MetaTrainConfig, QuadraticFamily,
    QuadraticTask,
};
use adaptlab::model::{forward_loss, init_model, Batch, Mode, ParameterScope, TransformerConfig};
use adaptlab::optim::{lr_at, LrSchedule};
use adaptlab::tasks::{build_meta_dataset, sample_task, sweep_plan, Budgets, SplitSpec};
use adaptlab::train::{pretrain, PretrainConfig};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

/// 1: finite differences on the desk-size transformer in f64.
fn gradient_check() -> Outcome {
    let started = Instant::now();
    let cfg = ExperimentConfig::default();
    let (raws, vocab) = experiment::build_corpora(&cfg).map_err(err)?;
    let model = TransformerConfig::desk(vocab.len());
    let pairs = raws[0].tokenize(&vocab).map_err(err)?.pairs;
    let mut cfg = cfg;
    cfg.eval.gradcheck.samples = 64;
    let report = gradcheck(&cfg, &model, &pairs, false).map_err(err)?;
    let adapters = report.samples.iter().filter(|s| s.param.contains("adapter")).count();
    let secs = started.elapsed().as_secs_f64();
    check(
        report.max_rel_error < 1e-4 && report.samples.len() == 64 && adapters > 0 && secs < 120.0,
        format!(
            "max relative error {:.2e} over {} coordinates ({adapters} in adapters), {secs:.1} s",
            report.max_rel_error,
            report.samples.len()
        ),
    )
}

/// 2: closed forms and convergence on L(θ) = ½‖θ − c‖².
fn quadratic_oracle() -> Outcome {
    let theta = [0.7, -1.3, 2.0, 0.05];
    let center = [0.1, 0.4, -0.5, 3.0];
    let fam = QuadraticFamily::new(theta.len());
    let p = fam.params::<f64>(&theta);
    let view = ParamView::all(&p);
    let task = QuadraticTask {
        id: "q".into(),
        center: center.to_vec(),
    };
    let mut worst_fo = 0.0f64;
    let mut worst_ex = 0.0f64;
    for alpha in [0.01, 0.1, 0.5] {
        for (alg, power, worst) in [(Algorithm::FoMaml, 1, &mut worst_fo), (Algorithm::ExactMaml, 2, &mut worst_ex)] {
            let cfg = MetaTrainConfig {
                inner_alpha: alpha,
                algorithm: alg,
                ..MetaTrainConfig::default()
            };
            let (g, _) = meta_gradient(&fam, &p, &view, &[&task], &cfg, 0).map_err(err)?;
            for (k, got) in g.grads[0].data().iter().enumerate() {
                let want = (1.0 - alpha).powi(power) * (theta[k] - center[k]);
                *worst = worst.max((got - want).abs());
            }
        }
    }
    let mean = [1.5, -0.75, 0.25, 0.0];
    let tasks = fam.antithetic_tasks(&mean, 1.0, 8, 11);
    let start = fam.params::<f64>(&[0.0; 4]);
    let cfg = MetaTrainConfig {
        inner_alpha: 0.1,
        optimizer: MetaOptimizer::Sgd,
        meta_lr: 0.05,
        meta_batch_size: 16,
        epochs: 200,
        patience: Some(usize::MAX),
        ..MetaTrainConfig::default()
    };
    let started = Instant::now();
    let out = meta_train(&fam, &start, &ParamView::all(&start), &tasks, &[], &cfg, 3, true).map_err(err)?;
    let secs = started.elapsed().as_secs_f64();
    let dist = out.params.get(0).data().iter().zip(mean).map(|(t, m)| (t - m).abs()).fold(0.0, f64::max);
    check(
        worst_fo < 1e-10 && worst_ex < 1e-10 && dist < 1e-3 && secs < 5.0,
        format!("FoMAML error {worst_fo:.1e}, exact MAML error {worst_ex:.1e}, distance to mean centre {dist:.1e} after {secs:.2} s"),
    )
}

/// 3: adapters start as the identity, AdaptersOnly training leaves the
/// base untouched, and zeroing adapters restores the pretrained model.
fn adapter_invariants() -> Outcome {
    let started = Instant::now();
    let base = BaseLanguage::default();
    let general = synth_domain("general", &"copy".parse().map_err(err)?, &base, 400, 1).map_err(err)?;
    let domains: Vec<_> = (1..=3)
        .map(|i| synth_domain(&format!("d{i}"), &format!("lexicon:{i}").parse().unwrap(), &base, 400, 1).unwrap())
        .collect();
    let vocab = Vocabulary::build_word(general.lines().chain(domains.iter().flat_map(|d| d.lines()))).map_err(err)?;
    let gen = general.tokenize(&vocab).map_err(err)?;
    let corpora: Vec<_> = domains.iter().map(|d| d.tokenize(&vocab).unwrap()).collect();
    let cfg = TransformerConfig {
        model_dim: 16,
        ffn_dim: 32,
        adapter_hidden: Some(4),
        ..TransformerConfig::lab(vocab.len())
    };

    let fresh = init_model::<f32>(&cfg, 5).map_err(err)?;
    let plain = fresh.without_adapters();
    let mut identity = true;
    for (i, chunk) in gen.pairs.chunks(16).take(8).enumerate() {
        let batch = Batch::new(format!("b{i}"), chunk).map_err(err)?;
        let a = forward_loss(&fresh, &batch, Mode::Train, &mut ChaCha8Rng::seed_from_u64(i as u64)).map_err(err)?;
        let b = forward_loss(&plain, &batch, Mode::Train, &mut ChaCha8Rng::seed_from_u64(i as u64)).map_err(err)?;
        identity &= a.to_bits() == b.to_bits();
    }

    let pcfg = PretrainConfig {
        steps: 150,
        ..PretrainConfig::default()
    };
    let pre = pretrain(&fresh, &gen.pairs, &pcfg, None, 2, true).map_err(err)?.model;
    let split = SplitSpec {
        meta_train_domains: vec!["d1".into(), "d2".into()],
        meta_test_domains: vec!["d3".into()],
        train_tasks_per_domain: 3,
        train_budgets: Budgets {
            support_words: 60,
            query_words: 120,
        },
        ..SplitSpec::default()
    };
    let ds = build_meta_dataset(&corpora, &split, 4).map_err(err)?;
    let mcfg = MetaTrainConfig {
        inner_alpha: 0.1,
        epochs: 3,
        scope: ParameterScope::AdaptersOnly,
        ..MetaTrainConfig::default()
    };
    let (meta, _) = meta_train_model(&pre, &ds, &mcfg, None, 6, true).map_err(err)?;
    let frozen = meta.params.group_bit_identical(&pre.params, ParamGroup::Base);
    let moved = !meta.params.bit_identical(&pre.params);

    let decode = DecodeConfig::default();
    let probe = &gen.pairs[..40];
    let pre_bleu = evaluate_bleu(&pre, &vocab, probe, &decode).map_err(err)?.score;
    let ablated_bleu = evaluate_bleu(&meta.ablate_adapters(), &vocab, probe, &decode).map_err(err)?.score;
    let secs = started.elapsed().as_secs_f64();
    check(
        identity && frozen && moved && pre_bleu.to_bits() == ablated_bleu.to_bits() && secs < 60.0,
        format!(
            "identity at init {identity}, base frozen {frozen} (adapters moved {moved}), ablated BLEU {ablated_bleu:.2} vs pretrained {pre_bleu:.2}, {secs:.1} s"
        ),
    )
}

/// 4: hand-counted BLEU cases.
fn bleu_oracle() -> Outcome {
    let started = Instant::now();
    let perfect = corpus_bleu(&["the cat is on the mat"], &["the cat is on the mat"]).map_err(err)?;
    let clipped = corpus_bleu(&["the the the the the the the"], &["the cat is on the mat"]).map_err(err)?;
    let brevity = corpus_bleu(&["a b c d"], &["a b c d e"]).map_err(err)?;
    let secs = started.elapsed().as_secs_f64();
    check(
        perfect.score == 100.0 && clipped.precisions[0] == 2.0 / 7.0 && (brevity.score - 77.88).abs() < 0.01 && secs < 1.0,
        format!(
            "perfect {}, clipped p1 {:.6} (2/7 = {:.6}), brevity case {:.4}",
            perfect.score,
            clipped.precisions[0],
            2.0 / 7.0,
            brevity.score
        ),
    )
}

/// 5: warmup then inverse square root.
fn lr_schedule() -> Outcome {
    let s = LrSchedule::InverseSqrtWarmup {
        peak_rate: 7e-4,
        warmup_steps: 4000,
    };
    let (a, b, c) = (lr_at(&s, 4000), lr_at(&s, 2000), lr_at(&s, 16000));
    check(
        a == 7e-4 && b == 3.5e-4 && c == 3.5e-4,
        format!("lr(4000) = {a:e}, lr(2000) = {b:e}, lr(16000) = {c:e}"),
    )
}

/// 6: sampled tasks respect disjointness and budget windows, and the
/// fixed-total plan reproduces the task-count series.
fn task_properties() -> Outcome {
    let started = Instant::now();
    let base = BaseLanguage::default();
    let corpus = synth_domain("d", &"lexicon:1".parse().map_err(err)?, &base, 2000, 1).map_err(err)?;
    let vocab = Vocabulary::build_word(corpus.lines()).map_err(err)?;
    let corpus = corpus.tokenize(&vocab).map_err(err)?;
    let l_max = corpus.max_source_words();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut bad = 0usize;
    for k in 0..1000 {
        let (sb, qb) = (50 + (k % 7) * 40, 100 + (k % 5) * 60);
        let draw = sample_task(&corpus, sb, qb, &mut rng).map_err(err)?;
        let words = |idx: &[usize]| idx.iter().map(|&i| corpus.pairs[i].source_word_count).sum::<usize>();
        let (s, q) = (words(&draw.support), words(&draw.query));
        let disjoint = draw.support.iter().all(|i| !draw.query.contains(i));
        let in_window = (sb..sb + l_max).contains(&s) && (qb..qb + l_max).contains(&q);
        if !(disjoint && in_window) {
            bad += 1;
        }
    }
    let plan = sweep_plan(640_000, &[4000, 8000, 16000, 32000, 64000]).map_err(err)?;
    let counts: Vec<usize> = plan.iter().map(|&(_, n)| n).collect();
    let secs = started.elapsed().as_secs_f64();
    check(
        bad == 0 && counts == [160, 80, 40, 20, 10] && secs < 10.0,
        format!("{bad} of 1000 tasks violate disjointness or budget windows, plan {counts:?}, {secs:.2} s"),
    )
}

/// The default experiment through comparison, in `dir`.
fn pipeline(dir: &Path, seed: u64) -> Result<(ExperimentConfig, BTreeMap<Strategy, f64>), String> {
    let cfg = ExperimentConfig {
        seed,
        output_dir: dir.to_path_buf(),
        ..ExperimentConfig::default()
    };
    experiment::prepare(&cfg).map_err(err)?;
    experiment::make_tasks(&cfg).map_err(err)?;
    experiment::pretrain_stage(&cfg, false, true).map_err(err)?;
    experiment::meta_train_stage(&cfg, true).map_err(err)?;
    let (report, _) = experiment::compare_stage(&cfg, &Strategy::ALL).map_err(err)?;
    Ok((cfg, report.strategy_means()))
}

/// 7: D ≥ C ≥ B ≥ A on held-out lexicon-shift domains, D − B ≥ 1.
fn core_claim(root: &Path) -> Result<(String, Option<ExperimentConfig>), (String, Option<ExperimentConfig>)> {
    use Strategy::*;
    let started = Instant::now();
    let mut per_seed = Vec::new();
    let mut first = None;
    for seed in 0..3 {
        match pipeline(&root.join(format!("seed{seed}")), seed) {
            Ok((cfg, means)) => {
                first.get_or_insert(cfg);
                per_seed.push(means);
            }
            Err(e) => return Err((format!("seed {seed}: {e}"), first)),
        }
    }
    let mean = |s: Strategy| per_seed.iter().map(|m| m[&s]).sum::<f64>() / per_seed.len() as f64;
    let (a, b, c, d) = (mean(NoFineTune), mean(FineTuneOnTask), mean(FineTuneOnMetaTrainPool), mean(MetaMt));
    let seeds: Vec<String> = per_seed
        .iter()
        .map(|m| format!("{:.1}/{:.1}/{:.1}/{:.1}", m[&NoFineTune], m[&FineTuneOnTask], m[&FineTuneOnMetaTrainPool], m[&MetaMt]))
        .collect();
    let secs = started.elapsed().as_secs_f64();
    let detail = format!(
        "mean BLEU A {a:.2}, B {b:.2}, C {c:.2}, D {d:.2}; D − B {:+.2}; per seed A/B/C/D {}; {:.0} s",
        d - b,
        seeds.join(", "),
        secs
    );
    let ok = d >= c && c >= b && b >= a && d - b >= 1.0 && secs < 1800.0;
    if ok {
        Ok((detail, first))
    } else {
        Err((detail, first))
    }
}

/// Least-squares slope of `y` against log2 of size.
fn log_slope(points: &[(usize, f64)]) -> f64 {
    let xs: Vec<f64> = points.iter().map(|&(s, _)| (s as f64).log2()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let cov: f64 = xs.iter().zip(points).map(|(x, p)| (x - mx) * (p.1 - my)).sum();
    let var: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    cov / var
}

fn trend(result: &SweepResult, want_negative: bool) -> (usize, Vec<String>) {
    let adv = result.advantages(Strategy::MetaMt, Strategy::FineTuneOnTask);
    let mut hits = 0;
    let mut notes = Vec::new();
    for (seed, pts) in &adv {
        let slope = log_slope(pts);
        if (want_negative && slope < 0.0) || (!want_negative && slope >= 0.0) {
            hits += 1;
        }
        let series: Vec<String> = pts.iter().map(|(s, a)| format!("{s}:{a:+.1}")).collect();
        notes.push(format!("seed {seed} [{}] slope {slope:+.2}", series.join(" ")));
    }
    (hits, notes)
}

/// 8: D − B shrinks with support size at fixed total and does not fall
/// with query size, each in a majority of seeds.
fn trends(cfg: &ExperimentConfig) -> Outcome {
    let started = Instant::now();
    let (results, _) = experiment::sweep_stage(cfg, SweepSelection::Both, true).map_err(err)?;
    let (support_hits, support_notes) = trend(&results[0], true);
    let (query_hits, query_notes) = trend(&results[1], false);
    let seeds = cfg.eval.sweep.seeds.len();
    let secs = started.elapsed().as_secs_f64();
    check(
        2 * support_hits > seeds && 2 * query_hits > seeds && secs < 7200.0,
        format!(
            "advantage shrinks with support in {support_hits}/{seeds} seeds ({}); non-decreasing with query in {query_hits}/{seeds} seeds ({}); {secs:.0} s",
            support_notes.join("; "),
            query_notes.join("; ")
        ),
    )
}

/// 9: every CLI command twice in --deterministic mode, into two
/// directories; all artifacts must match byte for byte.
fn determinism(root: &Path) -> Outcome {
    let commands = ["prepare", "make-tasks", "pretrain", "meta-train", "adapt", "compare", "sweep", "gradcheck"];
    let mut snaps = Vec::new();
    for run in ["a", "b"] {
        let out = root.join(run);
        std::fs::create_dir_all(root).map_err(err)?;
        let cfg = common::write_config(&common::tiny_config(&out), &root.join(format!("{run}.json")));
        for c in commands {
            let o = common::cli(&["--config", cfg.to_str().unwrap(), "--deterministic", c]);
            if !o.status.success() {
                return Err(format!("`{c}` failed: {}", String::from_utf8_lossy(&o.stderr)));
            }
        }
        let mut snap = common::snapshot(&out);
        for (name, bytes) in &mut snap {
            if name == "resolved_config.json" {
                let text = String::from_utf8(bytes.clone()).unwrap();
                *bytes = text.replace(out.to_str().unwrap(), "<out>").into_bytes();
            }
        }
        snaps.push(snap);
    }
    let names: Vec<&str> = snaps[0].iter().map(|(n, _)| n.as_str()).collect();
    let differing: Vec<&str> = snaps[0]
        .iter()
        .zip(&snaps[1])
        .filter(|(x, y)| x != y)
        .map(|(x, _)| x.0.as_str())
        .collect();
    let checkpoints = names.iter().filter(|n| n.ends_with(".ckpt")).count();
    let manifests = names.iter().filter(|n| n.starts_with("tasks")).count();
    let reports = names.iter().filter(|n| n.starts_with("reports")).count();
    check(
        snaps[0].len() == snaps[1].len() && differing.is_empty() && checkpoints == 3 && manifests == 3,
        format!(
            "{} artifacts ({checkpoints} checkpoints, {manifests} manifests, {reports} reports), differing: {differing:?}",
            names.len()
        ),
    )
}

fn report(id: usize, name: &str, outcome: Outcome, failures: &mut usize) {
    match outcome {
        Ok(d) => println!("criterion {id} PASS {name}: {d}"),
        Err(d) => {
            *failures += 1;
            println!("criterion {id} FAIL {name}: {d}");
        }
    }
}

fn guarded(f: impl FnOnce() -> Outcome) -> Outcome {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    })
}

fn main() {
    let extended = std::env::var("ADAPTLAB_EXTENDED").is_ok_and(|v| v == "1");
    let dir = tempfile::tempdir().expect("temp dir");
    let root: PathBuf = dir.path().to_path_buf();
    let mut failures = 0;
    report(1, "gradient check", guarded(gradient_check), &mut failures);
    report(2, "quadratic meta-learning oracle", guarded(quadratic_oracle), &mut failures);
    report(3, "adapter invariants", guarded(adapter_invariants), &mut failures);
    report(4, "BLEU oracle", guarded(bleu_oracle), &mut failures);
    report(5, "learning-rate schedule", guarded(lr_schedule), &mut failures);
    report(6, "task sampling", guarded(task_properties), &mut failures);
    let mut seed0 = None;
    let claim = guarded(|| match core_claim(&root.join("claim")) {
        Ok((d, cfg)) => {
            seed0 = cfg;
            Ok(d)
        }
        Err((d, cfg)) => {
            seed0 = cfg;
            Err(d)
        }
    });
    report(7, "strategy ordering", claim, &mut failures);
    if extended {
        let outcome = match &seed0 {
            Some(cfg) => guarded(|| trends(cfg)),
            None => Err("needs the seed-0 pipeline from criterion 7".into()),
        };
        report(8, "support and query trends", outcome, &mut failures);
    } else {
        println!("criterion 8 SKIP support and query trends: extended, set ADAPTLAB_EXTENDED=1");
    }
    report(9, "determinism", guarded(|| determinism(&root.join("determinism"))), &mut failures);
    if failures > 0 {
        println!("{failures} criteria failed");
        std::process::exit(1);
    }
}
