use super::*;
use crate::corpus::{synth_domain, BaseLanguage, Vocabulary};
use crate::model::{init_model, partition_view, AdapterPlacement, ModelParameters, TransformerConfig};
use crate::tasks::{build_meta_dataset, Budgets, MetaDataset, SplitSpec};

fn quad_cfg(algorithm: Algorithm, alpha: f64) -> MetaTrainConfig {
    MetaTrainConfig {
        inner_alpha: alpha,
        algorithm,
        optimizer: MetaOptimizer::Sgd,
        ..MetaTrainConfig::default()
    }
}

fn one_task(c: &[f64]) -> QuadraticTask {
    QuadraticTask {
        id: "q".into(),
        center: c.to_vec(),
    }
}

fn grad_of(algorithm: Algorithm, alpha: f64, steps: usize, theta: &[f64], c: &[f64]) -> Vec<f64> {
    let fam = QuadraticFamily::new(theta.len());
    let p = fam.params::<f64>(theta);
    let view = ParamView::all(&p);
    let cfg = MetaTrainConfig {
        inner_steps: steps,
        ..quad_cfg(algorithm, alpha)
    };
    let t = one_task(c);
    let (g, _) = meta_gradient(&fam, &p, &view, &[&t], &cfg, 0).unwrap();
    g.grads[0].data().to_vec()
}

const THETA: [f64; 3] = [0.7, -1.3, 2.0];
const C: [f64; 3] = [0.1, 0.4, -0.5];

#[test]
fn fomaml_meta_gradient_closed_form() {
    for alpha in [0.01, 0.3, 0.9] {
        let g = grad_of(Algorithm::FoMaml, alpha, 1, &THETA, &C);
        for k in 0..3 {
            assert!((g[k] - (1.0 - alpha) * (THETA[k] - C[k])).abs() < 1e-10);
        }
    }
}

#[test]
fn exact_maml_closed_form_and_ratio() {
    for alpha in [0.01, 0.3] {
        let fo = grad_of(Algorithm::FoMaml, alpha, 1, &THETA, &C);
        let ex = grad_of(Algorithm::ExactMaml, alpha, 1, &THETA, &C);
        for k in 0..3 {
            assert!((ex[k] - (1.0 - alpha).powi(2) * (THETA[k] - C[k])).abs() < 1e-10);
            assert!((ex[k] - (1.0 - alpha) * fo[k]).abs() < 1e-10);
        }
        let ex3 = grad_of(Algorithm::ExactMaml, alpha, 3, &THETA, &C);
        for k in 0..3 {
            assert!((ex3[k] - (1.0 - alpha).powi(6) * (THETA[k] - C[k])).abs() < 1e-10);
        }
    }
}

#[test]
fn reptile_direction_closed_form() {
    let alpha = 0.2;
    let g = grad_of(Algorithm::Reptile, alpha, 1, &THETA, &C);
    for k in 0..3 {
        assert!((g[k] - alpha * (THETA[k] - C[k])).abs() < 1e-12);
    }
}

#[test]
fn fomaml_batch_sums_and_reptile_averages() {
    let fam = QuadraticFamily::new(1);
    let p = fam.params::<f64>(&[1.0]);
    let view = ParamView::all(&p);
    let (a, b) = (one_task(&[0.0]), one_task(&[-1.0]));
    let alpha = 0.5;
    let (g, recs) = meta_gradient(&fam, &p, &view, &[&a, &b], &quad_cfg(Algorithm::FoMaml, alpha), 0).unwrap();
    assert!((g.grads[0].data()[0] - (1.0 - alpha) * (1.0 + 2.0)).abs() < 1e-12);
    assert_eq!(recs.len(), 2);
    let (g, _) = meta_gradient(&fam, &p, &view, &[&a, &b], &quad_cfg(Algorithm::Reptile, alpha), 0).unwrap();
    assert!((g.grads[0].data()[0] - alpha * 1.5).abs() < 1e-12);
    assert!(matches!(
        meta_gradient(&fam, &p, &view, &[], &quad_cfg(Algorithm::FoMaml, alpha), 0),
        Err(Error::EmptyBatch)
    ));
}

#[test]
fn zero_query_gradient_leaves_theta_unchanged() {
    let fam = QuadraticFamily::new(2);
    let mut p = fam.params::<f64>(&[0.5, 0.5]);
    let view = ParamView::all(&p);
    let cfg = MetaTrainConfig {
        optimizer: MetaOptimizer::Adam,
        ..quad_cfg(Algorithm::FoMaml, 0.1)
    };
    let mut state = MetaOptState::new(&p, &view, &cfg);
    let off = one_task(&[0.0, 0.0]);
    meta_step(&fam, &mut p, &view, &[&off], &cfg, &mut state, 1, 0).unwrap();
    let before = p.clone();
    let here = one_task(&[p.get(0).data()[0], p.get(0).data()[1]]);
    meta_step(&fam, &mut p, &view, &[&here], &cfg, &mut state, 2, 0).unwrap();
    assert!(p.bit_identical(&before));
}

fn converge(algorithm: Algorithm, optimizer: MetaOptimizer, meta_lr: f64, batch: usize, epochs: usize) -> Vec<f64> {
    let mean = [1.5, -0.75, 0.25];
    let fam = QuadraticFamily::new(3);
    let tasks = fam.antithetic_tasks(&mean, 1.0, 8, 11);
    let p = fam.params::<f64>(&[0.0, 0.0, 0.0]);
    let view = ParamView::all(&p);
    let cfg = MetaTrainConfig {
        inner_alpha: 0.1,
        algorithm,
        optimizer,
        meta_lr,
        meta_batch_size: batch,
        epochs,
        patience: Some(usize::MAX),
        ..MetaTrainConfig::default()
    };
    let out = meta_train(&fam, &p, &view, &tasks, &[], &cfg, 3, true).unwrap();
    out.params
        .get(0)
        .data()
        .iter()
        .zip(mean)
        .map(|(t, m)| (t - m).abs())
        .collect()
}

#[test]
fn quadratic_family_converges_to_mean_center() {
    // Reptile averages over the batch where the others sum, hence its rate
    for (alg, lr) in [(Algorithm::FoMaml, 0.05), (Algorithm::ExactMaml, 0.05), (Algorithm::Reptile, 1.0)] {
        let err = converge(alg, MetaOptimizer::Sgd, lr, 16, 200);
        assert!(err.iter().all(|&e| e < 1e-3), "{alg:?}: {err:?}");
    }
}

#[test]
fn stochastic_adam_reaches_mean_center() {
    let err = converge(Algorithm::FoMaml, MetaOptimizer::Adam, 1e-3, 16, 4000);
    assert!(err.iter().all(|&e| e < 1e-3), "{err:?}");
}

#[test]
fn zero_epochs_returns_initial() {
    let fam = QuadraticFamily::new(1);
    let p = fam.params::<f64>(&[4.0]);
    let view = ParamView::all(&p);
    let cfg = MetaTrainConfig {
        epochs: 0,
        ..quad_cfg(Algorithm::FoMaml, 0.1)
    };
    let out = meta_train(&fam, &p, &view, &[one_task(&[0.0])], &[], &cfg, 0, true).unwrap();
    assert!(out.params.bit_identical(&p));
    assert_eq!(out.meta_steps, 0);
    assert!(meta_train(&fam, &p, &view, &[], &[], &cfg, 0, true).is_err());
}

#[test]
fn selection_never_worse_than_epoch_zero() {
    let fam = QuadraticFamily::new(1);
    let p = fam.params::<f64>(&[0.0]);
    let view = ParamView::all(&p);
    // training pulls θ towards 5, validation wants 0
    let cfg = MetaTrainConfig {
        epochs: 3,
        ..quad_cfg(Algorithm::FoMaml, 0.1)
    };
    let out = meta_train(&fam, &p, &view, &[one_task(&[5.0])], &[one_task(&[0.0])], &cfg, 0, true).unwrap();
    assert_eq!(out.log.selected_epoch, 0);
    assert!(out.params.bit_identical(&p));
    assert_eq!(out.log.epochs.len(), 4);
    assert!(out.log.epochs[0].selected);
}

#[test]
fn reptile_stops_early() {
    let fam = QuadraticFamily::new(1);
    let p = fam.params::<f64>(&[0.0]);
    let view = ParamView::all(&p);
    let cfg = MetaTrainConfig {
        epochs: 10,
        ..quad_cfg(Algorithm::Reptile, 0.1)
    };
    let out = meta_train(&fam, &p, &view, &[one_task(&[5.0])], &[one_task(&[0.0])], &cfg, 0, true).unwrap();
    assert_eq!(out.log.epochs.len(), 3);
}

#[test]
fn config_validation() {
    for c in [
        MetaTrainConfig { inner_steps: 0, ..Default::default() },
        MetaTrainConfig { meta_batch_size: 0, ..Default::default() },
        MetaTrainConfig { inner_alpha: 0.0, ..Default::default() },
    ] {
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }
    let c: MetaTrainConfig = serde_json::from_str(r#"{"algorithm": "fomaml", "scope": "all_parameters"}"#).unwrap();
    assert_eq!(c.scope, ParameterScope::AllParameters);
    assert_eq!(c.inner_alpha, 0.01);
}

fn tiny_setup() -> (ModelParameters<f64>, MetaDataset, Vocabulary) {
    let base = BaseLanguage::default();
    let raws: Vec<_> = ["lexicon:1:40", "lexicon:2:40"]
        .iter()
        .enumerate()
        .map(|(i, s)| synth_domain(&format!("d{i}"), &s.parse().unwrap(), &base, 80, 5).unwrap())
        .collect();
    let vocab = Vocabulary::build_word(raws.iter().flat_map(|r| r.lines())).unwrap();
    let corpora: Vec<_> = raws.iter().map(|r| r.tokenize(&vocab).unwrap()).collect();
    let spec = SplitSpec {
        train_tasks_per_domain: 2,
        train_budgets: Budgets {
            support_words: 30,
            query_words: 40,
        },
        ..SplitSpec::default()
    };
    let ds = build_meta_dataset(&corpora, &spec, 9).unwrap();
    let cfg = TransformerConfig {
        encoder_blocks: 1,
        decoder_blocks: 1,
        model_dim: 16,
        ffn_dim: 32,
        heads: 2,
        dropout_rate: 0.1,
        adapter_hidden: Some(4),
        adapter_placement: AdapterPlacement::Block,
        vocab_size: vocab.len(),
        max_positions: 32,
    };
    (init_model(&cfg, 4).unwrap(), ds, vocab)
}

#[test]
fn fomaml_matches_explicit_two_pass() {
    let (model, ds, _) = tiny_setup();
    let cfg = MetaTrainConfig {
        scope: ParameterScope::AllParameters,
        inner_alpha: 0.05,
        ..MetaTrainConfig::default()
    };
    let view = partition_view(&model, cfg.scope).unwrap();
    let obj = TranslationObjective::new(&model);
    let task = &ds.meta_train[0];
    let (g, recs) = meta_gradient(&obj, &model.params, &view, &[task], &cfg, 17).unwrap();

    let task_seed = derive_seed(17, &task.task_id);
    let mut theta = model.params.clone();
    let sg = obj.support_grad(&theta, &view, task, derive_seed(task_seed, "inner/0")).unwrap();
    sgd_step(&mut theta, &view, &sg, 0.05).unwrap();
    let qg = obj.query_grad(&theta, &view, task).unwrap();
    for (a, b) in g.grads.iter().zip(&qg.grads) {
        assert_eq!(a.data(), b.data());
    }
    assert_eq!(recs[0].query_loss, qg.loss);
    assert!(recs[0].support_loss_post < recs[0].support_loss_pre);
}

#[test]
fn exact_maml_rejected_on_translation() {
    let (model, ds, _) = tiny_setup();
    let cfg = MetaTrainConfig {
        algorithm: Algorithm::ExactMaml,
        ..MetaTrainConfig::default()
    };
    let err = meta_train_model(&model, &ds, &cfg, None, 0, true).unwrap_err();
    assert!(matches!(err.root(), Error::Config(_)), "{err}");
    assert!(matches!(err, Error::InTask { .. }));
}

#[test]
fn adapters_only_meta_training_freezes_base_and_is_deterministic() {
    let (model, ds, _) = tiny_setup();
    let cfg = MetaTrainConfig {
        epochs: 2,
        meta_lr: 1e-2,
        ..MetaTrainConfig::default()
    };
    let (a, log_a) = meta_train_model(&model, &ds, &cfg, None, 1, true).unwrap();
    let (b, log_b) = meta_train_model(&model, &ds, &cfg, None, 1, true).unwrap();
    assert!(a.params.group_bit_identical(&model.params, crate::autodiff::ParamGroup::Base));
    assert!(!a.params.bit_identical(&model.params) || log_a.selected_epoch == 0);
    assert_eq!(log_a, log_b);
    assert!(a.params.bit_identical(&b.params));
    assert_eq!(log_a.records.len(), 2 * ds.meta_train.len());
    assert!(log_a.records.windows(2).all(|w| w[0].step < w[1].step));
    assert_eq!(a.counters.meta_steps, 2 * ds.meta_train.len() as u64);
    let csv = log_a.to_csv().unwrap();
    assert!(csv.starts_with("step,task_id,support_loss_pre,support_loss_post,query_loss,lr,elapsed_ms\n"));
    assert!(log_a.records.iter().all(|r| r.elapsed_ms == 0));
}

#[test]
fn parallel_meta_batch_matches_sequential() {
    let (model, ds, _) = tiny_setup();
    let base = MetaTrainConfig {
        epochs: 1,
        meta_batch_size: 2,
        meta_lr: 1e-2,
        ..MetaTrainConfig::default()
    };
    let par = MetaTrainConfig { parallel: true, ..base.clone() };
    let (a, la) = meta_train_model(&model, &ds, &base, None, 2, true).unwrap();
    let (b, lb) = meta_train_model(&model, &ds, &par, None, 2, true).unwrap();
    assert!(a.params.bit_identical(&b.params));
    assert_eq!(la, lb);
}

#[test]
fn bleu_selection_keeps_initial_when_nothing_helps() {
    let (model, ds, vocab) = tiny_setup();
    let cfg = MetaTrainConfig {
        epochs: 1,
        selection: Selection::Bleu,
        ..MetaTrainConfig::default()
    };
    let decode = crate::eval::DecodeConfig { beam_size: 1, max_extra: 2 };
    let (_, log) = meta_train_model(&model, &ds, &cfg, Some((&vocab, decode)), 0, true).unwrap();
    let best = log.epochs.iter().map(|e| e.metric).fold(f64::INFINITY, f64::min);
    assert!(log.epochs[log.selected_epoch].metric <= log.epochs[0].metric);
    assert_eq!(log.epochs[log.selected_epoch].metric, best);
}
