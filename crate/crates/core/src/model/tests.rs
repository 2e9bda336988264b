use super::*;
use crate::autodiff::{FdCheck, GradientBundle};
use crate::corpus::{synth_domain, BaseLanguage, SentencePair, Vocabulary};

fn tiny(vocab: usize) -> TransformerConfig {
    TransformerConfig {
        encoder_blocks: 1,
        decoder_blocks: 1,
        model_dim: 16,
        ffn_dim: 32,
        heads: 2,
        dropout_rate: 0.1,
        adapter_hidden: Some(4),
        adapter_placement: AdapterPlacement::Block,
        vocab_size: vocab,
        max_positions: 32,
    }
}

fn pairs(n: usize) -> (Vocabulary, Vec<SentencePair>) {
    let raw = synth_domain("d", &"lexicon:1".parse().unwrap(), &BaseLanguage::default(), n, 2).unwrap();
    let vocab = Vocabulary::build_word(raw.lines()).unwrap();
    let c = raw.tokenize(&vocab).unwrap();
    (vocab, c.pairs)
}

fn rng() -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(0)
}

/// Random non-zero adapters, so adapter paths carry gradient.
fn with_live_adapters(m: &ModelParameters<f64>) -> ModelParameters<f64> {
    use rand::Rng;
    let mut out = m.clone();
    let mut r = ChaCha8Rng::seed_from_u64(77);
    for i in 0..out.params.len() {
        if out.params.group(i) == ParamGroup::Adapter {
            for x in out.params.get_mut(i).data_mut() {
                *x += r.random_range(-0.2..0.2);
            }
        }
    }
    out
}

#[test]
fn fresh_adapters_are_the_identity() {
    let (vocab, ps) = pairs(8);
    for placement in [AdapterPlacement::Block, AdapterPlacement::Sublayer] {
        let cfg = TransformerConfig {
            adapter_placement: placement,
            ..tiny(vocab.len())
        };
        let m = init_model::<f32>(&cfg, 3).unwrap();
        let base = m.without_adapters();
        assert_eq!(base.adapter_parameter_count(), 0);
        let batch = Batch::new("b", &ps).unwrap();
        let a = forward_loss(&m, &batch, Mode::Eval, &mut rng()).unwrap();
        let b = forward_loss(&base, &batch, Mode::Eval, &mut rng()).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
        let a = forward_loss(&m, &batch, Mode::Train, &mut rng()).unwrap();
        let b = forward_loss(&base, &batch, Mode::Train, &mut rng()).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
        let src = &ps[0].source;
        assert_eq!(beam_decode(&m, src, 3, 10).unwrap(), beam_decode(&base, src, 3, 10).unwrap());
    }
}

#[test]
fn init_is_deterministic() {
    let cfg = tiny(40);
    let a = init_model::<f32>(&cfg, 5).unwrap();
    let b = init_model::<f32>(&cfg, 5).unwrap();
    let c = init_model::<f32>(&cfg, 6).unwrap();
    assert!(a.params.bit_identical(&b.params));
    assert!(!a.params.bit_identical(&c.params));
}

#[test]
fn uniform_logits_give_log_vocab() {
    let (vocab, ps) = pairs(4);
    let mut m = init_model::<f64>(&tiny(vocab.len()), 1).unwrap();
    let e = m.layout().embedding;
    let (r, c) = m.params.get(e).shape();
    m.params.replace(e, Matrix::zeros(r, c)).unwrap();
    let loss = forward_loss(&m, &Batch::new("b", &ps).unwrap(), Mode::Eval, &mut rng()).unwrap();
    assert!((loss - (vocab.len() as f64).ln()).abs() < 1e-3);
}

#[test]
fn eval_mode_is_pure_and_train_mode_drops() {
    let (vocab, ps) = pairs(6);
    let m = init_model::<f32>(&tiny(vocab.len()), 1).unwrap();
    let batch = Batch::new("b", &ps).unwrap();
    let e1 = forward_loss(&m, &batch, Mode::Eval, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let e2 = forward_loss(&m, &batch, Mode::Eval, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    assert_eq!(e1.to_bits(), e2.to_bits());
    let t = forward_loss(&m, &batch, Mode::Train, &mut rng()).unwrap();
    assert_ne!(t.to_bits(), e1.to_bits());

    let mut cfg = tiny(vocab.len());
    cfg.dropout_rate = 0.0;
    let m = init_model::<f32>(&cfg, 1).unwrap();
    let e = forward_loss(&m, &batch, Mode::Eval, &mut rng()).unwrap();
    let t = forward_loss(&m, &batch, Mode::Train, &mut rng()).unwrap();
    assert_eq!(e.to_bits(), t.to_bits());
}

#[test]
fn adapter_forward_cases() {
    let one = |v: f64| Matrix::from_vec(1, 1, vec![v]).unwrap();
    let a = AdapterWeights {
        down: one(1.0),
        down_bias: one(-1.0),
        up: one(3.0),
        up_bias: one(0.0),
    };
    assert_eq!(adapter_forward(&one(2.0), &a).unwrap().data(), &[5.0]);
    let a = AdapterWeights { down_bias: one(0.0), ..a };
    assert_eq!(adapter_forward(&one(-2.0), &a).unwrap().data(), &[-2.0]);
    let identity = AdapterWeights {
        up: one(0.0),
        ..a.clone()
    };
    assert_eq!(adapter_forward(&one(0.7), &identity).unwrap().data(), &[0.7]);
    let wide = Matrix::<f64>::zeros(2, 3);
    assert!(matches!(adapter_forward(&wide, &a), Err(Error::Shape(_))));
}

#[test]
fn scopes_partition_parameters() {
    let m = init_model::<f32>(&tiny(40), 1).unwrap();
    let ad = partition_view(&m, ParameterScope::AdaptersOnly).unwrap();
    let base = partition_view(&m, ParameterScope::BaseOnly).unwrap();
    let all = partition_view(&m, ParameterScope::AllParameters).unwrap();
    assert_eq!(ad.element_count(&m.params), m.adapter_parameter_count());
    assert_eq!(ad.len() + base.len(), all.len());
    assert!(ad.indices().iter().all(|i| !base.contains(*i)));
    let bare = m.without_adapters();
    assert!(matches!(partition_view(&bare, ParameterScope::AdaptersOnly), Err(Error::Scope(_))));
}

#[test]
fn full_scale_adapter_fraction() {
    let (base, adapter) = parameter_counts(&TransformerConfig::full_scale());
    let frac = adapter as f64 / (base + adapter) as f64;
    assert!(frac > 0.003 && frac < 0.015, "{frac}");
    // 12 blocks of 512→32→512 with biases
    assert_eq!(adapter, 12 * (512 * 32 + 32 + 32 * 512 + 512));
}

#[test]
fn adapters_only_gradient_step_leaves_base_untouched() {
    let (vocab, ps) = pairs(6);
    let m = with_live_adapters(&init_model::<f64>(&tiny(vocab.len()), 1).unwrap());
    let view = partition_view(&m, ParameterScope::AdaptersOnly).unwrap();
    let g = loss_and_grad(&m, &view, &Batch::new("b", &ps).unwrap(), Mode::Train, &mut rng()).unwrap();
    assert!(!g.is_zero());
    let mut next = m.clone();
    for (&i, gr) in g.indices.iter().zip(&g.grads) {
        next.params.get_mut(i).add_scaled(gr, -0.1);
    }
    assert!(next.params.group_bit_identical(&m.params, ParamGroup::Base));
    assert!(!next.params.group_bit_identical(&m.params, ParamGroup::Adapter));
    for i in 0..m.params.len() {
        if m.params.group(i) == ParamGroup::Base {
            assert!(next.params.shares_storage(&m.params, i));
        }
    }
}

#[test]
fn batch_id_names_the_failing_batch() {
    let (vocab, ps) = pairs(4);
    let mut m = init_model::<f32>(&tiny(vocab.len()), 1).unwrap();
    m.params.get_mut(m.layout().embedding).data_mut()[vocab.len() + 3] = f32::NAN;
    m.params.get_mut(m.layout().embedding).data_mut().fill(f32::NAN);
    let err = forward_loss(&m, &Batch::new("task-7/0", &ps).unwrap(), Mode::Eval, &mut rng()).unwrap_err();
    assert!(matches!(err, Error::Numerical { .. }));
    assert!(err.to_string().contains("task-7/0"), "{err}");
    let view = ParamView::all(&m.params);
    let err = loss_and_grad(&m, &view, &Batch::new("task-7/1", &ps).unwrap(), Mode::Eval, &mut rng()).unwrap_err();
    assert!(err.to_string().contains("task-7/1"), "{err}");
}

#[test]
fn out_of_range_tokens_are_shape_errors() {
    let (vocab, mut ps) = pairs(2);
    let m = init_model::<f32>(&tiny(vocab.len()), 1).unwrap();
    ps[0].source[0] = 999;
    assert!(matches!(
        forward_loss(&m, &Batch::new("b", &ps).unwrap(), Mode::Eval, &mut rng()),
        Err(Error::Shape(_))
    ));
    assert!(matches!(Batch::new("b", &[]), Err(Error::EmptyBatch)));
}

#[test]
fn transformer_gradients_match_finite_differences() {
    let (vocab, ps) = pairs(3);
    let mut cfg = tiny(vocab.len());
    cfg.adapter_placement = AdapterPlacement::Sublayer;
    let m = with_live_adapters(&init_model::<f64>(&cfg, 2).unwrap());
    let batch = Batch::new("b", &ps).unwrap();
    let view = ParamView::all(&m.params);
    let loss = loss_builder(&m, &batch, Mode::Train, 8);
    let report = FdCheck::new(1e-4, 64, 3).run(&m.params, &view, &loss).unwrap();
    assert!(report.max_rel_error < 1e-4, "{}", report.to_table());
    let g = loss_and_grad(&m, &view, &batch, Mode::Train, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
    let mut bad: GradientBundle<f64> = g.clone();
    for gr in &mut bad.grads {
        *gr = gr.scale(-1.0);
    }
    let report = FdCheck::new(1e-4, 64, 3).compare(&m.params, &view, &bad, &loss).unwrap();
    assert!(report.max_rel_error > 0.5);
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let mut m = init_model::<f32>(&tiny(40), 4).unwrap();
    m.kind = CheckpointKind::Pretrained;
    m.counters.pretrain_steps = 17;
    save_checkpoint(&m, &path).unwrap();
    let back: ModelParameters<f32> = load_checkpoint(&path).unwrap();
    assert!(back.params.bit_identical(&m.params));
    assert_eq!(back.config, m.config);
    assert_eq!(back.kind, CheckpointKind::Pretrained);
    assert_eq!(back.counters.pretrain_steps, 17);
    let wide: ModelParameters<f64> = load_checkpoint(&path).unwrap();
    assert!(wide.cast::<f32>().params.bit_identical(&m.params));

    let mut bytes = std::fs::read(&path).unwrap();
    bytes[0] = b'X';
    assert!(matches!(Checkpoint::<f32>::from_bytes(&bytes), Err(Error::Checkpoint(_))));
    let mut bytes = std::fs::read(&path).unwrap();
    bytes[8] = 9;
    assert!(matches!(Checkpoint::<f32>::from_bytes(&bytes), Err(Error::Checkpoint(_))));
    let bytes = std::fs::read(&path).unwrap();
    assert!(matches!(Checkpoint::<f32>::from_bytes(&bytes[..bytes.len() - 3]), Err(Error::Checkpoint(_))));
}

#[test]
fn ablation_survives_persistence() {
    let (vocab, ps) = pairs(6);
    let fresh = init_model::<f64>(&tiny(vocab.len()), 1).unwrap();
    let trained = with_live_adapters(&fresh);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    save_checkpoint(&trained, &path).unwrap();
    let back: ModelParameters<f64> = load_checkpoint(&path).unwrap();
    let batch = Batch::new("b", &ps).unwrap();
    let ablated = forward_loss(&back.ablate_adapters(), &batch, Mode::Eval, &mut rng()).unwrap();
    let base = forward_loss(&fresh.without_adapters(), &batch, Mode::Eval, &mut rng()).unwrap();
    let live = forward_loss(&back, &batch, Mode::Eval, &mut rng()).unwrap();
    assert_eq!(ablated.to_bits(), base.to_bits());
    assert_ne!(live.to_bits(), base.to_bits());
}

#[test]
fn decoding_respects_limits() {
    let (vocab, ps) = pairs(2);
    let m = init_model::<f32>(&tiny(vocab.len()), 1).unwrap();
    let out = beam_decode(&m, &ps[0].source, 2, 1).unwrap();
    assert!(out.len() <= 1);
    let out = beam_decode(&m, &ps[0].source, 5, 1000).unwrap();
    assert!(out.len() <= m.config.max_positions);
    assert_eq!(out, beam_decode(&m, &ps[0].source, 5, 1000).unwrap());
}
