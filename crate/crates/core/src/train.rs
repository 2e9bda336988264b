//! Supervised training loops: pretraining on general-domain data and
//! fine-tuning on support sets or pooled task data.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::ParamView;
use crate::corpus::SentencePair;
use crate::error::{Error, Result};
use crate::meta::MetaOptimizer;
use crate::model::{forward_loss, loss_and_grad, partition_view, Batch, Checkpoint, CheckpointKind, Mode, ModelParameters, ParameterScope};
use crate::optim::{adam_step, lr_at, sgd_step, AdamConfig, AdamState, LrSchedule};
use crate::seed::derive_seed;
use crate::tensor::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub steps: u64,
    pub batch_sentences: usize,
    pub schedule: LrSchedule,
    pub adam: AdamConfig,
    pub scope: ParameterScope,
    /// Write a metrics row every this many steps.
    pub log_every: u64,
    /// The CLI saves a checkpoint every this many steps (0: only at the end).
    pub checkpoint_every: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            steps: 1500,
            batch_sentences: 32,
            schedule: LrSchedule::InverseSqrtWarmup {
                peak_rate: 3e-3,
                warmup_steps: 200,
            },
            adam: AdamConfig::default(),
            scope: ParameterScope::BaseOnly,
            log_every: 50,
            checkpoint_every: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub step: u64,
    pub epoch: u64,
    pub loss: f64,
    pub lr: f64,
    pub elapsed_ms: u64,
}

/// Batch `step` (1-based) of an endless sequence of shuffled epochs. The
/// order depends only on the seed and the step, so a resumed run sees the
/// same data as an uninterrupted one.
fn batch_for_step(pairs: &[SentencePair], batch: usize, step: u64, seed: u64, label: &str) -> Result<(u64, Batch)> {
    let per_epoch = pairs.len().div_ceil(batch) as u64;
    let epoch = (step - 1) / per_epoch;
    let k = ((step - 1) % per_epoch) as usize;
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("{label}/epoch/{epoch}"))));
    let chosen = order.iter().skip(k * batch).take(batch).map(|&i| &pairs[i]);
    Ok((epoch, Batch::new(format!("{label}/{step}"), chosen)?))
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome<T> {
    pub model: ModelParameters<T>,
    pub adam: AdamState<T>,
    pub records: Vec<TrainRecord>,
}

/// Adam with the configured schedule until `model.counters.pretrain_steps`
/// reaches `config.steps`. Pass the optimizer state of an earlier run to
/// resume it.
pub fn pretrain<T: Scalar>(
    model: &ModelParameters<T>,
    pairs: &[SentencePair],
    config: &PretrainConfig,
    resume: Option<AdamState<T>>,
    seed: u64,
    deterministic: bool,
) -> Result<PretrainOutcome<T>> {
    config.schedule.validate()?;
    if pairs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if config.batch_sentences == 0 {
        return Err(Error::Config("pretrain: batch_sentences must be positive".into()));
    }
    let view = partition_view(model, config.scope)?;
    let mut out = model.clone();
    let mut adam = match resume {
        Some(s) => {
            if s.indices != view.indices() {
                return Err(Error::Checkpoint("optimizer state does not match the pretraining scope".into()));
            }
            s
        }
        None => AdamState::new(&out.params, &view, config.adam),
    };
    let t0 = Instant::now();
    let mut records = Vec::new();
    while out.counters.pretrain_steps < config.steps {
        let step = out.counters.pretrain_steps + 1;
        let (epoch, batch) = batch_for_step(pairs, config.batch_sentences, step, seed, "pretrain")?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("pretrain/dropout/{step}")));
        let g = loss_and_grad(&out, &view, &batch, Mode::Train, &mut rng)?;
        let lr = lr_at(&config.schedule, step);
        adam_step(&mut adam, &mut out.params, &view, &g, lr)?;
        out.counters.pretrain_steps = step;
        if step % config.log_every.max(1) == 0 || step == config.steps {
            records.push(TrainRecord {
                step,
                epoch,
                loss: g.loss.f64(),
                lr,
                elapsed_ms: if deterministic { 0 } else { t0.elapsed().as_millis() as u64 },
            });
        }
    }
    if out.counters.pretrain_steps > 0 {
        out.kind = CheckpointKind::Pretrained;
    }
    Ok(PretrainOutcome { model: out, adam, records })
}

/// Checkpoint carrying the Adam moments needed to resume pretraining.
pub fn pretrain_checkpoint<T: Scalar>(outcome: &PretrainOutcome<T>) -> Checkpoint<T> {
    let mut c = Checkpoint::new(outcome.model.clone());
    c.aux = outcome.adam.to_named(&outcome.model.params);
    c.aux_meta = serde_json::json!({ "adam_step": outcome.adam.step, "adam": outcome.adam.config });
    c
}

/// Recovers the optimizer state saved by [`pretrain_checkpoint`], if any.
pub fn resume_state<T: Scalar>(checkpoint: &Checkpoint<T>, scope: ParameterScope) -> Result<Option<AdamState<T>>> {
    if checkpoint.aux.is_empty() {
        return Ok(None);
    }
    let meta = &checkpoint.aux_meta;
    let step = meta["adam_step"]
        .as_u64()
        .ok_or_else(|| Error::Checkpoint("optimizer state without `adam_step`".into()))?;
    let config: AdamConfig = serde_json::from_value(meta["adam"].clone())?;
    let view = partition_view(&checkpoint.model, scope)?;
    AdamState::from_named(&checkpoint.model.params, &view, config, step, &checkpoint.aux).map(Some)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FineTuneConfig {
    pub epochs: usize,
    pub optimizer: MetaOptimizer,
    /// SGD rate, or Adam peak rate.
    pub lr: f64,
    /// Linear warmup for Adam; 0 keeps the rate constant.
    pub warmup_steps: u64,
    /// Sentences per update; 0 means the whole set at once.
    pub batch_sentences: usize,
    pub scope: ParameterScope,
    pub adam: AdamConfig,
}

impl Default for FineTuneConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            optimizer: MetaOptimizer::Sgd,
            lr: 0.5,
            warmup_steps: 0,
            batch_sentences: 8,
            scope: ParameterScope::AdaptersOnly,
            adam: AdamConfig::default(),
        }
    }
}

impl FineTuneConfig {
    fn schedule(&self) -> LrSchedule {
        if self.warmup_steps == 0 {
            LrSchedule::Constant { rate: self.lr }
        } else {
            LrSchedule::InverseSqrtWarmup {
                peak_rate: self.lr,
                warmup_steps: self.warmup_steps,
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct FineTuneOutcome<T> {
    pub model: ModelParameters<T>,
    pub steps: u64,
    /// Mean training loss of each epoch, as seen during the epoch.
    pub epoch_losses: Vec<f64>,
}

/// Fixed-budget fine-tuning within `config.scope`, no early stopping.
pub fn fine_tune<T: Scalar>(
    model: &ModelParameters<T>,
    pairs: &[SentencePair],
    config: &FineTuneConfig,
    seed: u64,
) -> Result<FineTuneOutcome<T>> {
    if config.epochs > 0 && pairs.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if config.epochs > 0 && !(config.lr > 0.0) {
        return Err(Error::Config("fine-tune: lr must be positive".into()));
    }
    let view: ParamView = partition_view(model, config.scope)?;
    let mut out = model.clone();
    let mut adam = AdamState::new(&out.params, &view, config.adam);
    let schedule = config.schedule();
    let batch = if config.batch_sentences == 0 { pairs.len().max(1) } else { config.batch_sentences };
    let per_epoch = pairs.len().div_ceil(batch) as u64;
    let mut step = 0;
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        let mut total = 0.0;
        for _ in 0..per_epoch {
            step += 1;
            let (_, b) = batch_for_step(pairs, batch, step, seed, "finetune")?;
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("finetune/dropout/{step}")));
            let g = loss_and_grad(&out, &view, &b, Mode::Train, &mut rng)?;
            total += g.loss.f64();
            let lr = lr_at(&schedule, step);
            match config.optimizer {
                MetaOptimizer::Sgd => sgd_step(&mut out.params, &view, &g, lr)?,
                MetaOptimizer::Adam => adam_step(&mut adam, &mut out.params, &view, &g, lr)?,
            }
        }
        epoch_losses.push(total / per_epoch as f64);
    }
    out.counters.finetune_steps += step;
    if step > 0 {
        out.kind = CheckpointKind::FineTuned;
    }
    Ok(FineTuneOutcome {
        model: out,
        steps: step,
        epoch_losses,
    })
}

/// Mean Eval-mode loss over `pairs` in batches.
pub fn dataset_loss<T: Scalar>(model: &ModelParameters<T>, pairs: &[SentencePair], batch: usize) -> Result<f64> {
    let mut total = 0.0;
    let mut tokens = 0usize;
    for (k, chunk) in pairs.chunks(batch.max(1)).enumerate() {
        let b = Batch::new(format!("eval/{k}"), chunk)?;
        let n: usize = chunk.iter().map(|p| p.target.len() + 1).sum();
        let l = forward_loss(model, &b, Mode::Eval, &mut ChaCha8Rng::seed_from_u64(0))?;
        total += l.f64() * n as f64;
        tokens += n;
    }
    if tokens == 0 {
        return Err(Error::EmptyBatch);
    }
    Ok(total / tokens as f64)
}
