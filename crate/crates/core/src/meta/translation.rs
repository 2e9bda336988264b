use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{inner_adapt, meta_train, MetaObjective, MetaTrainConfig, MetaTrainLog};
use crate::autodiff::{GradientBundle, ParamSet, ParamView};
use crate::corpus::Vocabulary;
use crate::error::{Error, Result};
use crate::eval::{evaluate_bleu, DecodeConfig};
use crate::model::{forward_loss, loss_and_grad, partition_view, Batch, CheckpointKind, Mode, ModelParameters, ParameterScope};
use crate::tasks::{MetaDataset, Task};
use crate::tensor::Scalar;

/// Translation tasks over a fixed architecture. Parameter sets passed to
/// the objective must follow `model`'s layout.
pub struct TranslationObjective<'a, T> {
    pub model: &'a ModelParameters<T>,
    pub vocab: Option<&'a Vocabulary>,
    pub decode: DecodeConfig,
}

impl<'a, T: Scalar> TranslationObjective<'a, T> {
    pub fn new(model: &'a ModelParameters<T>) -> Self {
        Self {
            model,
            vocab: None,
            decode: DecodeConfig::default(),
        }
    }

    pub fn with_bleu(mut self, vocab: &'a Vocabulary, decode: DecodeConfig) -> Self {
        self.vocab = Some(vocab);
        self.decode = decode;
        self
    }

    fn support(task: &Task) -> Result<Batch> {
        Batch::new(format!("{}/support", task.task_id), &task.support)
    }

    fn query(task: &Task) -> Result<Batch> {
        Batch::new(format!("{}/query", task.task_id), &task.query)
    }
}

impl<T: Scalar> MetaObjective<T> for TranslationObjective<'_, T> {
    type Task = Task;

    fn task_id<'a>(&self, task: &'a Task) -> &'a str {
        &task.task_id
    }

    fn support_grad(&self, params: &ParamSet<T>, view: &ParamView, task: &Task, seed: u64) -> Result<GradientBundle<T>> {
        let m = self.model.with_params(params.clone());
        loss_and_grad(&m, view, &Self::support(task)?, Mode::Train, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    fn support_loss(&self, params: &ParamSet<T>, task: &Task) -> Result<T> {
        let m = self.model.with_params(params.clone());
        forward_loss(&m, &Self::support(task)?, Mode::Eval, &mut ChaCha8Rng::seed_from_u64(0))
    }

    fn query_grad(&self, params: &ParamSet<T>, view: &ParamView, task: &Task) -> Result<GradientBundle<T>> {
        let m = self.model.with_params(params.clone());
        loss_and_grad(&m, view, &Self::query(task)?, Mode::Eval, &mut ChaCha8Rng::seed_from_u64(0))
    }

    fn query_loss(&self, params: &ParamSet<T>, task: &Task) -> Result<T> {
        let m = self.model.with_params(params.clone());
        forward_loss(&m, &Self::query(task)?, Mode::Eval, &mut ChaCha8Rng::seed_from_u64(0))
    }

    fn query_bleu(&self, params: &ParamSet<T>, task: &Task) -> Result<f64> {
        let vocab = self
            .vocab
            .ok_or_else(|| Error::Config("BLEU selection needs a vocabulary".into()))?;
        let m = self.model.with_params(params.clone());
        Ok(evaluate_bleu(&m, vocab, &task.query, &self.decode)?.score)
    }
}

/// θ′ after `steps` support-set updates within `scope`.
pub fn inner_adapt_model<T: Scalar>(
    model: &ModelParameters<T>,
    task: &Task,
    alpha: f64,
    steps: usize,
    scope: ParameterScope,
    seed: u64,
) -> Result<ModelParameters<T>> {
    let view = partition_view(model, scope)?;
    let obj = TranslationObjective::new(model);
    let adapted = inner_adapt(&obj, &model.params, &view, task, alpha, steps, seed).map_err(|e| e.in_task(&task.task_id))?;
    let mut out = model.with_params(adapted.params);
    out.kind = CheckpointKind::Adapted;
    Ok(out)
}

/// Meta-trains `model` on the dataset's meta-train split, selecting on its
/// meta-validation split.
pub fn meta_train_model<T: Scalar>(
    model: &ModelParameters<T>,
    dataset: &MetaDataset,
    config: &MetaTrainConfig,
    bleu: Option<(&Vocabulary, DecodeConfig)>,
    seed: u64,
    deterministic: bool,
) -> Result<(ModelParameters<T>, MetaTrainLog)> {
    let view = partition_view(model, config.scope)?;
    let mut obj = TranslationObjective::new(model);
    if let Some((v, d)) = bleu {
        obj = obj.with_bleu(v, d);
    }
    let outcome = meta_train(
        &obj,
        &model.params,
        &view,
        &dataset.meta_train,
        &dataset.meta_validation,
        config,
        seed,
        deterministic,
    )?;
    let mut out = model.with_params(outcome.params);
    out.kind = CheckpointKind::MetaTrained;
    out.counters.meta_steps += outcome.meta_steps;
    Ok((out, outcome.log))
}
