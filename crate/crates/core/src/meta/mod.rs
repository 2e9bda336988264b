//! Meta-learning of an initialization: simulate adaptation on a task's
//! support set, score the adapted parameters on its query set, and move the
//! initialization so that the post-adaptation query loss falls.

mod quadratic;
mod translation;

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use quadratic::{QuadraticFamily, QuadraticTask};
pub use translation::{inner_adapt_model, meta_train_model, TranslationObjective};

use crate::autodiff::{GradientBundle, ParamSet, ParamView};
use crate::error::{Error, Result};
use crate::model::ParameterScope;
use crate::optim::{adam_step, sgd_step, AdamConfig, AdamState};
use crate::seed::derive_seed;
use crate::tensor::{Matrix, Scalar};

/// A task family the meta-learner can optimize over.
pub trait MetaObjective<T: Scalar>: Sync {
    type Task: Sync;

    fn task_id<'a>(&self, task: &'a Self::Task) -> &'a str;

    /// Support-set loss gradient as used by the inner loop (training mode;
    /// `seed` fixes any stochastic masks).
    fn support_grad(&self, params: &ParamSet<T>, view: &ParamView, task: &Self::Task, seed: u64) -> Result<GradientBundle<T>>;

    /// Support-set loss in evaluation mode.
    fn support_loss(&self, params: &ParamSet<T>, task: &Self::Task) -> Result<T>;

    /// Query-set loss gradient in evaluation mode.
    fn query_grad(&self, params: &ParamSet<T>, view: &ParamView, task: &Self::Task) -> Result<GradientBundle<T>>;

    /// Query-set loss in evaluation mode.
    fn query_loss(&self, params: &ParamSet<T>, task: &Self::Task) -> Result<T>;

    /// Hessian of the support loss times `v`. Only analytic families
    /// provide it; exact second-order meta-gradients need it.
    fn support_hvp(&self, _params: &ParamSet<T>, _view: &ParamView, _task: &Self::Task, _v: &GradientBundle<T>) -> Result<GradientBundle<T>> {
        Err(Error::Config(
            "exact second-order meta-gradients are only available for the analytic quadratic family".into(),
        ))
    }

    /// Query BLEU of the given parameters, for BLEU-based selection.
    fn query_bleu(&self, _params: &ParamSet<T>, _task: &Self::Task) -> Result<f64> {
        Err(Error::Config("BLEU selection is not available for this task family".into()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    #[serde(rename = "fomaml")]
    FoMaml,
    Reptile,
    /// Second-order meta-gradient; analytic families only.
    ExactMaml,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    QueryLoss,
    Bleu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetaOptimizer {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetaTrainConfig {
    pub inner_alpha: f64,
    pub inner_steps: usize,
    pub meta_lr: f64,
    pub meta_batch_size: usize,
    pub scope: ParameterScope,
    pub algorithm: Algorithm,
    pub epochs: usize,
    pub selection: Selection,
    /// Stop after this many epochs without a validation improvement.
    /// Reptile defaults to 2 when unset.
    pub patience: Option<usize>,
    pub optimizer: MetaOptimizer,
    pub adam: AdamConfig,
    /// Run the tasks of one meta-batch on the thread pool.
    pub parallel: bool,
}

impl Default for MetaTrainConfig {
    fn default() -> Self {
        Self {
            inner_alpha: 0.01,
            inner_steps: 1,
            meta_lr: 1e-2,
            meta_batch_size: 1,
            scope: ParameterScope::AdaptersOnly,
            algorithm: Algorithm::FoMaml,
            epochs: 5,
            selection: Selection::QueryLoss,
            patience: None,
            optimizer: MetaOptimizer::Adam,
            adam: AdamConfig::default(),
            parallel: false,
        }
    }
}

impl MetaTrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("meta: {m}")));
        if !(self.inner_alpha > 0.0) || !(self.meta_lr > 0.0) {
            return bad("learning rates must be positive");
        }
        if self.inner_steps == 0 {
            return bad("inner_steps must be at least 1");
        }
        if self.meta_batch_size == 0 {
            return bad("meta_batch_size must be at least 1");
        }
        Ok(())
    }

    pub fn effective_patience(&self) -> Option<usize> {
        match (self.patience, self.algorithm) {
            (Some(p), _) => Some(p),
            (None, Algorithm::Reptile) => Some(2),
            (None, _) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaLogRecord {
    pub step: u64,
    pub task_id: String,
    pub support_loss_pre: f64,
    pub support_loss_post: f64,
    pub query_loss: f64,
    pub lr: f64,
    pub elapsed_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub metric: f64,
    pub selected: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetaTrainLog {
    pub records: Vec<MetaLogRecord>,
    pub epochs: Vec<EpochRecord>,
    pub selected_epoch: usize,
}

impl MetaTrainLog {
    pub fn to_csv(&self) -> Result<String> {
        to_csv(&self.records)
    }

    pub fn epochs_csv(&self) -> Result<String> {
        to_csv(&self.epochs)
    }

    pub fn query_losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.query_loss).collect()
    }
}

pub(crate) fn to_csv<R: Serialize>(rows: &[R]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::Config(format!("csv: {e}")))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Config(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Adapted parameters plus the iterates that produced them.
#[derive(Debug, Clone)]
pub struct Adapted<T> {
    pub params: ParamSet<T>,
    /// θ_0 … θ_{k−1}: the points where support gradients were taken.
    pub trajectory: Vec<ParamSet<T>>,
}

/// `steps` gradient-descent updates on the support loss, restricted to
/// `view`. The input parameters are not modified; out-of-view arrays of the
/// result share storage with them.
pub fn inner_adapt<T: Scalar, O: MetaObjective<T>>(
    obj: &O,
    params: &ParamSet<T>,
    view: &ParamView,
    task: &O::Task,
    alpha: f64,
    steps: usize,
    seed: u64,
) -> Result<Adapted<T>> {
    if steps == 0 {
        return Err(Error::Config("inner adaptation needs at least one step".into()));
    }
    let mut theta = params.clone();
    let mut trajectory = Vec::with_capacity(steps);
    for s in 0..steps {
        let g = obj.support_grad(&theta, view, task, derive_seed(seed, &format!("inner/{s}")))?;
        trajectory.push(theta.clone());
        sgd_step(&mut theta, view, &g, alpha)?;
    }
    Ok(Adapted { params: theta, trajectory })
}

/// Outer-loop optimizer state.
#[derive(Debug, Clone)]
pub enum MetaOptState<T> {
    Adam(AdamState<T>),
    Sgd { step: u64 },
}

impl<T: Scalar> MetaOptState<T> {
    pub fn new(params: &ParamSet<T>, view: &ParamView, config: &MetaTrainConfig) -> Self {
        match config.optimizer {
            MetaOptimizer::Adam => MetaOptState::Adam(AdamState::new(params, view, config.adam)),
            MetaOptimizer::Sgd => MetaOptState::Sgd { step: 0 },
        }
    }

    fn apply(&mut self, params: &mut ParamSet<T>, view: &ParamView, g: &GradientBundle<T>, lr: f64) -> Result<()> {
        match self {
            MetaOptState::Adam(s) => adam_step(s, params, view, g, lr),
            MetaOptState::Sgd { step } => {
                *step += 1;
                sgd_step(params, view, g, lr)
            }
        }
    }
}

struct TaskOutcome<T> {
    meta_grad: GradientBundle<T>,
    record: MetaLogRecord,
}

fn sub<T: Scalar>(a: &ParamSet<T>, b: &ParamSet<T>, view: &ParamView) -> GradientBundle<T> {
    let grads = view
        .indices()
        .iter()
        .map(|&i| {
            let mut d: Matrix<T> = a.get(i).clone();
            d.add_scaled(b.get(i), -T::one());
            d
        })
        .collect();
    GradientBundle {
        indices: view.indices().to_vec(),
        grads,
        loss: T::zero(),
        batch_id: None,
    }
}

fn task_meta_grad<T: Scalar, O: MetaObjective<T>>(
    obj: &O,
    params: &ParamSet<T>,
    view: &ParamView,
    task: &O::Task,
    config: &MetaTrainConfig,
    seed: u64,
) -> Result<TaskOutcome<T>> {
    let t0 = Instant::now();
    let id = obj.task_id(task).to_string();
    let support_pre = obj.support_loss(params, task)?;
    let adapted = inner_adapt(obj, params, view, task, config.inner_alpha, config.inner_steps, seed)?;
    let support_post = obj.support_loss(&adapted.params, task)?;
    let (meta_grad, query) = match config.algorithm {
        Algorithm::FoMaml => {
            let g = obj.query_grad(&adapted.params, view, task)?;
            let q = g.loss;
            (g, q)
        }
        Algorithm::ExactMaml => {
            let mut g = obj.query_grad(&adapted.params, view, task)?;
            let q = g.loss;
            // chain rule through θ_{j+1} = θ_j − α∇L(θ_j): multiply by (I − αH_j)ᵀ
            for theta_j in adapted.trajectory.iter().rev() {
                let hv = obj.support_hvp(theta_j, view, task, &g)?;
                g.add_scaled(&hv, T::of(-config.inner_alpha))?;
            }
            (g, q)
        }
        Algorithm::Reptile => {
            let q = obj.query_loss(&adapted.params, task)?;
            (sub(params, &adapted.params, view), q)
        }
    };
    if !meta_grad.is_finite() {
        return Err(Error::numerical("meta-gradient"));
    }
    Ok(TaskOutcome {
        meta_grad,
        record: MetaLogRecord {
            step: 0,
            task_id: id,
            support_loss_pre: support_pre.f64(),
            support_loss_post: support_post.f64(),
            query_loss: query.f64(),
            lr: 0.0,
            elapsed_ms: t0.elapsed().as_millis() as u64,
        },
    })
}

/// The meta-gradient for a batch: FoMAML and exact MAML sum per-task query
/// gradients, Reptile averages θ − θ′.
pub fn meta_gradient<T: Scalar, O: MetaObjective<T>>(
    obj: &O,
    params: &ParamSet<T>,
    view: &ParamView,
    tasks: &[&O::Task],
    config: &MetaTrainConfig,
    seed: u64,
) -> Result<(GradientBundle<T>, Vec<MetaLogRecord>)> {
    if tasks.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let run = |t: &&O::Task| {
        let s = derive_seed(seed, obj.task_id(t));
        task_meta_grad(obj, params, view, t, config, s).map_err(|e| e.in_task(obj.task_id(t)))
    };
    let outcomes: Vec<TaskOutcome<T>> = if config.parallel {
        tasks.par_iter().map(run).collect::<Result<_>>()?
    } else {
        tasks.iter().map(run).collect::<Result<_>>()?
    };
    let mut total = GradientBundle::zeros(params, view);
    let mut records = Vec::with_capacity(outcomes.len());
    for o in outcomes {
        total.add_scaled(&o.meta_grad, T::one())?;
        records.push(o.record);
    }
    if config.algorithm == Algorithm::Reptile {
        total.scale(T::one() / T::of(tasks.len() as f64));
    }
    Ok((total, records))
}

/// One meta-update of `params` from a batch of tasks.
#[allow(clippy::too_many_arguments)]
pub fn meta_step<T: Scalar, O: MetaObjective<T>>(
    obj: &O,
    params: &mut ParamSet<T>,
    view: &ParamView,
    tasks: &[&O::Task],
    config: &MetaTrainConfig,
    state: &mut MetaOptState<T>,
    step: u64,
    seed: u64,
) -> Result<Vec<MetaLogRecord>> {
    let (g, mut records) = meta_gradient(obj, params, view, tasks, config, seed)?;
    state.apply(params, view, &g, config.meta_lr)?;
    for r in &mut records {
        r.step = step;
        r.lr = config.meta_lr;
    }
    Ok(records)
}

/// Mean validation metric, oriented so that lower is better.
pub fn validation_metric<T: Scalar, O: MetaObjective<T>>(
    obj: &O,
    params: &ParamSet<T>,
    view: &ParamView,
    tasks: &[O::Task],
    config: &MetaTrainConfig,
    seed: u64,
) -> Result<f64> {
    let score = |t: &O::Task| -> Result<f64> {
        let s = derive_seed(seed, &format!("validation/{}", obj.task_id(t)));
        let adapted = inner_adapt(obj, params, view, t, config.inner_alpha, config.inner_steps, s)?;
        match config.selection {
            Selection::QueryLoss => Ok(obj.query_loss(&adapted.params, t)?.f64()),
            Selection::Bleu => Ok(-obj.query_bleu(&adapted.params, t)?),
        }
        .map_err(|e: Error| e.in_task(obj.task_id(t)))
    };
    let scores: Vec<f64> = if config.parallel {
        tasks.par_iter().map(score).collect::<Result<_>>()?
    } else {
        tasks.iter().map(score).collect::<Result<_>>()?
    };
    Ok(scores.iter().sum::<f64>() / scores.len().max(1) as f64)
}

#[derive(Debug, Clone)]
pub struct MetaTrainOutcome<T> {
    /// Parameters of the selected epoch.
    pub params: ParamSet<T>,
    pub log: MetaTrainLog,
    pub meta_steps: u64,
}

/// Runs `config.epochs` passes over shuffled meta-train tasks and returns
/// the parameters of the epoch with the best validation metric. Epoch 0
/// (the initial parameters) is a candidate, so selection never does worse
/// than the starting point on meta-validation.
#[allow(clippy::too_many_arguments)]
pub fn meta_train<T: Scalar, O: MetaObjective<T>>(
    obj: &O,
    initial: &ParamSet<T>,
    view: &ParamView,
    train: &[O::Task],
    validation: &[O::Task],
    config: &MetaTrainConfig,
    seed: u64,
    deterministic: bool,
) -> Result<MetaTrainOutcome<T>> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Config("meta-train split is empty".into()));
    }
    let mut log = MetaTrainLog::default();
    if config.epochs == 0 {
        return Ok(MetaTrainOutcome {
            params: initial.clone(),
            log,
            meta_steps: 0,
        });
    }
    let vseed = derive_seed(seed, "meta-validation");
    let evaluate = |p: &ParamSet<T>| -> Result<f64> {
        if validation.is_empty() {
            Ok(0.0)
        } else {
            validation_metric(obj, p, view, validation, config, vseed)
        }
    };
    let mut params = initial.clone();
    let mut state = MetaOptState::new(&params, view, config);
    let mut best = (evaluate(&params)?, 0usize, params.clone());
    log.epochs.push(EpochRecord {
        epoch: 0,
        metric: best.0,
        selected: false,
    });
    let mut step = 0u64;
    let mut since_best = 0;
    for epoch in 1..=config.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("meta-order/{epoch}"))));
        for chunk in order.chunks(config.meta_batch_size) {
            step += 1;
            let batch: Vec<&O::Task> = chunk.iter().map(|&i| &train[i]).collect();
            let s = derive_seed(seed, &format!("meta-step/{step}"));
            let mut recs = meta_step(obj, &mut params, view, &batch, config, &mut state, step, s)?;
            if deterministic {
                recs.iter_mut().for_each(|r| r.elapsed_ms = 0);
            }
            log.records.extend(recs);
        }
        let metric = evaluate(&params)?;
        log.epochs.push(EpochRecord {
            epoch,
            metric,
            selected: false,
        });
        // with no validation tasks the latest epoch wins
        if validation.is_empty() || metric < best.0 {
            best = (metric, epoch, params.clone());
            since_best = 0;
        } else {
            since_best += 1;
            if config.effective_patience().is_some_and(|p| since_best >= p) {
                break;
            }
        }
    }
    log.selected_epoch = best.1;
    for e in &mut log.epochs {
        e.selected = e.epoch == best.1;
    }
    Ok(MetaTrainOutcome {
        params: best.2,
        log,
        meta_steps: step,
    })
}

#[cfg(test)]
mod tests;
