//! Encoder-decoder transformer with optional adapter modules.

mod beam;
mod checkpoint;
mod config;
mod forward;
mod layout;

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use beam::{beam_decode, beam_search, greedy_search, Hypothesis, ModelScorer, StepScorer};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{AdapterPlacement, TransformerConfig};
pub use forward::{adapter_forward, forward_loss, loss_and_grad, loss_builder, positions, AdapterWeights, Batch, Mode};
pub use layout::{parameter_counts, AdapterIdx, Layout};

use crate::autodiff::{ParamGroup, ParamSet, ParamView};
use crate::error::{Error, Result};
use crate::seed::derive_seed;
use crate::tensor::{Matrix, Scalar};

/// Which arrays a training procedure may update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParameterScope {
    AdaptersOnly,
    AllParameters,
    /// Everything except adapters, used for pretraining so that adapters
    /// stay the identity map.
    BaseOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointKind {
    #[default]
    Initialized,
    Pretrained,
    MetaTrained,
    FineTuned,
    Adapted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct StepCounters {
    pub pretrain_steps: u64,
    pub meta_steps: u64,
    pub finetune_steps: u64,
}

#[derive(Debug, Clone)]
pub struct ModelParameters<T> {
    pub config: TransformerConfig,
    pub params: ParamSet<T>,
    pub kind: CheckpointKind,
    pub counters: StepCounters,
    layout: Arc<Layout>,
}

impl<T: Scalar> ModelParameters<T> {
    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    /// Wraps arrays whose names, order, shapes and groups must match the
    /// layout implied by `config`.
    pub fn from_params(config: TransformerConfig, params: ParamSet<T>) -> Result<Self> {
        config.validate()?;
        let mut shapes = Vec::new();
        let (expected, layout) = layout::build::<T>(&config, |_, r, c| {
            shapes.push((r, c));
            Matrix::zeros(0, 0)
        });
        if expected.len() != params.len() {
            return Err(Error::Checkpoint(format!(
                "{} arrays present, configuration implies {}",
                params.len(),
                expected.len()
            )));
        }
        for (i, &shape) in shapes.iter().enumerate() {
            if expected.name(i) != params.name(i) || expected.group(i) != params.group(i) || params.get(i).shape() != shape {
                return Err(Error::Checkpoint(format!(
                    "array {i} is `{}` {:?}, expected `{}` {:?}",
                    params.name(i),
                    params.get(i).shape(),
                    expected.name(i),
                    shape
                )));
            }
        }
        Ok(Self {
            config,
            params,
            kind: CheckpointKind::Initialized,
            counters: StepCounters::default(),
            layout: Arc::new(layout),
        })
    }

    /// The same model carrying different arrays of the same layout.
    pub fn with_params(&self, params: ParamSet<T>) -> Self {
        debug_assert_eq!(params.len(), self.params.len());
        Self {
            params,
            ..self.clone()
        }
    }

    pub fn cast<U: Scalar>(&self) -> ModelParameters<U> {
        ModelParameters {
            config: self.config.clone(),
            params: self.params.cast(),
            kind: self.kind,
            counters: self.counters,
            layout: Arc::clone(&self.layout),
        }
    }

    /// The same base weights in an adapter-free model.
    pub fn without_adapters(&self) -> Self {
        let config = self.config.without_adapters();
        let (_, layout) = layout::build::<T>(&config, |_, _, _| Matrix::zeros(0, 0));
        let mut params = ParamSet::new();
        for e in self.params.entries().iter().filter(|e| e.group == ParamGroup::Base) {
            params.push(e.name.clone(), e.group, e.value().clone());
        }
        Self {
            config,
            params,
            kind: self.kind,
            counters: self.counters,
            layout: Arc::new(layout),
        }
    }

    /// Zeros every adapter up-projection and its bias, restoring the
    /// identity map.
    pub fn ablate_adapters(&self) -> Self {
        let mut out = self.clone();
        let ups: Vec<usize> = adapters(&self.layout).flat_map(|a| [a.up, a.up_bias]).collect();
        for i in ups {
            let (r, c) = out.params.get(i).shape();
            out.params.replace(i, Matrix::zeros(r, c)).expect("same shape");
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.params.element_count()
    }

    pub fn adapter_parameter_count(&self) -> usize {
        self.params.group_element_count(ParamGroup::Adapter)
    }
}

fn adapters(layout: &Layout) -> impl Iterator<Item = AdapterIdx> + '_ {
    let enc = layout.encoder.iter().flat_map(|b| [b.self_attn.adapter, b.ffn.adapter]);
    let dec = layout
        .decoder
        .iter()
        .flat_map(|b| [b.self_attn.adapter, b.cross_attn.adapter, b.ffn.adapter]);
    enc.chain(dec).flatten()
}

/// Deterministic initialization; adapters start as the identity map.
pub fn init_model<T: Scalar>(config: &TransformerConfig, seed: u64) -> Result<ModelParameters<T>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "init"));
    let (params, layout) = layout::build::<T>(config, layout::random_init(&mut rng));
    Ok(ModelParameters {
        config: config.clone(),
        params,
        kind: CheckpointKind::Initialized,
        counters: StepCounters::default(),
        layout: Arc::new(layout),
    })
}

pub fn partition_view<T: Scalar>(model: &ModelParameters<T>, scope: ParameterScope) -> Result<ParamView> {
    let p = &model.params;
    Ok(match scope {
        ParameterScope::AllParameters => ParamView::all(p),
        ParameterScope::BaseOnly => ParamView::group(p, ParamGroup::Base),
        ParameterScope::AdaptersOnly => {
            let v = ParamView::group(p, ParamGroup::Adapter);
            if v.is_empty() {
                return Err(Error::Scope("adapters-only scope on a model without adapters".into()));
            }
            v
        }
    })
}

#[cfg(test)]
mod tests;
