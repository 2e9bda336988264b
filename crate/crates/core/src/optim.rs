//! Gradient descent, Adam and learning-rate schedules.

use serde::{Deserialize, Serialize};

use crate::autodiff::{GradientBundle, ParamSet, ParamView};
use crate::error::{Error, Result};
use crate::tensor::{Matrix, Scalar};

/// `θ ← θ − α·g` on the bundle's parameters; everything else is untouched.
pub fn sgd_step<T: Scalar>(params: &mut ParamSet<T>, view: &ParamView, grads: &GradientBundle<T>, alpha: f64) -> Result<()> {
    grads.check_aligned(params, view)?;
    let a = T::of(-alpha);
    for (&i, g) in grads.indices.iter().zip(&grads.grads) {
        if g.data().iter().any(|x| *x != T::zero()) {
            params.get_mut(i).add_scaled(g, a);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.98,
            epsilon: 1e-8,
        }
    }
}

/// Bias-corrected Adam moments for one parameter view.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub step: u64,
    pub indices: Vec<usize>,
    pub m: Vec<Matrix<T>>,
    pub v: Vec<Matrix<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ParamSet<T>, view: &ParamView, config: AdamConfig) -> Self {
        let zeros = || {
            view.indices()
                .iter()
                .map(|&i| {
                    let (r, c) = params.get(i).shape();
                    Matrix::zeros(r, c)
                })
                .collect::<Vec<_>>()
        };
        Self {
            config,
            step: 0,
            indices: view.indices().to_vec(),
            m: zeros(),
            v: zeros(),
        }
    }

    /// Moments as named arrays, for checkpointing.
    pub fn to_named(&self, params: &ParamSet<T>) -> Vec<(String, Matrix<T>)> {
        self.indices
            .iter()
            .zip(self.m.iter().zip(&self.v))
            .flat_map(|(&i, (m, v))| {
                let n = params.name(i);
                [(format!("adam.m/{n}"), m.clone()), (format!("adam.v/{n}"), v.clone())]
            })
            .collect()
    }

    pub fn from_named(params: &ParamSet<T>, view: &ParamView, config: AdamConfig, step: u64, arrays: &[(String, Matrix<T>)]) -> Result<Self> {
        let mut s = Self::new(params, view, config);
        s.step = step;
        let find = |key: String| {
            arrays
                .iter()
                .find(|(n, _)| *n == key)
                .map(|(_, m)| m.clone())
                .ok_or_else(|| Error::Checkpoint(format!("optimizer state lacks `{key}`")))
        };
        for (k, &i) in s.indices.clone().iter().enumerate() {
            let n = params.name(i);
            let (m, v) = (find(format!("adam.m/{n}"))?, find(format!("adam.v/{n}"))?);
            if m.shape() != params.get(i).shape() || v.shape() != m.shape() {
                return Err(Error::Checkpoint(format!("optimizer state for `{n}` has the wrong shape")));
            }
            s.m[k] = m;
            s.v[k] = v;
        }
        Ok(s)
    }
}

/// One Adam update at learning rate `lr`. Arrays whose gradient is
/// entirely zero are skipped, so they stay bit-identical at any state.
pub fn adam_step<T: Scalar>(
    state: &mut AdamState<T>,
    params: &mut ParamSet<T>,
    view: &ParamView,
    grads: &GradientBundle<T>,
    lr: f64,
) -> Result<()> {
    grads.check_aligned(params, view)?;
    if state.indices != grads.indices {
        return Err(Error::Shape("optimizer state and gradients cover different parameters".into()));
    }
    state.step += 1;
    let c = state.config;
    let t = state.step as i32;
    let bc1 = 1.0 - c.beta1.powi(t);
    let bc2 = 1.0 - c.beta2.powi(t);
    let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
    let (one, eps) = (T::one(), T::of(c.epsilon));
    let step_size = T::of(lr / bc1);
    let bc2_sqrt = T::of(bc2.sqrt());
    for (k, (&i, g)) in grads.indices.iter().zip(&grads.grads).enumerate() {
        // an all-zero array counts as absent: no moment decay, no move
        if g.data().iter().all(|x| *x == T::zero()) {
            continue;
        }
        let (m, v) = (&mut state.m[k], &mut state.v[k]);
        for ((mj, vj), &gj) in m.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
            *mj = b1 * *mj + (one - b1) * gj;
            *vj = b2 * *vj + (one - b2) * gj * gj;
        }
        let p = params.get_mut(i);
        for ((pj, &mj), &vj) in p.data_mut().iter_mut().zip(m.data()).zip(v.data()) {
            *pj = *pj - step_size * mj / (vj.sqrt() / bc2_sqrt + eps);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LrSchedule {
    Constant { rate: f64 },
    InverseSqrtWarmup { peak_rate: f64, warmup_steps: u64 },
}

impl LrSchedule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            LrSchedule::Constant { rate } if rate > 0.0 => Ok(()),
            LrSchedule::InverseSqrtWarmup { peak_rate, warmup_steps } if peak_rate > 0.0 && warmup_steps >= 1 => Ok(()),
            _ => Err(Error::Config(format!("invalid learning-rate schedule {self:?}"))),
        }
    }

    pub fn scaled(&self, k: f64) -> Self {
        match *self {
            LrSchedule::Constant { rate } => LrSchedule::Constant { rate: rate * k },
            LrSchedule::InverseSqrtWarmup { peak_rate, warmup_steps } => LrSchedule::InverseSqrtWarmup {
                peak_rate: peak_rate * k,
                warmup_steps,
            },
        }
    }
}

/// Rate at 1-based `step`: linear warmup to the peak, then
/// `peak·sqrt(warmup/step)`.
pub fn lr_at(schedule: &LrSchedule, step: u64) -> f64 {
    let step = step.max(1);
    match *schedule {
        LrSchedule::Constant { rate } => rate,
        LrSchedule::InverseSqrtWarmup { peak_rate, warmup_steps } => {
            if step <= warmup_steps {
                peak_rate * (step as f64 / warmup_steps as f64)
            } else {
                peak_rate * (warmup_steps as f64 / step as f64).sqrt()
            }
        }
    }
}
