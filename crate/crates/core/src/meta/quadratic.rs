//! Analytic family: task τ has loss L_τ(θ) = ½‖θ − c_τ‖² on both support
//! and query, so every meta-gradient has a closed form.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::MetaObjective;
use crate::autodiff::{GradientBundle, ParamGroup, ParamSet, ParamView};
use crate::error::{Error, Result};
use crate::tensor::{Matrix, Scalar};

#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticTask {
    pub id: String,
    pub center: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadraticFamily {
    pub dim: usize,
}

impl QuadraticFamily {
    pub fn new(dim: usize) -> Self {
        Self { dim }
    }

    /// A single parameter row `theta`.
    pub fn params<T: Scalar>(&self, theta: &[f64]) -> ParamSet<T> {
        let mut p = ParamSet::new();
        p.push("theta", ParamGroup::Adapter, Matrix::row_vector(theta.iter().map(|&v| T::of(v)).collect()));
        p
    }

    /// `2·pairs` centers `mean ± δ_k` with δ_k ~ N(0, spread²). The sample
    /// mean is exactly `mean` up to rounding.
    pub fn antithetic_tasks(&self, mean: &[f64], spread: f64, pairs: usize, seed: u64) -> Vec<QuadraticTask> {
        assert_eq!(mean.len(), self.dim);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, spread).expect("finite spread");
        let mut out = Vec::with_capacity(2 * pairs);
        for k in 0..pairs {
            let delta: Vec<f64> = (0..self.dim).map(|_| normal.sample(&mut rng)).collect();
            for (sign, tag) in [(1.0, "a"), (-1.0, "b")] {
                out.push(QuadraticTask {
                    id: format!("quad/{k}{tag}"),
                    center: mean.iter().zip(&delta).map(|(m, d)| m + sign * d).collect(),
                });
            }
        }
        out
    }

    fn residual<T: Scalar>(&self, params: &ParamSet<T>, task: &QuadraticTask) -> Result<Matrix<T>> {
        let theta = params.get(0);
        if theta.len() != task.center.len() {
            return Err(Error::Shape(format!(
                "theta has {} entries, task center {}",
                theta.len(),
                task.center.len()
            )));
        }
        let data = theta.data().iter().zip(&task.center).map(|(&t, &c)| t - T::of(c)).collect();
        Ok(Matrix::row_vector(data))
    }

    fn loss<T: Scalar>(&self, params: &ParamSet<T>, task: &QuadraticTask) -> Result<T> {
        let r = self.residual(params, task)?;
        Ok(T::of(0.5) * r.data().iter().map(|&v| v * v).fold(T::zero(), |a, b| a + b))
    }

    fn grad<T: Scalar>(&self, params: &ParamSet<T>, view: &ParamView, task: &QuadraticTask) -> Result<GradientBundle<T>> {
        let loss = self.loss(params, task)?;
        let mut g = GradientBundle::zeros(params, view);
        if view.contains(0) {
            g.grads[0] = self.residual(params, task)?;
        }
        g.loss = loss;
        Ok(g)
    }
}

impl<T: Scalar> MetaObjective<T> for QuadraticFamily {
    type Task = QuadraticTask;

    fn task_id<'a>(&self, task: &'a QuadraticTask) -> &'a str {
        &task.id
    }

    fn support_grad(&self, params: &ParamSet<T>, view: &ParamView, task: &QuadraticTask, _seed: u64) -> Result<GradientBundle<T>> {
        self.grad(params, view, task)
    }

    fn support_loss(&self, params: &ParamSet<T>, task: &QuadraticTask) -> Result<T> {
        self.loss(params, task)
    }

    fn query_grad(&self, params: &ParamSet<T>, view: &ParamView, task: &QuadraticTask) -> Result<GradientBundle<T>> {
        self.grad(params, view, task)
    }

    fn query_loss(&self, params: &ParamSet<T>, task: &QuadraticTask) -> Result<T> {
        self.loss(params, task)
    }

    /// The Hessian is the identity.
    fn support_hvp(&self, _params: &ParamSet<T>, _view: &ParamView, _task: &QuadraticTask, v: &GradientBundle<T>) -> Result<GradientBundle<T>> {
        Ok(v.clone())
    }
}
