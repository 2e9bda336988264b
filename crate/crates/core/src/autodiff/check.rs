use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::graph::{Bound, Graph, NodeId};
use super::params::{GradientBundle, ParamGroup, ParamSet, ParamView};
use super::{evaluate, grad};
use crate::error::Result;
use crate::tensor::Scalar;

/// Central-difference gradient check on seeded random coordinates.
#[derive(Debug, Clone)]
pub struct FdCheck {
    pub epsilon: f64,
    pub samples: usize,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct FdSample {
    pub param: String,
    pub param_index: usize,
    pub element: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone)]
pub struct FdReport {
    pub samples: Vec<FdSample>,
    pub max_rel_error: f64,
}

impl FdReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("param,element,analytic,numeric,rel_error\n");
        for s in &self.samples {
            out.push_str(&format!(
                "{},{},{:e},{:e},{:e}\n",
                s.param, s.element, s.analytic, s.numeric, s.rel_error
            ));
        }
        out
    }

    pub fn to_table(&self) -> String {
        let width = self.samples.iter().map(|s| s.param.len()).max().unwrap_or(5).max(5);
        let mut out = format!(
            "{:<width$} {:>8} {:>14} {:>14} {:>10}\n",
            "param", "element", "analytic", "numeric", "rel_err"
        );
        for s in &self.samples {
            out.push_str(&format!(
                "{:<width$} {:>8} {:>14.6e} {:>14.6e} {:>10.2e}\n",
                s.param, s.element, s.analytic, s.numeric, s.rel_error
            ));
        }
        out.push_str(&format!("max relative error: {:.3e}\n", self.max_rel_error));
        out
    }
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

impl FdCheck {
    pub fn new(epsilon: f64, samples: usize, seed: u64) -> Self {
        Self { epsilon, samples, seed }
    }

    /// `(parameter index, element)` pairs, drawn without replacement. The
    /// samples are split evenly between the parameter groups present in the
    /// view (base, adapters), so a small group is never missed; a group
    /// smaller than its share passes the rest on.
    pub fn coordinates<T: Scalar>(&self, params: &ParamSet<T>, view: &ParamView) -> Vec<(usize, usize)> {
        let mut groups: Vec<(ParamGroup, Vec<(usize, usize)>)> = Vec::new();
        for &i in view.indices() {
            let entry = (i, params.get(i).len());
            match groups.iter_mut().find(|g| g.0 == params.group(i)) {
                Some(g) => g.1.push(entry),
                None => groups.push((params.group(i), vec![entry])),
            }
        }
        let totals: Vec<usize> = groups.iter().map(|g| g.1.iter().map(|s| s.1).sum()).collect();
        let mut remaining = self.samples.min(totals.iter().sum());
        let mut quotas = vec![0usize; groups.len()];
        while remaining > 0 {
            let open = (0..groups.len()).filter(|&k| quotas[k] < totals[k]).count();
            let share = (remaining / open).max(1);
            for k in 0..groups.len() {
                let add = share.min(totals[k] - quotas[k]).min(remaining);
                quotas[k] += add;
                remaining -= add;
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut out = Vec::new();
        for ((_, sizes), (&total, &quota)) in groups.iter().zip(totals.iter().zip(&quotas)) {
            let mut flat = rand::seq::index::sample(&mut rng, total, quota).into_vec();
            flat.sort_unstable();
            out.extend(flat.into_iter().map(|mut f| {
                for &(i, n) in sizes {
                    if f < n {
                        return (i, f);
                    }
                    f -= n;
                }
                unreachable!("flat index within group total")
            }));
        }
        out
    }

    pub fn run<T, F>(&self, params: &ParamSet<T>, view: &ParamView, loss_fn: F) -> Result<FdReport>
    where
        T: Scalar,
        F: Fn(&mut Graph<T>, &Bound) -> Result<NodeId>,
    {
        let bundle = grad(params, view, &loss_fn)?;
        self.compare(params, view, &bundle, loss_fn)
    }

    /// Checks a precomputed gradient bundle against central differences.
    pub fn compare<T, F>(
        &self,
        params: &ParamSet<T>,
        view: &ParamView,
        bundle: &GradientBundle<T>,
        loss_fn: F,
    ) -> Result<FdReport>
    where
        T: Scalar,
        F: Fn(&mut Graph<T>, &Bound) -> Result<NodeId>,
    {
        bundle.check_aligned(params, view)?;
        let eps = T::of(self.epsilon);
        let mut samples = Vec::new();
        let mut max_rel_error = 0.0f64;
        for (pi, el) in self.coordinates(params, view) {
            let mut plus = params.clone();
            let v = plus.get(pi).data()[el];
            plus.get_mut(pi).data_mut()[el] = v + eps;
            let mut minus = params.clone();
            minus.get_mut(pi).data_mut()[el] = v - eps;
            let lp = evaluate(&plus, &loss_fn)?;
            let lm = evaluate(&minus, &loss_fn)?;
            let numeric = (lp.f64() - lm.f64()) / (2.0 * self.epsilon);
            let analytic = bundle
                .get(pi)
                .map(|g| g.data()[el].f64())
                .unwrap_or(0.0);
            let rel_error = relative_error(analytic, numeric);
            max_rel_error = max_rel_error.max(rel_error);
            samples.push(FdSample {
                param: params.name(pi).to_string(),
                param_index: pi,
                element: el,
                analytic,
                numeric,
                rel_error,
            });
        }
        Ok(FdReport { samples, max_rel_error })
    }
}

/// Maximum relative error between reverse-mode and central-difference
/// gradients over `samples` coordinates (seed 0).
pub fn finite_diff_check<T, F>(
    loss_fn: F,
    params: &ParamSet<T>,
    view: &ParamView,
    epsilon: f64,
    samples: usize,
) -> Result<f64>
where
    T: Scalar,
    F: Fn(&mut Graph<T>, &Bound) -> Result<NodeId>,
{
    Ok(FdCheck::new(epsilon, samples, 0).run(params, view, loss_fn)?.max_rel_error)
}
