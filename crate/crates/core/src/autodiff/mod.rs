//! Reverse-mode differentiation and the finite-difference oracle that
//! validates it.

mod check;
mod graph;
mod params;

pub use check::{finite_diff_check, FdCheck, FdReport, FdSample};
pub use graph::{AttentionLayout, Bound, Graph, NodeId, Segment};
pub use params::{arrays_bit_identical, GradientBundle, ParamEntry, ParamGroup, ParamSet, ParamView};

use crate::error::{Error, Result};
use crate::tensor::{Matrix, Scalar};

/// Gradient of the scalar built by `loss_fn`, restricted to `view`.
pub fn grad<T, F>(params: &ParamSet<T>, view: &ParamView, loss_fn: F) -> Result<GradientBundle<T>>
where
    T: Scalar,
    F: FnOnce(&mut Graph<T>, &Bound) -> Result<NodeId>,
{
    let mut graph = Graph::new();
    let bound = graph.bind(params, view);
    let out = loss_fn(&mut graph, &bound)?;
    let loss = graph.scalar(out);
    let mut param_grads = graph.backward(out)?;
    let grads = view
        .indices()
        .iter()
        .map(|&i| {
            param_grads
                .get_mut(i)
                .and_then(Option::take)
                .unwrap_or_else(|| {
                    let (r, c) = params.get(i).shape();
                    Matrix::zeros(r, c)
                })
        })
        .collect::<Vec<_>>();
    let bundle = GradientBundle {
        indices: view.indices().to_vec(),
        grads,
        loss,
        batch_id: None,
    };
    if !bundle.is_finite() {
        return Err(Error::numerical("parameter gradient"));
    }
    Ok(bundle)
}

/// Value of the scalar built by `loss_fn` with no gradient bookkeeping.
pub fn evaluate<T, F>(params: &ParamSet<T>, loss_fn: F) -> Result<T>
where
    T: Scalar,
    F: FnOnce(&mut Graph<T>, &Bound) -> Result<NodeId>,
{
    let mut graph = Graph::new();
    let bound = graph.bind(params, &ParamView::new(Vec::new()));
    let out = loss_fn(&mut graph, &bound)?;
    graph.check_finite(out)?;
    Ok(graph.scalar(out))
}
