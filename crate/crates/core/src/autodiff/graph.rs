//! Tape of matrix operations with a reverse sweep.
//!
//! Nodes are appended in evaluation order, so the tape is already a
//! topological order and the backward pass is a single reverse scan.

use std::sync::Arc;

use super::params::{ParamSet, ParamView};
use crate::error::{Error, Result};
use crate::tensor::{softmax_in_place, Matrix, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Row ranges of a packed batch: sequence `i` occupies rows `start..start+len`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub start: usize,
    pub len: usize,
}

#[derive(Debug, Clone)]
pub struct AttentionLayout {
    pub query: Vec<Segment>,
    pub key: Vec<Segment>,
    pub heads: usize,
    pub causal: bool,
}

const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul { a: NodeId, b: NodeId, trans_b: bool },
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    AddRow { a: NodeId, bias: NodeId },
    Scale { a: NodeId, k: T },
    Relu { a: NodeId },
    Dropout { a: NodeId, mask: Vec<T> },
    LayerNorm { a: NodeId, gain: NodeId, bias: NodeId, xhat: Vec<T>, inv_std: Vec<T> },
    Gather { table: NodeId, ids: Vec<usize> },
    Attention { q: NodeId, k: NodeId, v: NodeId, layout: Arc<AttentionLayout>, probs: Vec<T> },
    CrossEntropy { logits: NodeId, targets: Vec<Option<usize>>, probs: Vec<T>, count: usize },
    SumAll { a: NodeId },
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul { .. } => "matmul",
            Op::Add { .. } => "add",
            Op::Sub { .. } => "sub",
            Op::Mul { .. } => "mul",
            Op::AddRow { .. } => "add_row",
            Op::Scale { .. } => "scale",
            Op::Relu { .. } => "relu",
            Op::Dropout { .. } => "dropout",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Gather { .. } => "gather",
            Op::Attention { .. } => "attention",
            Op::CrossEntropy { .. } => "cross_entropy",
            Op::SumAll { .. } => "sum_all",
        }
    }
}

struct Node<T> {
    value: Arc<Matrix<T>>,
    op: Op<T>,
    requires_grad: bool,
    param: Option<usize>,
}

/// Leaf nodes for every parameter of a set, indexed by parameter index.
#[derive(Debug, Clone)]
pub struct Bound {
    nodes: Vec<NodeId>,
}

impl Bound {
    pub fn node(&self, param_idx: usize) -> NodeId {
        self.nodes[param_idx]
    }
}

pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Matrix<T> {
        &self.nodes[id.0].value
    }

    pub fn scalar(&self, id: NodeId) -> T {
        self.value(id).data()[0]
    }

    fn push(&mut self, value: Matrix<T>, op: Op<T>, inputs: &[NodeId]) -> NodeId {
        let requires_grad = inputs.iter().any(|i| self.nodes[i.0].requires_grad);
        self.nodes.push(Node {
            value: Arc::new(value),
            op,
            requires_grad,
            param: None,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Arc<Matrix<T>>, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
            param: None,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Matrix<T>) -> NodeId {
        self.leaf(Arc::new(value), false)
    }

    /// Leaves for all parameters; only in-view leaves require gradients.
    pub fn bind(&mut self, params: &ParamSet<T>, view: &ParamView) -> Bound {
        let nodes = params
            .entries()
            .iter()
            .enumerate()
            .map(|(i, e)| {
                let id = self.leaf(Arc::clone(e.shared()), view.contains(i));
                self.nodes[id.0].param = Some(i);
                id
            })
            .collect();
        Bound { nodes }
    }

    fn shape_err(&self, what: &str, a: NodeId, b: NodeId) -> Error {
        Error::Shape(format!(
            "{what}: {:?} vs {:?}",
            self.value(a).shape(),
            self.value(b).shape()
        ))
    }

    /// `a·b`, or `a·bᵀ` when `trans_b`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId, trans_b: bool) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        let inner_b = if trans_b { bv.cols() } else { bv.rows() };
        if av.cols() != inner_b {
            return Err(self.shape_err("matmul", a, b));
        }
        let out = Matrix::matmul(av, false, bv, trans_b);
        Ok(self.push(out, Op::MatMul { a, b, trans_b }, &[a, b]))
    }

    fn zip(&mut self, a: NodeId, b: NodeId, what: &str, f: impl Fn(T, T) -> T) -> Result<(Matrix<T>, [NodeId; 2])> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(self.shape_err(what, a, b));
        }
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        Ok((Matrix::from_vec(av.rows(), av.cols(), data)?, [a, b]))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (out, ins) = self.zip(a, b, "add", |x, y| x + y)?;
        Ok(self.push(out, Op::Add { a, b }, &ins))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (out, ins) = self.zip(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(out, Op::Sub { a, b }, &ins))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (out, ins) = self.zip(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(out, Op::Mul { a, b }, &ins))
    }

    /// Adds a 1×n row to every row of an m×n matrix.
    pub fn add_row(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(bias));
        if bv.rows() != 1 || bv.cols() != av.cols() {
            return Err(self.shape_err("add_row", a, bias));
        }
        let mut out = av.clone();
        for r in 0..out.rows() {
            for (x, &b) in out.row_mut(r).iter_mut().zip(bv.data()) {
                *x = *x + b;
            }
        }
        Ok(self.push(out, Op::AddRow { a, bias }, &[a, bias]))
    }

    pub fn scale(&mut self, a: NodeId, k: T) -> NodeId {
        let out = self.value(a).scale(k);
        self.push(out, Op::Scale { a, k }, &[a])
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let out = self.value(a).map(|x| if x > T::zero() { x } else { T::zero() });
        self.push(out, Op::Relu { a }, &[a])
    }

    /// Inverted dropout with a caller-supplied keep mask (`true` = keep).
    pub fn dropout(&mut self, a: NodeId, keep: &[bool], rate: T) -> Result<NodeId> {
        let av = self.value(a);
        if keep.len() != av.len() {
            return Err(Error::Shape(format!(
                "dropout mask has {} entries for {} values",
                keep.len(),
                av.len()
            )));
        }
        let k = T::one() / (T::one() - rate);
        let mask: Vec<T> = keep.iter().map(|&m| if m { k } else { T::zero() }).collect();
        let data = av.data().iter().zip(&mask).map(|(&x, &m)| x * m).collect();
        let out = Matrix::from_vec(av.rows(), av.cols(), data)?;
        Ok(self.push(out, Op::Dropout { a, mask }, &[a]))
    }

    /// Row-wise layer normalization with learned gain and bias (1×n each).
    pub fn layer_norm(&mut self, a: NodeId, gain: NodeId, bias: NodeId) -> Result<NodeId> {
        let (av, gv, bv) = (self.value(a), self.value(gain), self.value(bias));
        let n = av.cols();
        if gv.shape() != (1, n) || bv.shape() != (1, n) {
            return Err(self.shape_err("layer_norm", a, gain));
        }
        let eps = T::of(LAYER_NORM_EPS);
        let nt = T::from_usize(n).unwrap();
        let mut out = Matrix::zeros(av.rows(), n);
        let mut xhat = Vec::with_capacity(av.len());
        let mut inv_std = Vec::with_capacity(av.rows());
        for r in 0..av.rows() {
            let row = av.row(r);
            let mean = row.iter().copied().sum::<T>() / nt;
            let var = row.iter().map(|&x| (x - mean) * (x - mean)).sum::<T>() / nt;
            let inv = T::one() / (var + eps).sqrt();
            inv_std.push(inv);
            let orow = out.row_mut(r);
            for j in 0..n {
                let h = (row[j] - mean) * inv;
                xhat.push(h);
                orow[j] = h * gv.data()[j] + bv.data()[j];
            }
        }
        Ok(self.push(out, Op::LayerNorm { a, gain, bias, xhat, inv_std }, &[a, gain, bias]))
    }

    /// Selects rows of `table` (embedding lookup).
    pub fn gather(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId> {
        let tv = self.value(table);
        let mut out = Matrix::zeros(ids.len(), tv.cols());
        for (r, &id) in ids.iter().enumerate() {
            if id >= tv.rows() {
                return Err(Error::Shape(format!(
                    "row {id} out of range for table with {} rows",
                    tv.rows()
                )));
            }
            out.row_mut(r).copy_from_slice(tv.row(id));
        }
        Ok(self.push(out, Op::Gather { table, ids: ids.to_vec() }, &[table]))
    }

    /// Scaled dot-product multi-head attention over packed sequences.
    ///
    /// Query segment `i` attends only to key segment `i`; with `causal`,
    /// position `p` attends to key positions `0..=p` of its segment.
    pub fn attention(&mut self, q: NodeId, k: NodeId, v: NodeId, layout: Arc<AttentionLayout>) -> Result<NodeId> {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let d = qv.cols();
        if kv.cols() != d || vv.cols() != d || kv.rows() != vv.rows() {
            return Err(self.shape_err("attention", q, k));
        }
        if layout.heads == 0 || d % layout.heads != 0 || layout.query.len() != layout.key.len() {
            return Err(Error::Shape(format!(
                "attention layout: {} query segments, {} key segments, {} heads for dim {d}",
                layout.query.len(),
                layout.key.len(),
                layout.heads
            )));
        }
        let dh = d / layout.heads;
        let scale = T::one() / T::from_usize(dh).unwrap().sqrt();
        let mut out = Matrix::zeros(qv.rows(), d);
        let mut probs = Vec::new();
        for (qs, ks) in layout.query.iter().zip(&layout.key) {
            if layout.causal && qs.len > ks.len {
                return Err(Error::Shape("causal attention needs keys for every query".into()));
            }
            for h in 0..layout.heads {
                let c0 = h * dh;
                for i in 0..qs.len {
                    let qrow = &qv.row(qs.start + i)[c0..c0 + dh];
                    let visible = if layout.causal { i + 1 } else { ks.len };
                    let mut row: Vec<T> = (0..ks.len)
                        .map(|j| {
                            if j < visible {
                                let krow = &kv.row(ks.start + j)[c0..c0 + dh];
                                dot(qrow, krow) * scale
                            } else {
                                T::neg_infinity()
                            }
                        })
                        .collect();
                    softmax_in_place(&mut row);
                    let orow = &mut out.row_mut(qs.start + i)[c0..c0 + dh];
                    for (j, &p) in row.iter().enumerate().take(visible) {
                        let vrow = &vv.row(ks.start + j)[c0..c0 + dh];
                        for (o, &x) in orow.iter_mut().zip(vrow) {
                            *o = *o + p * x;
                        }
                    }
                    probs.extend_from_slice(&row);
                }
            }
        }
        Ok(self.push(out, Op::Attention { q, k, v, layout, probs }, &[q, k, v]))
    }

    /// Mean token negative log-likelihood of `targets` under row-wise softmax
    /// of `logits`. `None` targets are excluded from the mean.
    pub fn cross_entropy(&mut self, logits: NodeId, targets: &[Option<usize>]) -> Result<NodeId> {
        let lv = self.value(logits);
        if targets.len() != lv.rows() {
            return Err(Error::Shape(format!(
                "{} targets for {} logit rows",
                targets.len(),
                lv.rows()
            )));
        }
        let count = targets.iter().filter(|t| t.is_some()).count();
        if count == 0 {
            return Err(Error::EmptyBatch);
        }
        let mut probs = Vec::with_capacity(lv.len());
        let mut total = T::zero();
        for (r, t) in targets.iter().enumerate() {
            let mut row = lv.row(r).to_vec();
            softmax_in_place(&mut row);
            if let Some(t) = *t {
                if t >= row.len() {
                    return Err(Error::Shape(format!("target {t} outside vocabulary")));
                }
                let lse = crate::tensor::log_sum_exp(lv.row(r));
                total = total + (lse - lv.get(r, t));
            }
            probs.extend_from_slice(&row);
        }
        let loss = total / T::from_usize(count).unwrap();
        let targets = targets.to_vec();
        Ok(self.push(Matrix::scalar(loss), Op::CrossEntropy { logits, targets, probs, count }, &[logits]))
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let s = self.value(a).sum();
        self.push(Matrix::scalar(s), Op::SumAll { a }, &[a])
    }

    fn first_non_finite(&self) -> Option<(usize, &'static str)> {
        self.nodes
            .iter()
            .enumerate()
            .find(|(_, n)| !n.value.is_finite())
            .map(|(i, n)| (i, n.op.name()))
    }

    /// Fails with the first non-finite node when `id` is not finite.
    pub fn check_finite(&self, id: NodeId) -> Result<()> {
        if self.value(id).is_finite() {
            return Ok(());
        }
        let (i, name) = self.first_non_finite().unwrap_or((id.0, "output"));
        Err(Error::numerical(format!("forward node {i} ({name})")))
    }

    /// Reverse sweep from the 1×1 node `output`. Returns the gradient of each
    /// parameter leaf that requires one, indexed by parameter index.
    pub fn backward(&self, output: NodeId) -> Result<Vec<Option<Matrix<T>>>> {
        if self.value(output).shape() != (1, 1) {
            return Err(Error::Shape("backward needs a scalar output".into()));
        }
        self.check_finite(output)?;
        let mut grads: Vec<Option<Matrix<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Matrix::scalar(T::one()));
        let mut param_grads = Vec::new();
        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if !g.is_finite() {
                return Err(Error::numerical(format!("gradient at node {i} ({})", node.op.name())));
            }
            if let Some(p) = node.param {
                if param_grads.len() <= p {
                    param_grads.resize_with(p + 1, || None);
                }
                param_grads[p] = Some(g);
                continue;
            }
            self.propagate(node, &g, &mut grads);
        }
        Ok(param_grads)
    }

    fn wants(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn propagate(&self, node: &Node<T>, g: &Matrix<T>, grads: &mut [Option<Matrix<T>>]) {
        let mut acc = |id: NodeId, delta: Matrix<T>| match &mut grads[id.0] {
            Some(existing) => existing.add_assign(&delta),
            slot @ None => *slot = Some(delta),
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b, trans_b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.wants(*a) {
                    // C = A·B → dA = dC·Bᵀ ; C = A·Bᵀ → dA = dC·B
                    acc(*a, Matrix::matmul(g, false, bv, !*trans_b));
                }
                if self.wants(*b) {
                    let db = if *trans_b {
                        Matrix::matmul(g, true, av, false)
                    } else {
                        Matrix::matmul(av, true, g, false)
                    };
                    acc(*b, db);
                }
            }
            Op::Add { a, b } => {
                if self.wants(*a) {
                    acc(*a, g.clone());
                }
                if self.wants(*b) {
                    acc(*b, g.clone());
                }
            }
            Op::Sub { a, b } => {
                if self.wants(*a) {
                    acc(*a, g.clone());
                }
                if self.wants(*b) {
                    acc(*b, g.scale(-T::one()));
                }
            }
            Op::Mul { a, b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.wants(*a) {
                    acc(*a, hadamard(g, bv));
                }
                if self.wants(*b) {
                    acc(*b, hadamard(g, av));
                }
            }
            Op::AddRow { a, bias } => {
                if self.wants(*a) {
                    acc(*a, g.clone());
                }
                if self.wants(*bias) {
                    acc(*bias, column_sums(g));
                }
            }
            Op::Scale { a, k } => acc(*a, g.scale(*k)),
            Op::Relu { a } => {
                let av = self.value(*a);
                let data = g
                    .data()
                    .iter()
                    .zip(av.data())
                    .map(|(&d, &x)| if x > T::zero() { d } else { T::zero() })
                    .collect();
                acc(*a, Matrix::from_vec(g.rows(), g.cols(), data).unwrap());
            }
            Op::Dropout { a, mask } => {
                let data = g.data().iter().zip(mask).map(|(&d, &m)| d * m).collect();
                acc(*a, Matrix::from_vec(g.rows(), g.cols(), data).unwrap());
            }
            Op::LayerNorm { a, gain, bias, xhat, inv_std } => {
                let gv = self.value(*gain);
                let n = g.cols();
                let nt = T::from_usize(n).unwrap();
                if self.wants(*gain) {
                    let mut dg = Matrix::zeros(1, n);
                    for r in 0..g.rows() {
                        for j in 0..n {
                            let v = dg.data()[j] + g.get(r, j) * xhat[r * n + j];
                            dg.data_mut()[j] = v;
                        }
                    }
                    acc(*gain, dg);
                }
                if self.wants(*bias) {
                    acc(*bias, column_sums(g));
                }
                if self.wants(*a) {
                    let mut dx = Matrix::zeros(g.rows(), n);
                    for r in 0..g.rows() {
                        let xh = &xhat[r * n..(r + 1) * n];
                        let dxh: Vec<T> = (0..n).map(|j| g.get(r, j) * gv.data()[j]).collect();
                        let mean_d = dxh.iter().copied().sum::<T>() / nt;
                        let mean_dx = dxh.iter().zip(xh).map(|(&d, &x)| d * x).sum::<T>() / nt;
                        let row = dx.row_mut(r);
                        for j in 0..n {
                            row[j] = inv_std[r] * (dxh[j] - mean_d - xh[j] * mean_dx);
                        }
                    }
                    acc(*a, dx);
                }
            }
            Op::Gather { table, ids } => {
                let tv = self.value(*table);
                let mut dt = Matrix::zeros(tv.rows(), tv.cols());
                for (r, &id) in ids.iter().enumerate() {
                    for (d, &x) in dt.row_mut(id).iter_mut().zip(g.row(r)) {
                        *d = *d + x;
                    }
                }
                acc(*table, dt);
            }
            Op::Attention { q, k, v, layout, probs } => {
                let (dq, dk, dv) = self.attention_backward(*q, *k, *v, layout, probs, g);
                if self.wants(*q) {
                    acc(*q, dq);
                }
                if self.wants(*k) {
                    acc(*k, dk);
                }
                if self.wants(*v) {
                    acc(*v, dv);
                }
            }
            Op::CrossEntropy { logits, targets, probs, count } => {
                let lv = self.value(*logits);
                let upstream = g.data()[0] / T::from_usize(*count).unwrap();
                let cols = lv.cols();
                let mut dl = Matrix::zeros(lv.rows(), cols);
                for (r, t) in targets.iter().enumerate() {
                    let Some(t) = *t else { continue };
                    let row = dl.row_mut(r);
                    for j in 0..cols {
                        row[j] = probs[r * cols + j] * upstream;
                    }
                    row[t] = row[t] - upstream;
                }
                acc(*logits, dl);
            }
            Op::SumAll { a } => {
                let (r, c) = self.value(*a).shape();
                acc(*a, Matrix::filled(r, c, g.data()[0]));
            }
        }
    }

    fn attention_backward(
        &self,
        q: NodeId,
        k: NodeId,
        v: NodeId,
        layout: &AttentionLayout,
        probs: &[T],
        g: &Matrix<T>,
    ) -> (Matrix<T>, Matrix<T>, Matrix<T>) {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let d = qv.cols();
        let dh = d / layout.heads;
        let scale = T::one() / T::from_usize(dh).unwrap().sqrt();
        let mut dq = Matrix::zeros(qv.rows(), d);
        let mut dk = Matrix::zeros(kv.rows(), d);
        let mut dv = Matrix::zeros(vv.rows(), d);
        let mut offset = 0;
        for (qs, ks) in layout.query.iter().zip(&layout.key) {
            for h in 0..layout.heads {
                let c0 = h * dh;
                for i in 0..qs.len {
                    let p = &probs[offset..offset + ks.len];
                    offset += ks.len;
                    let go = &g.row(qs.start + i)[c0..c0 + dh];
                    let visible = if layout.causal { i + 1 } else { ks.len };
                    let dp: Vec<T> = (0..visible)
                        .map(|j| dot(go, &vv.row(ks.start + j)[c0..c0 + dh]))
                        .collect();
                    let inner = (0..visible).map(|j| p[j] * dp[j]).sum::<T>();
                    for j in 0..visible {
                        let pj = p[j];
                        let dvrow = &mut dv.row_mut(ks.start + j)[c0..c0 + dh];
                        for (x, &y) in dvrow.iter_mut().zip(go) {
                            *x = *x + pj * y;
                        }
                        let ds = pj * (dp[j] - inner) * scale;
                        if ds == T::zero() {
                            continue;
                        }
                        let krow = &kv.row(ks.start + j)[c0..c0 + dh];
                        let dqrow = &mut dq.row_mut(qs.start + i)[c0..c0 + dh];
                        for (x, &y) in dqrow.iter_mut().zip(krow) {
                            *x = *x + ds * y;
                        }
                        let qrow = &qv.row(qs.start + i)[c0..c0 + dh];
                        let dkrow = &mut dk.row_mut(ks.start + j)[c0..c0 + dh];
                        for (x, &y) in dkrow.iter_mut().zip(qrow) {
                            *x = *x + ds * y;
                        }
                    }
                }
            }
        }
        (dq, dk, dv)
    }

    /// Attention probabilities recorded by an attention node, per
    /// (segment, head, query row). Exposed for invariant checks.
    pub fn attention_probs(&self, id: NodeId) -> Option<&[T]> {
        match &self.nodes[id.0].op {
            Op::Attention { probs, .. } => Some(probs),
            _ => None,
        }
    }
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

fn hadamard<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Matrix<T> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x * y).collect();
    Matrix::from_vec(a.rows(), a.cols(), data).unwrap()
}

fn column_sums<T: Scalar>(g: &Matrix<T>) -> Matrix<T> {
    let mut out = Matrix::zeros(1, g.cols());
    for r in 0..g.rows() {
        for (o, &x) in out.data_mut().iter_mut().zip(g.row(r)) {
            *o = *o + x;
        }
    }
    out
}
