//! Teacher-forced forward pass over packed batches.
//!
//! Sentences are stacked by rows with no padding: the source of pair `i`
//! (plus EOS) occupies one row segment of the encoder input, `BOS + target`
//! one segment of the decoder input, and attention never crosses segments.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layout::{AdapterIdx, AttnIdx, FfnIdx, Layout, NormIdx, Sublayer};
use super::ModelParameters;
use crate::autodiff::{self, AttentionLayout, Bound, GradientBundle, Graph, NodeId, ParamView, Segment};
use crate::corpus::{SentencePair, BOS, EOS};
use crate::error::{Error, Result};
use crate::tensor::{Matrix, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Dropout active.
    Train,
    /// No dropout; a pure function of parameters and batch.
    Eval,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub id: String,
    pub src_ids: Vec<usize>,
    pub src_pos: Vec<usize>,
    pub src_segments: Vec<Segment>,
    pub dec_ids: Vec<usize>,
    pub dec_pos: Vec<usize>,
    pub dec_segments: Vec<Segment>,
    pub targets: Vec<Option<usize>>,
}

fn pack(seqs: impl Iterator<Item = Vec<usize>>) -> (Vec<usize>, Vec<usize>, Vec<Segment>) {
    let (mut ids, mut pos, mut segs) = (Vec::new(), Vec::new(), Vec::new());
    for s in seqs {
        segs.push(Segment { start: ids.len(), len: s.len() });
        pos.extend(0..s.len());
        ids.extend(s);
    }
    (ids, pos, segs)
}

impl Batch {
    pub fn new<'a>(id: impl Into<String>, pairs: impl IntoIterator<Item = &'a SentencePair>) -> Result<Self> {
        let pairs: Vec<&SentencePair> = pairs.into_iter().collect();
        if pairs.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let widen = |s: &[u32]| s.iter().map(|&t| t as usize).collect::<Vec<_>>();
        let with = |mut v: Vec<usize>, t: u32| {
            v.push(t as usize);
            v
        };
        let (src_ids, src_pos, src_segments) = pack(pairs.iter().map(|p| with(widen(&p.source), EOS)));
        let (dec_ids, dec_pos, dec_segments) = pack(pairs.iter().map(|p| {
            let mut v = vec![BOS as usize];
            v.extend(widen(&p.target));
            v
        }));
        let targets = pairs
            .iter()
            .flat_map(|p| with(widen(&p.target), EOS))
            .map(Some)
            .collect();
        Ok(Self {
            id: id.into(),
            src_ids,
            src_pos,
            src_segments,
            dec_ids,
            dec_pos,
            dec_segments,
            targets,
        })
    }

    pub fn sentences(&self) -> usize {
        self.src_segments.len()
    }

    fn check(&self, vocab_size: usize, max_positions: usize) -> Result<()> {
        if let Some(&t) = self.src_ids.iter().chain(&self.dec_ids).find(|&&t| t >= vocab_size) {
            return Err(Error::Shape(format!("token id {t} outside vocabulary of {vocab_size}")));
        }
        let longest = self.src_segments.iter().chain(&self.dec_segments).map(|s| s.len).max().unwrap_or(0);
        if longest > max_positions {
            return Err(Error::Shape(format!(
                "sequence of {longest} positions exceeds max_positions {max_positions}"
            )));
        }
        Ok(())
    }
}

/// Sinusoidal position encodings for the given positions.
pub fn positions<T: Scalar>(pos: &[usize], dim: usize) -> Matrix<T> {
    let mut m = Matrix::zeros(pos.len(), dim);
    for (r, &p) in pos.iter().enumerate() {
        let row = m.row_mut(r);
        for i in 0..dim {
            let freq = 10000f64.powf(-((i / 2 * 2) as f64) / dim as f64);
            let a = p as f64 * freq;
            row[i] = T::of(if i % 2 == 0 { a.sin() } else { a.cos() });
        }
    }
    m
}

pub(crate) struct Dropout<'r> {
    rate: f64,
    rng: Option<&'r mut ChaCha8Rng>,
}

impl<'r> Dropout<'r> {
    pub(crate) fn new(mode: Mode, rate: f64, rng: &'r mut ChaCha8Rng) -> Self {
        let rng = (mode == Mode::Train && rate > 0.0).then_some(rng);
        Self { rate, rng }
    }

    pub(crate) fn off() -> Self {
        Self { rate: 0.0, rng: None }
    }

    fn apply<T: Scalar>(&mut self, g: &mut Graph<T>, x: NodeId) -> Result<NodeId> {
        let Some(rng) = self.rng.as_deref_mut() else {
            return Ok(x);
        };
        let n = g.value(x).len();
        let keep: Vec<bool> = (0..n).map(|_| rng.random::<f64>() >= self.rate).collect();
        g.dropout(x, &keep, T::of(self.rate))
    }
}

pub(crate) struct Net<'a> {
    pub layout: &'a Layout,
    pub bound: &'a Bound,
    pub dim: usize,
    pub heads: usize,
}

impl Net<'_> {
    fn p(&self, idx: usize) -> NodeId {
        self.bound.node(idx)
    }

    fn linear<T: Scalar>(&self, g: &mut Graph<T>, x: NodeId, w: usize, b: usize) -> Result<NodeId> {
        let y = g.matmul(x, self.p(w), false)?;
        g.add_row(y, self.p(b))
    }

    fn norm<T: Scalar>(&self, g: &mut Graph<T>, x: NodeId, n: NormIdx) -> Result<NodeId> {
        g.layer_norm(x, self.p(n.gain), self.p(n.bias))
    }

    pub fn adapter<T: Scalar>(&self, g: &mut Graph<T>, x: NodeId, a: AdapterIdx) -> Result<NodeId> {
        adapter_graph(g, x, self.p(a.down), self.p(a.down_bias), self.p(a.up), self.p(a.up_bias))
    }

    fn attention<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        x: NodeId,
        memory: NodeId,
        a: AttnIdx,
        layout: &Arc<AttentionLayout>,
    ) -> Result<NodeId> {
        let q = self.linear(g, x, a.wq, a.bq)?;
        let k = g.matmul(memory, self.p(a.wk), false)?;
        let v = self.linear(g, memory, a.wv, a.bv)?;
        let h = g.attention(q, k, v, Arc::clone(layout))?;
        self.linear(g, h, a.wo, a.bo)
    }

    fn ffn<T: Scalar>(&self, g: &mut Graph<T>, x: NodeId, f: FfnIdx) -> Result<NodeId> {
        let h = self.linear(g, x, f.w1, f.b1)?;
        let h = g.relu(h);
        self.linear(g, h, f.w2, f.b2)
    }

    fn residual<T: Scalar, K>(
        &self,
        g: &mut Graph<T>,
        x: NodeId,
        out: NodeId,
        sub: &Sublayer<K>,
        drop: &mut Dropout,
    ) -> Result<NodeId> {
        let h = drop.apply(g, out)?;
        let mut h = self.norm(g, h, sub.norm)?;
        if let Some(a) = sub.adapter {
            h = self.adapter(g, h, a)?;
        }
        g.add(x, h)
    }

    fn embed<T: Scalar>(&self, g: &mut Graph<T>, ids: &[usize], pos: &[usize], drop: &mut Dropout) -> Result<NodeId> {
        let e = g.gather(self.p(self.layout.embedding), ids)?;
        let e = g.scale(e, T::of((self.dim as f64).sqrt()));
        let pe = g.constant(positions(pos, self.dim));
        let x = g.add(e, pe)?;
        drop.apply(g, x)
    }

    pub fn encode<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        ids: &[usize],
        pos: &[usize],
        segments: &[Segment],
        drop: &mut Dropout,
    ) -> Result<NodeId> {
        let layout = Arc::new(AttentionLayout {
            query: segments.to_vec(),
            key: segments.to_vec(),
            heads: self.heads,
            causal: false,
        });
        let mut x = self.embed(g, ids, pos, drop)?;
        for block in &self.layout.encoder {
            let a = self.attention(g, x, x, block.self_attn.inner, &layout)?;
            x = self.residual(g, x, a, &block.self_attn, drop)?;
            let f = self.ffn(g, x, block.ffn.inner)?;
            x = self.residual(g, x, f, &block.ffn, drop)?;
        }
        self.norm(g, x, self.layout.encoder_norm)
    }

    /// Decoder logits for every decoder row.
    #[allow(clippy::too_many_arguments)]
    pub fn decode<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        memory: NodeId,
        memory_segments: &[Segment],
        ids: &[usize],
        pos: &[usize],
        segments: &[Segment],
        drop: &mut Dropout,
    ) -> Result<NodeId> {
        let self_layout = Arc::new(AttentionLayout {
            query: segments.to_vec(),
            key: segments.to_vec(),
            heads: self.heads,
            causal: true,
        });
        let cross_layout = Arc::new(AttentionLayout {
            query: segments.to_vec(),
            key: memory_segments.to_vec(),
            heads: self.heads,
            causal: false,
        });
        let mut x = self.embed(g, ids, pos, drop)?;
        for block in &self.layout.decoder {
            let a = self.attention(g, x, x, block.self_attn.inner, &self_layout)?;
            x = self.residual(g, x, a, &block.self_attn, drop)?;
            let c = self.attention(g, x, memory, block.cross_attn.inner, &cross_layout)?;
            x = self.residual(g, x, c, &block.cross_attn, drop)?;
            let f = self.ffn(g, x, block.ffn.inner)?;
            x = self.residual(g, x, f, &block.ffn, drop)?;
        }
        let h = self.norm(g, x, self.layout.decoder_norm)?;
        g.matmul(h, self.p(self.layout.embedding), true)
    }
}

/// `x + relu(x·D + b_d)·U + b_u`
fn adapter_graph<T: Scalar>(
    g: &mut Graph<T>,
    x: NodeId,
    down: NodeId,
    down_bias: NodeId,
    up: NodeId,
    up_bias: NodeId,
) -> Result<NodeId> {
    let z = g.matmul(x, down, false)?;
    let z = g.add_row(z, down_bias)?;
    let z = g.relu(z);
    let y = g.matmul(z, up, false)?;
    let y = g.add_row(y, up_bias)?;
    g.add(x, y)
}

/// Weights of one adapter module: `down` is d×h, `up` is h×d.
#[derive(Debug, Clone)]
pub struct AdapterWeights<T> {
    pub down: Matrix<T>,
    pub down_bias: Matrix<T>,
    pub up: Matrix<T>,
    pub up_bias: Matrix<T>,
}

/// Applies one adapter to a block of activations (one row per position).
pub fn adapter_forward<T: Scalar>(x: &Matrix<T>, a: &AdapterWeights<T>) -> Result<Matrix<T>> {
    let mut g = Graph::new();
    let ids = [&a.down, &a.down_bias, &a.up, &a.up_bias, x].map(|m| g.constant(m.clone()));
    let out = adapter_graph(&mut g, ids[4], ids[0], ids[1], ids[2], ids[3])?;
    Ok(g.value(out).clone())
}

fn build_loss<T: Scalar>(
    model: &ModelParameters<T>,
    g: &mut Graph<T>,
    bound: &Bound,
    batch: &Batch,
    drop: &mut Dropout,
) -> Result<NodeId> {
    let cfg = &model.config;
    batch.check(cfg.vocab_size, cfg.max_positions)?;
    let net = Net {
        layout: model.layout(),
        bound,
        dim: cfg.model_dim,
        heads: cfg.heads,
    };
    let memory = net.encode(g, &batch.src_ids, &batch.src_pos, &batch.src_segments, drop)?;
    let logits = net.decode(
        g,
        memory,
        &batch.src_segments,
        &batch.dec_ids,
        &batch.dec_pos,
        &batch.dec_segments,
        drop,
    )?;
    let loss = g.cross_entropy(logits, &batch.targets)?;
    g.check_finite(loss).map_err(|e| match e {
        Error::Numerical { context } => Error::numerical(format!("batch {}: {context}", batch.id)),
        other => other,
    })?;
    Ok(loss)
}

/// The loss as a graph builder over whatever parameters get bound. In Train
/// mode the dropout masks are redrawn from `mask_seed` on every call, so
/// repeated evaluations see the same masks.
pub fn loss_builder<'a, T: Scalar>(
    model: &'a ModelParameters<T>,
    batch: &'a Batch,
    mode: Mode,
    mask_seed: u64,
) -> impl Fn(&mut Graph<T>, &Bound) -> Result<NodeId> + 'a {
    move |g, b| {
        let mut rng = ChaCha8Rng::seed_from_u64(mask_seed);
        let mut drop = Dropout::new(mode, model.config.dropout_rate, &mut rng);
        build_loss(model, g, b, batch, &mut drop)
    }
}

/// Mean per-token negative log-likelihood (nats) of the batch targets.
pub fn forward_loss<T: Scalar>(model: &ModelParameters<T>, batch: &Batch, mode: Mode, rng: &mut ChaCha8Rng) -> Result<T> {
    let mut drop = Dropout::new(mode, model.config.dropout_rate, rng);
    autodiff::evaluate(&model.params, |g, b| build_loss(model, g, b, batch, &mut drop))
}

/// Loss and its gradient with respect to the parameters in `view`.
pub fn loss_and_grad<T: Scalar>(
    model: &ModelParameters<T>,
    view: &ParamView,
    batch: &Batch,
    mode: Mode,
    rng: &mut ChaCha8Rng,
) -> Result<GradientBundle<T>> {
    let mut drop = Dropout::new(mode, model.config.dropout_rate, rng);
    let mut bundle = autodiff::grad(&model.params, view, |g, b| build_loss(model, g, b, batch, &mut drop))
        .map_err(|e| match e {
            Error::Numerical { context } if !context.starts_with("batch ") => {
                Error::numerical(format!("batch {}: {context}", batch.id))
            }
            other => other,
        })?;
    bundle.batch_id = Some(batch.id.clone());
    Ok(bundle)
}

/// Encoder output rows for one source sentence, in Eval mode.
pub(crate) fn encode_source<T: Scalar>(model: &ModelParameters<T>, source: &[u32]) -> Result<Matrix<T>> {
    let mut ids: Vec<usize> = source.iter().map(|&t| t as usize).collect();
    ids.push(EOS as usize);
    let cfg = &model.config;
    if let Some(&t) = ids.iter().find(|&&t| t >= cfg.vocab_size) {
        return Err(Error::Shape(format!("token id {t} outside vocabulary of {}", cfg.vocab_size)));
    }
    if ids.len() > cfg.max_positions {
        return Err(Error::Shape(format!(
            "source of {} positions exceeds max_positions {}",
            ids.len(),
            cfg.max_positions
        )));
    }
    let pos: Vec<usize> = (0..ids.len()).collect();
    let seg = [Segment { start: 0, len: ids.len() }];
    let mut g = Graph::new();
    let bound = g.bind(&model.params, &ParamView::new(Vec::new()));
    let net = Net {
        layout: model.layout(),
        bound: &bound,
        dim: cfg.model_dim,
        heads: cfg.heads,
    };
    let out = net.encode(&mut g, &ids, &pos, &seg, &mut Dropout::off())?;
    g.check_finite(out)?;
    Ok(g.value(out).clone())
}

/// Next-token log-probabilities after each decoder prefix (each starting
/// with BOS), conditioned on an encoded source.
pub(crate) fn next_token_log_probs<T: Scalar>(
    model: &ModelParameters<T>,
    memory: &Arc<Matrix<T>>,
    prefixes: &[Vec<u32>],
) -> Result<Vec<Vec<f64>>> {
    let cfg = &model.config;
    let mem_seg = Segment { start: 0, len: memory.rows() };
    let (ids, pos, segs) = pack(prefixes.iter().map(|p| p.iter().map(|&t| t as usize).collect()));
    if let Some(s) = segs.iter().find(|s| s.len > cfg.max_positions) {
        return Err(Error::Shape(format!("prefix of {} positions exceeds max_positions", s.len)));
    }
    let mut g = Graph::new();
    let bound = g.bind(&model.params, &ParamView::new(Vec::new()));
    let mem = g.leaf(Arc::clone(memory), false);
    let net = Net {
        layout: model.layout(),
        bound: &bound,
        dim: cfg.model_dim,
        heads: cfg.heads,
    };
    let mem_segs = vec![mem_seg; segs.len()];
    let logits = net.decode(&mut g, mem, &mem_segs, &ids, &pos, &segs, &mut Dropout::off())?;
    g.check_finite(logits)?;
    let lv = g.value(logits);
    Ok(segs
        .iter()
        .map(|s| {
            let row: Vec<f64> = lv.row(s.start + s.len - 1).iter().map(|x| x.f64()).collect();
            let lse = crate::tensor::log_sum_exp(&row);
            row.into_iter().map(|x| x - lse).collect()
        })
        .collect())
}
