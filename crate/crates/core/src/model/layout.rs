//! Named parameter layout of the encoder-decoder and its initialization.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rand_chacha::ChaCha8Rng;

use super::config::{AdapterPlacement, TransformerConfig};
use crate::autodiff::{ParamGroup, ParamSet};
use crate::tensor::{Matrix, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttnIdx {
    pub wq: usize,
    pub bq: usize,
    /// Keys carry no bias: softmax is invariant to it.
    pub wk: usize,
    pub wv: usize,
    pub bv: usize,
    pub wo: usize,
    pub bo: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FfnIdx {
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NormIdx {
    pub gain: usize,
    pub bias: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AdapterIdx {
    pub down: usize,
    pub down_bias: usize,
    pub up: usize,
    pub up_bias: usize,
}

/// A residual sub-layer: `x + A(LN(dropout(f(x))))`, where `A` is the
/// adapter when present and the identity otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Sublayer<K> {
    pub inner: K,
    pub norm: NormIdx,
    pub adapter: Option<AdapterIdx>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncoderBlock {
    pub self_attn: Sublayer<AttnIdx>,
    pub ffn: Sublayer<FfnIdx>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecoderBlock {
    pub self_attn: Sublayer<AttnIdx>,
    pub cross_attn: Sublayer<AttnIdx>,
    pub ffn: Sublayer<FfnIdx>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub embedding: usize,
    pub encoder: Vec<EncoderBlock>,
    pub encoder_norm: NormIdx,
    pub decoder: Vec<DecoderBlock>,
    pub decoder_norm: NormIdx,
}

/// Pushes parameters in a fixed order, drawing initial values from `init`.
struct Builder<'a, T, F> {
    params: &'a mut ParamSet<T>,
    init: F,
}

#[derive(Debug, Clone, Copy)]
pub(crate) enum Init {
    Zeros,
    Ones,
    Xavier,
    Normal(f64),
}

impl<T: Scalar, F: FnMut(Init, usize, usize) -> Matrix<T>> Builder<'_, T, F> {
    fn push(&mut self, name: String, group: ParamGroup, rows: usize, cols: usize, init: Init) -> usize {
        let value = (self.init)(init, rows, cols);
        self.params.push(name, group, value)
    }

    fn attn(&mut self, p: &str, d: usize) -> AttnIdx {
        let mut w = |s: &str| self.push(format!("{p}.{s}"), ParamGroup::Base, d, d, Init::Xavier);
        let (wq, wk, wv, wo) = (w("wq"), w("wk"), w("wv"), w("wo"));
        let mut b = |s: &str| self.push(format!("{p}.{s}"), ParamGroup::Base, 1, d, Init::Zeros);
        let (bq, bv, bo) = (b("bq"), b("bv"), b("bo"));
        AttnIdx { wq, bq, wk, wv, bv, wo, bo }
    }

    fn ffn(&mut self, p: &str, d: usize, f: usize) -> FfnIdx {
        FfnIdx {
            w1: self.push(format!("{p}.w1"), ParamGroup::Base, d, f, Init::Xavier),
            b1: self.push(format!("{p}.b1"), ParamGroup::Base, 1, f, Init::Zeros),
            w2: self.push(format!("{p}.w2"), ParamGroup::Base, f, d, Init::Xavier),
            b2: self.push(format!("{p}.b2"), ParamGroup::Base, 1, d, Init::Zeros),
        }
    }

    fn norm(&mut self, p: &str, d: usize) -> NormIdx {
        NormIdx {
            gain: self.push(format!("{p}.gain"), ParamGroup::Base, 1, d, Init::Ones),
            bias: self.push(format!("{p}.bias"), ParamGroup::Base, 1, d, Init::Zeros),
        }
    }

    fn adapter(&mut self, p: &str, d: usize, h: usize) -> AdapterIdx {
        let g = ParamGroup::Adapter;
        AdapterIdx {
            down: self.push(format!("{p}.down"), g, d, h, Init::Xavier),
            down_bias: self.push(format!("{p}.down_bias"), g, 1, h, Init::Zeros),
            up: self.push(format!("{p}.up"), g, h, d, Init::Zeros),
            up_bias: self.push(format!("{p}.up_bias"), g, 1, d, Init::Zeros),
        }
    }

    fn sublayer<K>(&mut self, p: &str, d: usize, adapter: Option<usize>, inner: impl FnOnce(&mut Self) -> K) -> Sublayer<K> {
        let inner = inner(self);
        let norm = self.norm(&format!("{p}.norm"), d);
        let adapter = adapter.map(|h| self.adapter(&format!("{p}.adapter"), d, h));
        Sublayer { inner, norm, adapter }
    }
}

pub(crate) fn build<T: Scalar>(
    config: &TransformerConfig,
    init: impl FnMut(Init, usize, usize) -> Matrix<T>,
) -> (ParamSet<T>, Layout) {
    let mut params = ParamSet::new();
    let mut b = Builder { params: &mut params, init };
    let (d, f) = (config.model_dim, config.ffn_dim);
    let h = config.adapter_hidden;
    let every = |last: bool| match config.adapter_placement {
        AdapterPlacement::Sublayer => h,
        AdapterPlacement::Block if last => h,
        AdapterPlacement::Block => None,
    };
    let embedding = b.push("embedding".into(), ParamGroup::Base, config.vocab_size, d, Init::Normal((d as f64).powf(-0.5)));
    let encoder = (0..config.encoder_blocks)
        .map(|i| {
            let p = format!("encoder.{i}");
            EncoderBlock {
                self_attn: b.sublayer(&format!("{p}.self_attn"), d, every(false), |b| b.attn(&format!("{p}.self_attn"), d)),
                ffn: b.sublayer(&format!("{p}.ffn"), d, every(true), |b| b.ffn(&format!("{p}.ffn"), d, f)),
            }
        })
        .collect();
    let encoder_norm = b.norm("encoder.norm", d);
    let decoder = (0..config.decoder_blocks)
        .map(|i| {
            let p = format!("decoder.{i}");
            DecoderBlock {
                self_attn: b.sublayer(&format!("{p}.self_attn"), d, every(false), |b| b.attn(&format!("{p}.self_attn"), d)),
                cross_attn: b.sublayer(&format!("{p}.cross_attn"), d, every(false), |b| b.attn(&format!("{p}.cross_attn"), d)),
                ffn: b.sublayer(&format!("{p}.ffn"), d, every(true), |b| b.ffn(&format!("{p}.ffn"), d, f)),
            }
        })
        .collect();
    let decoder_norm = b.norm("decoder.norm", d);
    (
        params,
        Layout {
            embedding,
            encoder,
            encoder_norm,
            decoder,
            decoder_norm,
        },
    )
}

pub(crate) fn random_init<T: Scalar>(rng: &mut ChaCha8Rng) -> impl FnMut(Init, usize, usize) -> Matrix<T> + '_ {
    move |init, rows, cols| {
        let data = match init {
            Init::Zeros => vec![T::zero(); rows * cols],
            Init::Ones => vec![T::one(); rows * cols],
            Init::Xavier => {
                let a = (6.0 / (rows + cols) as f64).sqrt();
                (0..rows * cols).map(|_| T::of(rng.random_range(-a..a))).collect()
            }
            Init::Normal(std) => {
                let normal = Normal::new(0.0, std).expect("positive std");
                (0..rows * cols).map(|_| T::of(normal.sample(rng))).collect()
            }
        };
        Matrix::from_vec(rows, cols, data).expect("init shape")
    }
}

/// Shapes-only layout, for counting parameters without allocating them.
pub fn parameter_counts(config: &TransformerConfig) -> (usize, usize) {
    let mut shapes = Vec::new();
    let (params, _) = build::<f32>(config, |_, r, c| {
        shapes.push(r * c);
        Matrix::zeros(0, 0)
    });
    let mut base = 0;
    let mut adapter = 0;
    for (i, n) in shapes.into_iter().enumerate() {
        match params.group(i) {
            ParamGroup::Base => base += n,
            ParamGroup::Adapter => adapter += n,
        }
    }
    (base, adapter)
}
