//! BLEU, summary statistics, decoding of evaluation sets, sweeps and plots.

mod bleu;
mod plot;
mod sweep;

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use bleu::{corpus_bleu, BleuScore, MAX_ORDER};
pub use plot::line_plot_svg;
pub use sweep::{architecture_probe, sweep_query, sweep_support, ProbeReport, ProbeRow, SweepAxis, SweepContext, SweepPoint, SweepResult, SweepRow};

use crate::corpus::{SentencePair, Vocabulary};
use crate::error::Result;
use crate::model::{beam_decode, ModelParameters};
use crate::tensor::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeConfig {
    pub beam_size: usize,
    /// Output limit is `2·source_len + max_extra`, capped by the model.
    pub max_extra: usize,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            beam_size: 5,
            max_extra: 10,
        }
    }
}

/// Beam-decodes every source and detokenizes the output.
pub fn translate<T: Scalar>(
    model: &ModelParameters<T>,
    vocab: &Vocabulary,
    pairs: &[SentencePair],
    decode: &DecodeConfig,
) -> Result<Vec<String>> {
    pairs.par_iter().map(|p| translate_ids(model, vocab, &p.source, decode)).collect()
}

fn translate_ids<T: Scalar>(model: &ModelParameters<T>, vocab: &Vocabulary, source: &[u32], decode: &DecodeConfig) -> Result<String> {
    let max_len = 2 * source.len() + decode.max_extra;
    let out = beam_decode(model, source, decode.beam_size, max_len)?;
    Ok(vocab.decode(&out))
}

/// Tokenizes and translates one raw source line.
pub fn translate_line<T: Scalar>(
    model: &ModelParameters<T>,
    vocab: &Vocabulary,
    line: &str,
    decode: &DecodeConfig,
) -> Result<String> {
    translate_ids(model, vocab, &vocab.tokenize(line)?, decode)
}

/// Corpus BLEU of the model's translations against the pairs' targets.
pub fn evaluate_bleu<T: Scalar>(
    model: &ModelParameters<T>,
    vocab: &Vocabulary,
    pairs: &[SentencePair],
    decode: &DecodeConfig,
) -> Result<BleuScore> {
    let hyps = translate(model, vocab, pairs, decode)?;
    let refs: Vec<&str> = pairs.iter().map(|p| p.target_text.as_str()).collect();
    corpus_bleu(&hyps, &refs)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation; 0 for a single value.
    pub std: f64,
}

pub fn summarize(values: &[f64]) -> Summary {
    let n = values.len();
    if n == 0 {
        return Summary { n, mean: f64::NAN, std: f64::NAN };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    };
    Summary { n, mean, std }
}

/// Mean and sample std per key, in key order.
pub fn aggregate<K: Ord + Clone>(items: impl IntoIterator<Item = (K, f64)>) -> BTreeMap<K, Summary> {
    let mut groups: BTreeMap<K, Vec<f64>> = BTreeMap::new();
    for (k, v) in items {
        groups.entry(k).or_default().push(v);
    }
    groups.into_iter().map(|(k, vs)| (k, summarize(&vs))).collect()
}
