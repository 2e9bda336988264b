//! Beam search over any next-token scorer.
//!
//! Scores are cumulative log-probabilities with no length normalization.
//! Candidates are ranked by score, then by parent hypothesis index, then by
//! token id, so ties always resolve toward earlier hypotheses.

use std::cmp::Ordering;
use std::sync::Arc;

use super::forward::{encode_source, next_token_log_probs};
use super::ModelParameters;
use crate::corpus::{BOS, EOS};
use crate::error::Result;
use crate::tensor::{Matrix, Scalar};

/// Next-token log-probabilities for a batch of prefixes. Every prefix
/// starts with BOS.
pub trait StepScorer {
    fn log_probs(&mut self, prefixes: &[Vec<u32>]) -> Result<Vec<Vec<f64>>>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    /// Output tokens, without BOS or EOS.
    pub tokens: Vec<u32>,
    pub score: f64,
    pub finished: bool,
}

fn rank(a: &(f64, usize, u32), b: &(f64, usize, u32)) -> Ordering {
    b.0.partial_cmp(&a.0)
        .unwrap_or(Ordering::Equal)
        .then(a.1.cmp(&b.1))
        .then(a.2.cmp(&b.2))
}

pub fn beam_search(scorer: &mut impl StepScorer, beam_size: usize, max_len: usize) -> Result<Hypothesis> {
    let beam_size = beam_size.max(1);
    let mut live: Vec<(Vec<u32>, f64)> = vec![(Vec::new(), 0.0)];
    let mut finished: Vec<Hypothesis> = Vec::new();
    for _ in 0..max_len.max(1) {
        let prefixes: Vec<Vec<u32>> = live
            .iter()
            .map(|(t, _)| std::iter::once(BOS).chain(t.iter().copied()).collect())
            .collect();
        let lps = scorer.log_probs(&prefixes)?;
        let mut cands: Vec<(f64, usize, u32)> = Vec::new();
        for (i, (lp, (_, s))) in lps.iter().zip(&live).enumerate() {
            for (tok, &l) in lp.iter().enumerate() {
                if l.is_finite() {
                    cands.push((s + l, i, tok as u32));
                }
            }
        }
        cands.sort_by(rank);
        let mut next = Vec::with_capacity(beam_size);
        for (r, &(score, parent, tok)) in cands.iter().enumerate() {
            if tok == EOS {
                if r < beam_size {
                    finished.push(Hypothesis {
                        tokens: live[parent].0.clone(),
                        score,
                        finished: true,
                    });
                }
            } else if next.len() < beam_size {
                let mut t = live[parent].0.clone();
                t.push(tok);
                next.push((t, score));
            }
            if next.len() == beam_size && r + 1 >= beam_size {
                break;
            }
        }
        live = next;
        let best_done = finished.iter().map(|h| h.score).fold(f64::NEG_INFINITY, f64::max);
        // log-probabilities are non-positive, so live scores only fall
        if live.is_empty() || live.iter().all(|(_, s)| *s <= best_done) {
            break;
        }
    }
    let best = |hs: Vec<Hypothesis>| {
        hs.into_iter()
            .enumerate()
            .min_by(|(i, a), (j, b)| b.score.partial_cmp(&a.score).unwrap_or(Ordering::Equal).then(i.cmp(j)))
            .map(|(_, h)| h)
    };
    if let Some(h) = best(finished) {
        return Ok(h);
    }
    let truncated = live
        .into_iter()
        .map(|(tokens, score)| Hypothesis {
            tokens,
            score,
            finished: false,
        })
        .collect();
    Ok(best(truncated).unwrap_or(Hypothesis {
        tokens: Vec::new(),
        score: f64::NEG_INFINITY,
        finished: false,
    }))
}

/// Argmax decoding, lowest token id on ties.
pub fn greedy_search(scorer: &mut impl StepScorer, max_len: usize) -> Result<Hypothesis> {
    let mut tokens = Vec::new();
    let mut score = 0.0;
    for _ in 0..max_len.max(1) {
        let prefix: Vec<u32> = std::iter::once(BOS).chain(tokens.iter().copied()).collect();
        let lp = scorer.log_probs(&[prefix])?.remove(0);
        let (tok, l) = lp
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &l)| if l > best.1 { (i, l) } else { best });
        score += l;
        if tok as u32 == EOS {
            return Ok(Hypothesis { tokens, score, finished: true });
        }
        tokens.push(tok as u32);
    }
    Ok(Hypothesis {
        tokens,
        score,
        finished: false,
    })
}

/// Scorer backed by the translation model for one encoded source.
pub struct ModelScorer<'m, T> {
    model: &'m ModelParameters<T>,
    memory: Arc<Matrix<T>>,
}

impl<'m, T: Scalar> ModelScorer<'m, T> {
    pub fn new(model: &'m ModelParameters<T>, source: &[u32]) -> Result<Self> {
        Ok(Self {
            model,
            memory: Arc::new(encode_source(model, source)?),
        })
    }
}

impl<T: Scalar> StepScorer for ModelScorer<'_, T> {
    fn log_probs(&mut self, prefixes: &[Vec<u32>]) -> Result<Vec<Vec<f64>>> {
        next_token_log_probs(self.model, &self.memory, prefixes)
    }
}

/// Beam-decodes one source sentence. `max_len` is capped so the decoder
/// input never exceeds the model's position range.
pub fn beam_decode<T: Scalar>(model: &ModelParameters<T>, source: &[u32], beam_size: usize, max_len: usize) -> Result<Vec<u32>> {
    let max_len = max_len.min(model.config.max_positions);
    let mut scorer = ModelScorer::new(model, source)?;
    Ok(beam_search(&mut scorer, beam_size, max_len)?.tokens)
}
