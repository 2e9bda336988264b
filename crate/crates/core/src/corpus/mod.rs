//! Parallel text: loading, tokenization and synthetic domains.

mod bpe;
mod synth;
mod vocab;

use std::path::Path;

pub use bpe::{encode_word, learn_bpe};
pub use synth::{synth_domain, BaseLanguage, SyntheticDomainSpec, Transform};
pub use vocab::{ReservedIds, TokenizerMode, Vocabulary, BOS, EOS, PAD, RESERVED, UNK, WORD_BOUNDARY};

use crate::error::{Error, Result};

/// Untokenized aligned text for one domain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawCorpus {
    pub domain_id: String,
    pub pairs: Vec<(String, String)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LoadReport {
    pub kept: usize,
    pub dropped: usize,
}

impl RawCorpus {
    pub fn lines(&self) -> impl Iterator<Item = &str> {
        self.pairs.iter().flat_map(|(s, t)| [s.as_str(), t.as_str()])
    }

    /// Tab-separated `source\ttarget` lines.
    pub fn to_tsv(&self) -> String {
        let mut s = String::new();
        for (a, b) in &self.pairs {
            s.push_str(a);
            s.push('\t');
            s.push_str(b);
            s.push('\n');
        }
        s
    }

    pub fn from_tsv(domain_id: &str, text: &str) -> Result<Self> {
        let pairs = text
            .lines()
            .enumerate()
            .map(|(i, l)| {
                l.split_once('\t')
                    .map(|(a, b)| (a.to_string(), b.to_string()))
                    .ok_or_else(|| Error::Config(format!("{domain_id}: line {} has no tab separator", i + 1)))
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            domain_id: domain_id.to_string(),
            pairs,
        })
    }

    pub fn tokenize(&self, vocab: &Vocabulary) -> Result<ParallelCorpus> {
        let pairs = self
            .pairs
            .iter()
            .map(|(s, t)| SentencePair::new(s, t, vocab))
            .collect::<Result<_>>()?;
        Ok(ParallelCorpus {
            domain_id: self.domain_id.clone(),
            pairs,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentencePair {
    pub source: Vec<u32>,
    pub target: Vec<u32>,
    /// Whitespace words of the raw source line.
    pub source_word_count: usize,
    /// Detokenized target text, used as the BLEU reference.
    pub target_text: String,
}

impl SentencePair {
    pub fn new(source: &str, target: &str, vocab: &Vocabulary) -> Result<Self> {
        Ok(Self {
            source: vocab.tokenize(source)?,
            target: vocab.tokenize(target)?,
            source_word_count: source.split_whitespace().count(),
            target_text: target.split_whitespace().collect::<Vec<_>>().join(" "),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParallelCorpus {
    pub domain_id: String,
    pub pairs: Vec<SentencePair>,
}

impl ParallelCorpus {
    pub fn total_source_words(&self) -> usize {
        self.pairs.iter().map(|p| p.source_word_count).sum()
    }

    pub fn max_source_words(&self) -> usize {
        self.pairs.iter().map(|p| p.source_word_count).max().unwrap_or(0)
    }
}

/// Reads two line-aligned UTF-8 files. Pairs where either side is blank are
/// dropped and counted.
pub fn load_parallel(source_path: &Path, target_path: &Path, domain_id: &str) -> Result<(RawCorpus, LoadReport)> {
    let read = |p: &Path| std::fs::read_to_string(p).map_err(|e| Error::io(p, e));
    let src = read(source_path)?;
    let tgt = read(target_path)?;
    let src_lines: Vec<&str> = src.lines().collect();
    let tgt_lines: Vec<&str> = tgt.lines().collect();
    if src_lines.len() != tgt_lines.len() {
        return Err(Error::Alignment {
            source_lines: src_lines.len(),
            target_lines: tgt_lines.len(),
        });
    }
    let mut report = LoadReport::default();
    let mut pairs = Vec::new();
    for (s, t) in src_lines.into_iter().zip(tgt_lines) {
        let (s, t) = (s.trim(), t.trim());
        if s.is_empty() || t.is_empty() {
            report.dropped += 1;
            continue;
        }
        pairs.push((s.to_string(), t.to_string()));
    }
    report.kept = pairs.len();
    Ok((
        RawCorpus {
            domain_id: domain_id.to_string(),
            pairs,
        },
        report,
    ))
}
