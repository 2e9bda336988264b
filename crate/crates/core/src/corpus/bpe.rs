//! Byte-pair merges learned jointly over source and target text.
//!
//! Merges never cross word boundaries. The most frequent adjacent pair is
//! merged first; ties go to the lexicographically smallest `(left, right)`.

use std::collections::{BTreeMap, BTreeSet};

use super::vocab::{TokenizerMode, Vocabulary, WORD_BOUNDARY};
use crate::error::{Error, Result};

pub fn learn_bpe<'a>(lines: impl IntoIterator<Item = &'a str>, merges: usize) -> Result<Vocabulary> {
    let mut word_freq: BTreeMap<&str, usize> = BTreeMap::new();
    let mut multiword = false;
    for line in lines {
        let mut n = 0;
        for w in line.split_whitespace() {
            *word_freq.entry(w).or_default() += 1;
            n += 1;
        }
        multiword |= n > 1;
    }
    if word_freq.is_empty() {
        return Err(Error::EmptyCorpus);
    }

    let mut symbols: BTreeSet<String> = BTreeSet::new();
    let mut words: Vec<(Vec<String>, usize)> = word_freq
        .into_iter()
        .map(|(w, f)| {
            let pieces: Vec<String> = w.chars().map(String::from).collect();
            symbols.extend(pieces.iter().cloned());
            (pieces, f)
        })
        .collect();

    let mut vocab_symbols: Vec<String> = symbols.into_iter().collect();
    if multiword {
        vocab_symbols.push(WORD_BOUNDARY.to_string());
    }

    let mut learned = Vec::new();
    for _ in 0..merges {
        let mut counts: BTreeMap<(&str, &str), usize> = BTreeMap::new();
        for (pieces, f) in &words {
            for pair in pieces.windows(2) {
                *counts.entry((&pair[0], &pair[1])).or_default() += f;
            }
        }
        // BTreeMap iterates in lexicographic order, so the first maximum wins ties.
        let Some(best) = counts
            .iter()
            .fold(None::<((&str, &str), usize)>, |best, (&pair, &c)| match best {
                Some((_, bc)) if bc >= c => best,
                _ => Some((pair, c)),
            })
            .map(|(p, _)| (p.0.to_string(), p.1.to_string()))
        else {
            break;
        };
        let merged = format!("{}{}", best.0, best.1);
        for (pieces, _) in &mut words {
            *pieces = apply_merge(pieces, &best.0, &best.1);
        }
        vocab_symbols.push(merged);
        learned.push(best);
    }

    Ok(Vocabulary::from_parts(TokenizerMode::Bpe, vocab_symbols, learned))
}

fn apply_merge(pieces: &[String], left: &str, right: &str) -> Vec<String> {
    let mut out = Vec::with_capacity(pieces.len());
    let mut i = 0;
    while i < pieces.len() {
        if i + 1 < pieces.len() && pieces[i] == left && pieces[i + 1] == right {
            out.push(format!("{left}{right}"));
            i += 2;
        } else {
            out.push(pieces[i].clone());
            i += 1;
        }
    }
    out
}

/// Splits one word into learned pieces by repeatedly applying the
/// lowest-ranked applicable merge.
pub fn encode_word(vocab: &Vocabulary, word: &str) -> Vec<String> {
    let mut pieces: Vec<String> = word.chars().map(String::from).collect();
    loop {
        let best = pieces
            .windows(2)
            .filter_map(|p| vocab.merge_rank(&(p[0].clone(), p[1].clone())))
            .min();
        let Some(rank) = best else { break };
        let (l, r) = vocab.merges()[rank].clone();
        pieces = apply_merge(&pieces, &l, &r);
    }
    pieces
}
