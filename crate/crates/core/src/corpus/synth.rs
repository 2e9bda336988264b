//! Synthetic translation domains over a shared base language.
//!
//! Source sentences are uniform draws from a fixed base vocabulary. Each
//! domain maps a source sentence to its target through a chain of
//! transforms, written as `+`-separated generator names:
//!
//! - `copy`: target equals source
//! - `reverse`: word order reversed
//! - `shift:<k>`: every word replaced by the base word `k` positions later (cyclic)
//! - `lexicon:<seed>[:<percent>]`: a seeded derangement of `percent`% of the
//!   base word types (default 25), all other words unchanged
//!
//! `lexicon:7+lexicon:12` applies lexicon 7 and then lexicon 12.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::RawCorpus;
use crate::error::{Error, Result};
use crate::seed::derive_seed;

const DEFAULT_LEXICON_PERCENT: u32 = 25;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Transform {
    Copy,
    Reverse,
    Shift(usize),
    Lexicon { seed: u64, percent: u32 },
}

impl fmt::Display for Transform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Transform::Copy => write!(f, "copy"),
            Transform::Reverse => write!(f, "reverse"),
            Transform::Shift(k) => write!(f, "shift:{k}"),
            Transform::Lexicon { seed, percent } if *percent == DEFAULT_LEXICON_PERCENT => write!(f, "lexicon:{seed}"),
            Transform::Lexicon { seed, percent } => write!(f, "lexicon:{seed}:{percent}"),
        }
    }
}

/// A parsed generator chain such as `lexicon:3+reverse`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntheticDomainSpec {
    transforms: Vec<Transform>,
}

impl SyntheticDomainSpec {
    pub fn transforms(&self) -> &[Transform] {
        &self.transforms
    }
}

impl fmt::Display for SyntheticDomainSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.transforms.iter().map(ToString::to_string).collect();
        write!(f, "{}", parts.join("+"))
    }
}

impl FromStr for SyntheticDomainSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let unknown = || Error::UnknownDomain(s.to_string());
        let mut transforms = Vec::new();
        for part in s.split('+') {
            let mut fields = part.trim().split(':');
            let t = match (fields.next(), fields.next(), fields.next(), fields.next()) {
                (Some("copy"), None, ..) => Transform::Copy,
                (Some("reverse"), None, ..) => Transform::Reverse,
                (Some("shift"), Some(k), None, _) => Transform::Shift(k.parse().map_err(|_| unknown())?),
                (Some("lexicon"), Some(seed), pct, None) => {
                    let percent = match pct {
                        Some(p) => p.parse().map_err(|_| unknown())?,
                        None => DEFAULT_LEXICON_PERCENT,
                    };
                    if percent > 100 {
                        return Err(unknown());
                    }
                    Transform::Lexicon {
                        seed: seed.parse().map_err(|_| unknown())?,
                        percent,
                    }
                }
                _ => return Err(unknown()),
            };
            transforms.push(t);
        }
        Ok(Self { transforms })
    }
}

/// Vocabulary and sentence-length range shared by all synthetic domains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaseLanguage {
    pub vocab_size: usize,
    pub min_len: usize,
    pub max_len: usize,
}

impl Default for BaseLanguage {
    fn default() -> Self {
        Self {
            vocab_size: 48,
            min_len: 3,
            max_len: 8,
        }
    }
}

const ONSETS: [&str; 12] = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t"];
const VOWELS: [&str; 5] = ["a", "e", "i", "o", "u"];

impl BaseLanguage {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 2 || self.vocab_size > 3600 {
            return Err(Error::Config("base vocabulary size must be in 2..=3600".into()));
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err(Error::Config("sentence lengths need 1 <= min_len <= max_len".into()));
        }
        Ok(())
    }

    /// Two-syllable words, distinct for every index below 3600.
    pub fn word(&self, i: usize) -> String {
        let syl = |j: usize| format!("{}{}", ONSETS[j % 12], VOWELS[(j / 12) % 5]);
        format!("{}{}", syl(i % 60), syl(i / 60))
    }

    pub fn words(&self) -> Vec<String> {
        (0..self.vocab_size).map(|i| self.word(i)).collect()
    }
}

fn lexicon_map(size: usize, seed: u64, percent: u32) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "lexicon"));
    let moved = ((size * percent as usize) as f64 / 100.0).round() as usize;
    let mut map: Vec<usize> = (0..size).collect();
    if moved < 2 {
        return map;
    }
    let mut chosen: Vec<usize> = rand::seq::index::sample(&mut rng, size, moved).into_vec();
    chosen.shuffle(&mut rng);
    // cyclic derangement over the chosen types
    for (i, &w) in chosen.iter().enumerate() {
        map[w] = chosen[(i + 1) % moved];
    }
    map
}

impl SyntheticDomainSpec {
    /// Maps base word indices of a source sentence to target indices.
    pub fn apply(&self, base: &BaseLanguage, source: &[usize]) -> Vec<usize> {
        let mut out = source.to_vec();
        for t in &self.transforms {
            match t {
                Transform::Copy => {}
                Transform::Reverse => out.reverse(),
                Transform::Shift(k) => out.iter_mut().for_each(|w| *w = (*w + k) % base.vocab_size),
                Transform::Lexicon { seed, percent } => {
                    let map = lexicon_map(base.vocab_size, *seed, *percent);
                    out.iter_mut().for_each(|w| *w = map[*w]);
                }
            }
        }
        out
    }
}

/// Deterministic corpus of `n_pairs` sentence pairs for one synthetic domain.
pub fn synth_domain(
    domain_id: &str,
    spec: &SyntheticDomainSpec,
    base: &BaseLanguage,
    n_pairs: usize,
    seed: u64,
) -> Result<RawCorpus> {
    base.validate()?;
    if n_pairs == 0 {
        return Err(Error::Config(format!("domain `{domain_id}` needs at least one pair")));
    }
    let words = base.words();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("synth/{spec}")));
    let pairs = (0..n_pairs)
        .map(|_| {
            let len = rng.random_range(base.min_len..=base.max_len);
            let src: Vec<usize> = (0..len).map(|_| rng.random_range(0..base.vocab_size)).collect();
            let tgt = spec.apply(base, &src);
            let join = |ids: &[usize]| ids.iter().map(|&i| words[i].as_str()).collect::<Vec<_>>().join(" ");
            (join(&src), join(&tgt))
        })
        .collect();
    Ok(RawCorpus {
        domain_id: domain_id.to_string(),
        pairs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(s: &str) -> SyntheticDomainSpec {
        s.parse().unwrap()
    }

    #[test]
    fn parses_and_prints_generator_chains() {
        for s in ["copy", "reverse", "shift:3", "lexicon:9", "lexicon:9:40+reverse"] {
            assert_eq!(spec(s).to_string(), s);
        }
        assert_eq!(spec("lexicon:9:25").to_string(), "lexicon:9");
        for bad in ["", "rot13", "shift:x", "lexicon", "lexicon:1:101", "copy:2"] {
            assert!(matches!(bad.parse::<SyntheticDomainSpec>(), Err(Error::UnknownDomain(_))), "{bad}");
        }
    }

    #[test]
    fn copy_domain_targets_equal_sources() {
        let c = synth_domain("c", &spec("copy"), &BaseLanguage::default(), 1, 5).unwrap();
        assert_eq!(c.pairs[0].0, c.pairs[0].1);
    }

    #[test]
    fn reverse_domain_reverses() {
        let base = BaseLanguage::default();
        assert_eq!(spec("reverse").apply(&base, &[0, 1, 2]), vec![2, 1, 0]);
        let c = synth_domain("r", &spec("reverse"), &base, 4, 1).unwrap();
        for (s, t) in &c.pairs {
            let mut w: Vec<&str> = s.split(' ').collect();
            w.reverse();
            assert_eq!(w.join(" "), *t);
        }
    }

    #[test]
    fn shift_is_cyclic() {
        let base = BaseLanguage { vocab_size: 5, ..Default::default() };
        assert_eq!(spec("shift:2").apply(&base, &[0, 3, 4]), vec![2, 0, 1]);
    }

    #[test]
    fn lexicon_moves_the_requested_share_of_types() {
        let base = BaseLanguage::default();
        let map = lexicon_map(base.vocab_size, 4, 25);
        let moved = map.iter().enumerate().filter(|(i, &m)| *i != m).count();
        assert_eq!(moved, 12);
        let mut image = map.clone();
        image.sort_unstable();
        assert_eq!(image, (0..base.vocab_size).collect::<Vec<_>>());
        assert_ne!(lexicon_map(base.vocab_size, 5, 25), map);
    }

    #[test]
    fn deterministic_given_inputs() {
        let base = BaseLanguage::default();
        let a = synth_domain("d", &spec("lexicon:1+shift:2"), &base, 50, 3).unwrap();
        let b = synth_domain("d", &spec("lexicon:1+shift:2"), &base, 50, 3).unwrap();
        assert_eq!(a, b);
        let c = synth_domain("d", &spec("lexicon:1+shift:2"), &base, 50, 4).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn base_words_are_distinct() {
        let base = BaseLanguage { vocab_size: 3600, ..Default::default() };
        let mut w = base.words();
        w.sort();
        w.dedup();
        assert_eq!(w.len(), 3600);
    }
}
