use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::bpe;
use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const UNK: u32 = 3;
pub const RESERVED: [&str; 4] = ["<pad>", "<s>", "</s>", "<unk>"];

/// Word separator emitted between words in subword mode.
pub const WORD_BOUNDARY: &str = "\u{2581}";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TokenizerMode {
    #[default]
    Word,
    Bpe,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReservedIds {
    pub pad: u32,
    pub bos: u32,
    pub eos: u32,
    pub unk: u32,
}

impl Default for ReservedIds {
    fn default() -> Self {
        Self {
            pad: PAD,
            bos: BOS,
            eos: EOS,
            unk: UNK,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct VocabularyFile {
    mode: TokenizerMode,
    tokens: Vec<String>,
    merges: Vec<(String, String)>,
    reserved: ReservedIds,
}

/// Joint source/target vocabulary. Ids 0..4 are reserved.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    mode: TokenizerMode,
    tokens: Vec<String>,
    index: HashMap<String, u32>,
    merges: Vec<(String, String)>,
    merge_rank: HashMap<(String, String), usize>,
}

impl Vocabulary {
    pub(crate) fn from_parts(mode: TokenizerMode, symbols: Vec<String>, merges: Vec<(String, String)>) -> Self {
        let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        let mut index = HashMap::new();
        for s in symbols {
            if RESERVED.contains(&s.as_str()) || index.contains_key(&s) {
                continue;
            }
            index.insert(s.clone(), tokens.len() as u32);
            tokens.push(s);
        }
        let merge_rank = merges
            .iter()
            .enumerate()
            .map(|(i, m)| (m.clone(), i))
            .collect();
        Self {
            mode,
            tokens,
            index,
            merges,
            merge_rank,
        }
    }

    /// Word-level vocabulary over every whitespace word in `lines`, ordered
    /// by descending frequency then lexicographically.
    pub fn build_word<'a>(lines: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        let mut freq: BTreeMap<&str, usize> = BTreeMap::new();
        for line in lines {
            for w in line.split_whitespace() {
                *freq.entry(w).or_default() += 1;
            }
        }
        if freq.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut words: Vec<(&str, usize)> = freq.into_iter().collect();
        words.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        Ok(Self::from_parts(
            TokenizerMode::Word,
            words.into_iter().map(|(w, _)| w.to_string()).collect(),
            Vec::new(),
        ))
    }

    pub fn mode(&self) -> TokenizerMode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= RESERVED.len()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub(crate) fn merge_rank(&self, pair: &(String, String)) -> Option<usize> {
        self.merge_rank.get(pair).copied()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    /// Token ids for one line. Every whitespace word yields at least one id;
    /// unknown symbols map to [`UNK`].
    pub fn tokenize(&self, line: &str) -> Result<Vec<u32>> {
        let line = line.trim();
        if line.is_empty() {
            return Err(Error::EmptyLine);
        }
        let mut out = Vec::new();
        match self.mode {
            TokenizerMode::Word => {
                out.extend(line.split_whitespace().map(|w| self.id(w).unwrap_or(UNK)));
            }
            TokenizerMode::Bpe => {
                let boundary = self.id(WORD_BOUNDARY).unwrap_or(UNK);
                for (i, w) in line.split_whitespace().enumerate() {
                    if i > 0 {
                        out.push(boundary);
                    }
                    for piece in bpe::encode_word(self, w) {
                        out.push(self.id(&piece).unwrap_or(UNK));
                    }
                }
            }
        }
        Ok(out)
    }

    /// Whitespace-joined text; reserved ids other than UNK are skipped.
    pub fn decode(&self, ids: &[u32]) -> String {
        let visible = ids.iter().filter(|&&id| !matches!(id, PAD | BOS | EOS));
        match self.mode {
            TokenizerMode::Word => visible
                .map(|&id| self.token(id).unwrap_or(RESERVED[UNK as usize]))
                .collect::<Vec<_>>()
                .join(" "),
            TokenizerMode::Bpe => {
                let mut s = String::new();
                for &id in visible {
                    match self.token(id) {
                        Some(WORD_BOUNDARY) => s.push(' '),
                        Some(t) => s.push_str(t),
                        None => s.push_str(RESERVED[UNK as usize]),
                    }
                }
                s
            }
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let file = VocabularyFile {
            mode: self.mode,
            tokens: self.tokens.clone(),
            merges: self.merges.clone(),
            reserved: ReservedIds::default(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: VocabularyFile = serde_json::from_str(text)?;
        if file.reserved != ReservedIds::default() {
            return Err(Error::Config("vocabulary reserved ids must be pad=0 bos=1 eos=2 unk=3".into()));
        }
        if file.tokens.len() < RESERVED.len() || file.tokens[..4] != RESERVED.map(String::from) {
            return Err(Error::Config("vocabulary must start with the reserved tokens".into()));
        }
        let vocab = Self::from_parts(file.mode, file.tokens[4..].to_vec(), file.merges);
        if vocab.len() != file.tokens.len() {
            return Err(Error::Config("vocabulary tokens are not unique".into()));
        }
        Ok(vocab)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
