use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Where adapter modules sit inside the transformer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AdapterPlacement {
    /// One adapter per block, on the block's last sub-layer.
    #[default]
    Block,
    /// One adapter on every attention and feed-forward sub-layer.
    Sublayer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransformerConfig {
    pub encoder_blocks: usize,
    pub decoder_blocks: usize,
    pub model_dim: usize,
    pub ffn_dim: usize,
    pub heads: usize,
    pub dropout_rate: f64,
    pub adapter_hidden: Option<usize>,
    pub adapter_placement: AdapterPlacement,
    pub vocab_size: usize,
    pub max_positions: usize,
}

impl Default for TransformerConfig {
    fn default() -> Self {
        Self::desk(512)
    }
}

impl TransformerConfig {
    /// Desk-scale default.
    pub fn desk(vocab_size: usize) -> Self {
        Self {
            encoder_blocks: 2,
            decoder_blocks: 2,
            model_dim: 64,
            ffn_dim: 256,
            heads: 4,
            dropout_rate: 0.1,
            adapter_hidden: Some(8),
            adapter_placement: AdapterPlacement::Block,
            vocab_size,
            max_positions: 128,
        }
    }

    /// One block each side at width 32, the size the experiment defaults
    /// are tuned for.
    pub fn lab(vocab_size: usize) -> Self {
        Self {
            encoder_blocks: 1,
            decoder_blocks: 1,
            model_dim: 32,
            ffn_dim: 64,
            heads: 2,
            adapter_hidden: Some(16),
            max_positions: 64,
            ..Self::desk(vocab_size)
        }
    }

    /// Base-transformer sizes with a 40k joint vocabulary, kept for
    /// parameter-count checks.
    pub fn full_scale() -> Self {
        Self {
            encoder_blocks: 6,
            decoder_blocks: 6,
            model_dim: 512,
            ffn_dim: 2048,
            heads: 8,
            dropout_rate: 0.1,
            adapter_hidden: Some(32),
            adapter_placement: AdapterPlacement::Block,
            vocab_size: 40_000,
            max_positions: 1024,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.heads.max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.model_dim == 0 || self.heads == 0 || self.model_dim % self.heads != 0 {
            return bad(format!(
                "model_dim {} must be a positive multiple of heads {}",
                self.model_dim, self.heads
            ));
        }
        if self.ffn_dim == 0 {
            return bad("ffn_dim must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout_rate {} outside [0, 1)", self.dropout_rate));
        }
        if self.adapter_hidden == Some(0) {
            return bad("adapter_hidden must be at least 1 when present".into());
        }
        if self.vocab_size <= crate::corpus::RESERVED.len() {
            return bad(format!("vocab_size {} leaves no room for ordinary tokens", self.vocab_size));
        }
        if self.max_positions < 2 {
            return bad("max_positions must be at least 2".into());
        }
        Ok(())
    }

    pub fn without_adapters(&self) -> Self {
        Self {
            adapter_hidden: None,
            ..self.clone()
        }
    }

    pub fn has_adapters(&self) -> bool {
        self.adapter_hidden.is_some()
    }
}
