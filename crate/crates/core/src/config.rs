//! Model configuration.

use crate::error::{Error, Result};
use crate::tokenizer::MIN_VOCAB;
use alloc::format;

/// Dimensions and seeding for the toy RoPE transformer.
///
/// The model dimension is always `num_heads * head_dim`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub num_layers: usize,
    pub num_heads: usize,
    pub head_dim: usize,
    pub ffn_dim: usize,
    pub vocab_size: usize,
    pub rope_base: f32,
    /// Per-entry weight std is `weight_scale / sqrt(model_dim)`. 0.5 keeps
    /// activations bounded without normalization layers.
    pub weight_scale: f32,
    pub max_context: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            num_layers: 4,
            num_heads: 4,
            head_dim: 16,
            ffn_dim: 128,
            vocab_size: MIN_VOCAB,
            rope_base: 10_000.0,
            weight_scale: 0.5,
            max_context: 4096,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn model_dim(&self) -> usize {
        self.num_heads * self.head_dim
    }

    /// A small configuration for quick experiments and tests.
    pub fn tiny(seed: u64) -> Self {
        Self {
            num_layers: 2,
            num_heads: 2,
            head_dim: 8,
            ffn_dim: 32,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_layers == 0 || self.num_heads == 0 || self.head_dim == 0 || self.ffn_dim == 0 {
            return Err(Error::InvalidConfig(format!(
                "all counts must be >= 1 (layers {}, heads {}, head_dim {}, ffn {})",
                self.num_layers, self.num_heads, self.head_dim, self.ffn_dim
            )));
        }
        if self.head_dim % 2 != 0 {
            return Err(Error::InvalidConfig(format!("head_dim {} must be even", self.head_dim)));
        }
        if self.vocab_size < MIN_VOCAB {
            return Err(Error::InvalidConfig(format!(
                "vocab_size {} below minimum {MIN_VOCAB}",
                self.vocab_size
            )));
        }
        if !(self.rope_base > 0.0 && self.rope_base.is_finite()) {
            return Err(Error::InvalidConfig(format!("rope_base {} must be positive", self.rope_base)));
        }
        if !(self.weight_scale > 0.0 && self.weight_scale.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "weight_scale {} must be positive",
                self.weight_scale
            )));
        }
        if self.max_context == 0 {
            return Err(Error::InvalidConfig("max_context must be >= 1".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid() {
        ModelConfig::default().validate().unwrap();
    }

    #[test]
    fn odd_head_dim_rejected() {
        let cfg = ModelConfig { head_dim: 7, ..Default::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn small_vocab_rejected() {
        let cfg = ModelConfig { vocab_size: 257, ..Default::default() };
        assert!(cfg.validate().is_err());
    }
}
