//! Architecture hyperparameters.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConfigError {
    #[error("{name} must be positive")]
    ZeroField { name: &'static str },
    #[error("n_heads ({n_heads}) must be divisible by n_kv_heads ({n_kv_heads})")]
    HeadsNotDivisible { n_heads: usize, n_kv_heads: usize },
    #[error("n_heads × head_dim ({product}) must equal d_model ({d_model})")]
    HeadDimMismatch { product: usize, d_model: usize },
    #[error("head_dim ({0}) must be even for rotary embedding")]
    OddHeadDim(usize),
    #[error("bytes_per_value must be 2 or 4, got {0}")]
    BadBytesPerValue(usize),
}

/// Hyperparameters driving both the transformer and the cache accounting.
///
/// `bytes_per_value` is the per-element size assumed by the footprint
/// formulas (2 for FP16-style accounting, 4 for FP32); it is independent of
/// the scalar type the model actually computes in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_kv_heads: usize,
    pub head_dim: usize,
    pub vocab_size: usize,
    pub max_seq_len: usize,
    pub bytes_per_value: usize,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        for (name, v) in [
            ("n_layers", self.n_layers),
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("n_kv_heads", self.n_kv_heads),
            ("head_dim", self.head_dim),
            ("vocab_size", self.vocab_size),
            ("max_seq_len", self.max_seq_len),
        ] {
            if v == 0 {
                return Err(ConfigError::ZeroField { name });
            }
        }
        if !self.n_heads.is_multiple_of(self.n_kv_heads) {
            return Err(ConfigError::HeadsNotDivisible {
                n_heads: self.n_heads,
                n_kv_heads: self.n_kv_heads,
            });
        }
        if self.n_heads * self.head_dim != self.d_model {
            return Err(ConfigError::HeadDimMismatch {
                product: self.n_heads * self.head_dim,
                d_model: self.d_model,
            });
        }
        if !self.head_dim.is_multiple_of(2) {
            return Err(ConfigError::OddHeadDim(self.head_dim));
        }
        if self.bytes_per_value != 2 && self.bytes_per_value != 4 {
            return Err(ConfigError::BadBytesPerValue(self.bytes_per_value));
        }
        Ok(())
    }

    /// Query projection width.
    pub fn q_dim(&self) -> usize {
        self.n_heads * self.head_dim
    }

    /// Key/value projection width.
    pub fn kv_dim(&self) -> usize {
        self.n_kv_heads * self.head_dim
    }

    /// SwiGLU hidden width: 8/3 · d_model, rounded to a multiple of 8.
    pub fn mlp_hidden(&self) -> usize {
        8 * (self.d_model as f64 / 3.0).round() as usize
    }

    /// The desk-scale default: 8 layers, 128 wide, GQA with 2 KV heads, and a
    /// byte-level vocabulary (256 bytes + PAD/BOS/EOS).
    pub fn toy() -> Self {
        ModelConfig {
            n_layers: 8,
            d_model: 128,
            n_heads: 4,
            n_kv_heads: 2,
            head_dim: 32,
            vocab_size: 259,
            max_seq_len: 512,
            bytes_per_value: 4,
        }
    }

    /// Published architecture shapes, usable for footprint accounting without
    /// instantiating weights. `None` for unknown names.
    pub fn accounting_preset(name: &str) -> Option<Self> {
        let (n_layers, d_model, n_heads, n_kv_heads, head_dim) = match name {
            "llama2-7b" => (32, 4096, 32, 32, 128),
            "llama3-8b" => (32, 4096, 32, 8, 128),
            "qwen3-8b" => (36, 4096, 32, 8, 128),
            "toy" => return Some(Self::toy()),
            _ => return None,
        };
        Some(ModelConfig {
            n_layers,
            d_model,
            n_heads,
            n_kv_heads,
            head_dim,
            vocab_size: 32000,
            max_seq_len: 65536,
            bytes_per_value: 2,
        })
    }
}
