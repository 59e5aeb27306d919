use serde::{Deserialize, Serialize};

use crate::assembly::AssemblyConfig;
use crate::error::{Error, Result};

/// Architecture and decoding settings stored alongside the weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub dim: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    /// Scale of the dependency bias added to attention scores.
    pub gamma: f64,
    /// Longest non-empty span the selector may return.
    pub max_span: usize,
    pub d1: usize,
    pub d2: usize,
    pub max_len: usize,
    /// Apply the dependency bias inside decoder self-attention as well.
    pub bias_in_decoder: bool,
    /// One prompt per event instead of one per distinct event type.
    pub duplicate_same_type: bool,
    /// Separate bias parameters for every attention layer.
    pub per_layer_bias: bool,
    /// Event-specific aggregation of encoder states; off replaces it with zeros.
    pub use_eia: bool,
    pub max_markers: usize,
    pub init_std: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            dim: 32,
            heads: 4,
            ffn_dim: 64,
            encoder_layers: 2,
            decoder_layers: 1,
            gamma: 0.01,
            max_span: 10,
            d1: 250,
            d2: 250,
            max_len: 500,
            bias_in_decoder: false,
            duplicate_same_type: false,
            per_layer_bias: false,
            use_eia: true,
            max_markers: 32,
            init_std: 0.02,
        }
    }
}

impl ModelConfig {
    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    pub fn assembly(&self) -> AssemblyConfig {
        AssemblyConfig {
            duplicate_same_type: self.duplicate_same_type,
            max_markers: self.max_markers,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.dim == 0 || self.heads == 0 || !self.dim.is_multiple_of(self.heads) {
            problems.push(format!("dim {} must be a positive multiple of heads {}", self.dim, self.heads));
        }
        if self.ffn_dim == 0 {
            problems.push("ffn_dim must be positive".to_string());
        }
        if self.encoder_layers == 0 {
            problems.push("encoder_layers must be at least 1".to_string());
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            problems.push(format!("gamma must be finite and >= 0, got {}", self.gamma));
        }
        if self.max_span == 0 {
            problems.push("max_span must be at least 1".to_string());
        }
        if self.d1 == 0 || self.d2 == 0 || self.d1 + self.d2 > self.max_len {
            problems.push(format!(
                "need d1, d2 > 0 and d1 + d2 <= max_len (d1={}, d2={}, max_len={})",
                self.d1, self.d2, self.max_len
            ));
        }
        if self.max_markers == 0 {
            problems.push("max_markers must be at least 1".to_string());
        }
        if !(self.init_std > 0.0 && self.init_std.is_finite()) {
            problems.push(format!("init_std must be positive, got {}", self.init_std));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }
}
