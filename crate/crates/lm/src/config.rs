use serde::{Deserialize, Serialize};

use crate::error::{LmError, Result};

/// Architecture and optimization settings for the decoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LmConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    /// Maximum sequence length (positional table size).
    pub context_len: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Fraction of optimizer steps used for linear warmup.
    pub warmup_frac: f64,
    /// Final learning rate as a fraction of the peak (cosine decay).
    pub min_lr_frac: f64,
    pub grad_clip: f64,
    /// Over-long sequences keep their last `context_len` tokens instead of
    /// failing validation.
    pub truncate: bool,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            n_layers: 4,
            d_model: 128,
            n_heads: 4,
            context_len: 512,
            learning_rate: 1e-3,
            batch_size: 16,
            epochs: 10,
            seed: 0,
            warmup_frac: 0.05,
            min_lr_frac: 0.1,
            grad_clip: 1.0,
            truncate: true,
        }
    }
}

impl LmConfig {
    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(LmError::Config(m.to_string()));
        if self.n_layers == 0 || self.d_model == 0 || self.n_heads == 0 {
            return bad("layers, width and heads must be positive");
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return bad("d_model must be divisible by n_heads");
        }
        if self.context_len < 2 {
            return bad("context_len must be at least 2");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        Ok(())
    }
}
