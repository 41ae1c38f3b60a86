use serde::{Deserialize, Serialize};

use super::ModelError;

/// Architecture hyperparameters. `d_k = d_model / n_heads`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub n_enc_layers: usize,
    pub n_dec_layers: usize,
    /// Longest encoder input and longest decoder input, in tokens.
    pub max_len: usize,
    /// Decoder self-attention sees sealed rows of earlier steps.
    pub mode_accumulated_sa: bool,
    /// Decoder cross-attention sees encoder outputs of earlier steps.
    pub mode_accumulated_ca: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vocab_size: 512,
            d_model: 64,
            n_heads: 4,
            d_ff: 256,
            n_enc_layers: 2,
            n_dec_layers: 2,
            max_len: 64,
            mode_accumulated_sa: true,
            mode_accumulated_ca: true,
        }
    }
}

impl ModelConfig {
    pub fn d_k(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |m: &str| Err(ModelError::Config(m.to_string()));
        if self.vocab_size <= crate::vocab::UNK_ID as usize {
            return fail("vocab_size must cover the special tokens");
        }
        if self.d_model == 0 || self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return fail("d_model must be a positive multiple of n_heads");
        }
        if self.d_ff == 0 || self.n_enc_layers == 0 || self.n_dec_layers == 0 {
            return fail("d_ff and layer counts must be positive");
        }
        if self.max_len < 2 {
            return fail("max_len must be at least 2");
        }
        Ok(())
    }
}
