//! Seq2seq transformer with accumulated self- and cross-attention across
//! rewriting steps.
//!
//! One [`RewriteSession`] owns a [`Graph`](crate::tensor::Graph) and an
//! [`AttentionCache`]. Each step encodes its document, decodes a question
//! while attending to every sealed block of earlier steps, and then seals
//! its own key/value blocks. Parameters are shared by all steps.

mod cache;
mod config;
mod network;
mod rewrite;

use thiserror::Error;

use crate::tensor::TensorError;

pub use cache::{AttentionCache, BlockKind, LayerCache};
pub use config::ModelConfig;
pub use network::E2eqr;
pub use rewrite::{
    accumulated_attention, argmax_lowest, final_step_loss, rewrite_forward, EncodedExample, FinalOutput,
    RewriteOptions, RewriteOutput, RewriteSession, StepInput, StepOutput, StepState,
};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("{what} length {len} exceeds max_len {max}")]
    Length { what: &'static str, len: usize, max: usize },
    #[error("contract error: {0}")]
    Contract(String),
}
