//! Adaptive curriculum training.
//!
//! Training walks the main complexity `H` upward through the hop levels
//! present in the data. Each iteration trains on every example with at most
//! `H` hops plus a `ρ` fraction of each harder level; losses below `H` are
//! scaled by `γ_low` and above `H` by `γ_high`.

mod config;
mod dataset;
mod optim;
mod schedule;
mod trainer;

pub use config::{CurriculumConfig, CurriculumPreset, Schedule};
pub use dataset::{build_iteration_dataset, loss_weight, weighted_loss, ComplexityDataset, IterationItem};
pub use optim::{AdamW, AdamWState};
pub use schedule::lr_at;
pub use trainer::{evaluate, predict, train, EvalRecord, EvalSummary, TrainEvent, TrainState, TrainSummary};

use crate::model::ModelError;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("{0}")]
    Contract(String),
    #[error("invalid curriculum config: {0}")]
    Config(String),
    #[error("training diverged at step {step}: loss {loss}")]
    Diverged { step: usize, loss: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{0}")]
    Hook(String),
}
