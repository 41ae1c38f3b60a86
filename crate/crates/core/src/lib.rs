//! End-to-end question rewriting for multi-hop question generation.
//!
//! A single encoder–decoder transformer is unrolled over the documents of an
//! example. Each step encodes one document and rewrites the previous step's
//! question into one that needs one more hop; the decoder attends to the
//! self-attention and cross-attention key/value blocks of every earlier step.

pub mod cli;
pub mod curriculum;
pub mod docgraph;
pub mod io;
pub mod metrics;
pub mod model;
pub mod synthetic;
pub mod tensor;
pub mod vocab;
