//! On-disk formats: line-delimited dataset files, checkpoints, run configs,
//! and manifests.

mod checkpoint;
mod config;
mod dataset;
mod manifest;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint};
pub use config::{RunConfig, RunConfigFile};
pub use dataset::{read_jsonl, read_jsonl_lenient, write_jsonl, DatasetRecord, DocumentRecord};
pub use manifest::{hash_file, InputHash, Manifest};

use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Record { path: String, line: usize, message: String },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Format(String),
}

impl IoError {
    pub(crate) fn file(path: &Path, source: std::io::Error) -> Self {
        Self::File {
            path: path.display().to_string(),
            source,
        }
    }
}
