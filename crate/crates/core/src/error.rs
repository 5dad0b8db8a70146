//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by the library. Programmer errors (shape mismatches in
/// network wiring) panic instead; everything that can be triggered by data
/// or configuration is reported through this enum.
#[derive(Debug, Error)]
pub enum CoreError {
    #[error("non-finite {quantity} encountered in {context}")]
    NonFinite { quantity: String, context: String },

    #[error("cannot sample from an empty buffer")]
    EmptyBuffer,

    #[error("embedding width mismatch: buffer stores {stored}, query has {query}")]
    EmbeddingWidth { stored: usize, query: usize },

    #[error("transition has no cached embedding; the local-forgetting buffer requires one")]
    MissingEmbedding,

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("dataset construction failed: {0}")]
    Dataset(String),

    #[error("value iteration failed to reach residual {target} after {sweeps} sweeps")]
    NoConvergence { target: f64, sweeps: usize },

    #[error("snapshot error: {0}")]
    Snapshot(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<serde_json::Error> for CoreError {
    fn from(e: serde_json::Error) -> Self {
        CoreError::Snapshot(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, CoreError>;
