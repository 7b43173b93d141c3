// SPDX-License-Identifier: MIT OR Apache-2.0

//! Crate-wide error type.

use std::path::PathBuf;

/// Errors surfaced by the laboratory.
#[derive(Debug, thiserror::Error)]
pub enum HlabError {
    #[error("invalid support: {0}")]
    InvalidSupport(String),

    #[error("invalid config field `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("shard {shard}: {reason}")]
    Shard { shard: String, reason: String },

    #[error("shard index {index}: {source}")]
    ShardWrite {
        index: usize,
        #[source]
        source: Box<HlabError>,
    },

    #[error("sentence rejected at position {position}: {reason}")]
    Reject { position: usize, reason: String },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite activation at layer {layer}")]
    NonFinite { layer: usize },

    #[error("non-finite loss at step {step}")]
    Divergence { step: u64 },

    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },

    #[error("invalid metric request: {0}")]
    Metric(String),
}

pub type Result<T> = std::result::Result<T, HlabError>;

impl HlabError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HlabError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        HlabError::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
