//! Crate-wide error type.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("scene spec has no objects")]
    EmptySpec,

    #[error("invalid base/novel split: {0}")]
    BadSplit(String),

    #[error("invalid depth {0}; expected a finite positive value")]
    InvalidDepth(f64),

    #[error("point is behind the camera (z = {z})")]
    BehindCamera { z: f64 },

    #[error("raster dimensions {got:?} do not match expected {expected:?}")]
    DimMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },

    #[error("frame carries no source-point provenance")]
    MissingProvenance,

    #[error("entity id {id} out of range for vocabulary of {vocab_len}")]
    VocabMismatch { id: i64, vocab_len: usize },

    #[error("format error in {path} at byte {offset}: {message}")]
    Format {
        path: PathBuf,
        offset: u64,
        message: String,
    },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("stale forward cache: {0}")]
    StaleCache(String),

    #[error("zero-length vector has no direction")]
    ZeroVector,

    #[error("empty batch")]
    EmptyBatch,

    #[error("no labeled points in any partial cloud")]
    NoLabels,

    #[error("pseudo-label set has no accepted points")]
    NoAcceptedLabels,

    #[error("vocabulary is empty")]
    EmptyVocabulary,

    #[error("label {label} out of range for {classes} classes")]
    OutOfRangeLabel { label: i64, classes: usize },

    #[error("confusion matrix has no evaluated points")]
    EmptyMatrix,

    #[error("missing artifact: {0}")]
    MissingArtifacts(PathBuf),

    #[error("invalid config value for `{key}`: {message}")]
    InvalidConfig { key: String, message: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid_config(key: &str, message: impl Into<String>) -> Self {
        Error::InvalidConfig {
            key: key.to_string(),
            message: message.into(),
        }
    }

    pub fn format(path: impl Into<PathBuf>, offset: u64, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            offset,
            message: message.into(),
        }
    }
}
