use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors produced across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: left is {left:?}, right is {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),

    #[error("non-finite gradient for parameter `{param}`")]
    NonFiniteGradient { param: String },

    #[error("loss mask selects no rows")]
    EmptyMask,

    #[error("label {label} at row {row} is outside [0, {num_classes})")]
    LabelOutOfRange {
        row: usize,
        label: i64,
        num_classes: usize,
    },

    #[error("row {row} is selected by the mask but carries no label")]
    MissingLabel { row: usize },

    #[error("{0} must not be empty")]
    EmptyInput(&'static str),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid dataset `{name}`: {reason}")]
    InvalidDataset { name: String, reason: String },

    #[error("bundle file {} is missing", path.display())]
    MissingFile { path: PathBuf },

    #[error("{}:{line}: {reason}", path.display())]
    MalformedLine {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("{}:{line}: node index {index} out of range for {num_nodes} nodes", path.display())]
    IndexOutOfRange {
        path: PathBuf,
        line: usize,
        index: usize,
        num_nodes: usize,
    },

    #[error("{}: expected {expected} bytes (num_nodes * feat_dim * 4), found {found}", path.display())]
    FeatureByteCount {
        path: PathBuf,
        expected: u64,
        found: u64,
    },

    #[error("{}: non-finite feature value at byte offset {offset}", path.display())]
    NonFiniteFeature { path: PathBuf, offset: u64 },

    #[error("{}: invalid metadata: {source}", path.display())]
    Meta {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("non-finite loss at epoch {epoch} (seed {seed})")]
    NonFiniteLoss { epoch: usize, seed: u64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
