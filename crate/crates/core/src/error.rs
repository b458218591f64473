use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("layer {layer}: expected input width {expected}, got {found}")]
    DimensionMismatch {
        layer: usize,
        expected: usize,
        found: usize,
    },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("architecture mismatch: {0}")]
    ArchitectureMismatch(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("label {label} at sample {index} is outside [0, {classes})")]
    LabelOutOfRange { index: usize, label: usize, classes: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("client {client_id}: non-finite loss at step {step}")]
    NonFiniteLoss { client_id: usize, step: usize },

    #[error("layer {layer}: pruning {pruned} of {cohort} clients leaves an empty trusted set")]
    EmptyTrustedSet { layer: usize, cohort: usize, pruned: usize },

    #[error("{path}: row {row}: {message}")]
    Parse { path: PathBuf, row: usize, message: String },

    #[error("config field `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("need at least {needed} records, got {found}")]
    InsufficientRecords { needed: usize, found: usize },

    #[error("round {round}: {source}")]
    Round {
        round: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    /// True for errors caused by an invalid configuration rather than a runtime failure.
    pub fn is_config(&self) -> bool {
        match self {
            Error::Config { .. } | Error::InvalidParameter { .. } | Error::Parse { .. } => true,
            Error::Round { source, .. } => source.is_config(),
            _ => false,
        }
    }
}
