//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    ShapeMismatch {
        context: &'static str,
        expected: String,
        got: String,
    },

    #[error("backward called without a recorded forward pass")]
    NoForwardRecorded,

    #[error("loss is not finite: {0}")]
    NonFiniteLoss(f64),

    #[error("empty batch")]
    EmptyBatch,

    #[error("id {id} out of range for field `{field}` (cardinality {cardinality})")]
    IdOutOfRange {
        field: String,
        id: usize,
        cardinality: usize,
    },

    #[error("invalid record at line {line}: {reason}")]
    InvalidRecord { line: usize, reason: String },

    #[error("invalid schema: {0}")]
    InvalidSchema(String),

    #[error("invalid config value for `{key}`: {reason}")]
    InvalidConfig { key: String, reason: String },

    #[error("schema mismatch between models: {0}")]
    SchemaMismatch(String),

    #[error("negative sampling needs a positive total weight (all counts zero and smoothing 0)")]
    DegenerateSamplingWeights,

    #[error("AUC needs both classes present, got {positives} positives and {negatives} negatives")]
    SingleClass { positives: usize, negatives: usize },

    #[error("duplicate item id {0} while building index")]
    DuplicateItemId(u64),

    #[error("corrupt file {path}: {reason}")]
    CorruptFile { path: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
