use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed NPY header in field `{field}`: {reason}")]
    MalformedHeader { field: &'static str, reason: String },

    #[error("dtype mismatch: expected `{expected}`, found `{found}`")]
    DtypeMismatch {
        expected: &'static str,
        found: String,
    },

    #[error("truncated payload: header declares {expected} values ({expected_bytes} bytes), file holds {found_bytes} bytes")]
    TruncatedPayload {
        expected: usize,
        expected_bytes: usize,
        found_bytes: usize,
    },

    #[error("invalid shape {shape:?}: {reason}")]
    InvalidShape { shape: Vec<usize>, reason: String },

    #[error("non-finite value at flat index {index} in {what}")]
    NonFinite { what: String, index: usize },

    #[error("I/O failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("schema violation in {path}: {reason}")]
    SchemaViolation { path: PathBuf, reason: String },

    #[error("shape mismatch between {left} and {right}: {detail}")]
    ShapeMismatch {
        left: String,
        right: String,
        detail: String,
    },

    #[error("gamma must be finite and non-negative, got {0}")]
    NegativeGamma(f64),

    #[error("temperature must be finite and positive, got {0}")]
    NonpositiveTemperature(f64),

    #[error("empty batch: {0}")]
    EmptyBatch(&'static str),

    #[error("empty score set: {0}")]
    EmptySet(String),

    #[error("label {label} at sample {index} is outside [0, {classes})")]
    LabelOutOfRange {
        index: usize,
        label: i64,
        classes: usize,
    },

    #[error("classifier head violates W^T 1 >= 0 in class column(s) {columns:?}")]
    AssumptionViolated { columns: Vec<usize> },

    #[error("suite has no split named `{0}`")]
    MissingSplit(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("JSON error in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(
        left: impl Into<String>,
        right: impl Into<String>,
        detail: impl Into<String>,
    ) -> Self {
        Error::ShapeMismatch {
            left: left.into(),
            right: right.into(),
            detail: detail.into(),
        }
    }
}
