//! Crate-wide error type.

use thiserror::Error;

/// Everything that can go wrong across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("non-finite value produced by {op}{context}")]
    NonFinite { op: &'static str, context: String },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),

    #[error("dimension mismatch: {0}")]
    DimMismatch(String),

    #[error("id not found: {0}")]
    MissingId(String),

    #[error("corrupt file {path}: {detail}")]
    CorruptFile { path: String, detail: String },

    #[error("column {0} has no observed value to impute from")]
    AllMissing(String),

    #[error("label/nihss mismatch for id {id}: label={label}, nihss={nihss}")]
    LabelMismatch { id: String, label: u8, nihss: u32 },

    #[error("only one class present: {0}")]
    SingleClass(String),

    #[error("zero-norm row at index {0}")]
    ZeroNorm(usize),

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("dataset has a single site; leave-one-hospital-out needs at least two")]
    SingleSite,

    #[error("split would leave a class empty: {0}")]
    InsufficientClassSamples(String),

    #[error("{what} out of range: {detail}")]
    OutOfRange { what: &'static str, detail: String },

    #[error("checkpoint checksum mismatch: expected {expected}, found {found}")]
    ChecksumMismatch { expected: String, found: String },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Exit-code class used by the CLI: 2 usage, 3 data, 4 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidConfig(_) | Error::OutOfRange { .. } => 2,
            Error::NonFinite { .. } | Error::NotScalar(_) | Error::ZeroNorm(_) => 4,
            _ => 3,
        }
    }
}
