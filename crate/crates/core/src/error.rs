use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, FedError>;

/// Coarse grouping used by the command line to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Numeric,
}

#[derive(Debug, Error)]
pub enum FedError {
    #[error("cannot read {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("no header row")]
    NoHeader,
    #[error("malformed row at line {line}: expected {expected} cells, found {found}")]
    MalformedRow {
        line: u64,
        expected: usize,
        found: usize,
    },
    #[error("column `{0}` not found in header")]
    MissingColumn(String),
    #[error("non-numeric cell {value:?} in column `{column}` at line {line}")]
    NonNumeric {
        line: u64,
        column: String,
        value: String,
    },
    #[error("csv: {0}")]
    Csv(String),
    #[error("feature column `{0}` has no observed values")]
    EmptyColumn(String),
    #[error("target column is constant")]
    ConstantTarget,
    #[error("target value {0} is not boolean")]
    NonBinaryTarget(f64),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("empty instance subset")]
    EmptySubset,
    #[error("training subset contains a single class")]
    OneClass,
    #[error("deleting party {party} leaves fewer than two classes to retrain on")]
    ClassMonopoly { party: usize },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("index {index} out of range (size {size})")]
    IndexOutOfRange { index: usize, size: usize },
    #[error("{d} features exceed the enumeration cap of {cap}")]
    EnumerationCap { d: usize, cap: usize },
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("unknown instance reference")]
    UnknownInstance,
    #[error("no model registered with the prediction host")]
    UnregisteredModel,
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl FedError {
    pub fn class(&self) -> ErrorClass {
        match self {
            FedError::InvalidArgument(_) => ErrorClass::Usage,
            FedError::Numeric(_) => ErrorClass::Numeric,
            _ => ErrorClass::Data,
        }
    }
}
