//! Crate-wide error type.

use thiserror::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller passed an argument outside its documented domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// A market-data file failed to parse; carries the offending row.
    #[error("ingestion error at row {row}: {message}")]
    Ingestion { row: usize, message: String },

    /// Loaded data violates a structural invariant (crossed book,
    /// unsorted ladder, gap in a series).
    #[error("validation error: {0}")]
    Validation(String),

    /// A required series value is missing.
    #[error("data error: {0}")]
    Data(String),

    /// An FCR strategy is incompatible with the battery: the
    /// state-of-charge envelope it implies is empty.
    #[error("infeasible strategy: {0}")]
    InfeasibleStrategy(String),

    /// A configuration value is inconsistent or out of range.
    #[error("config error: {0}")]
    Config(String),

    /// A required input to feature construction is absent.
    #[error("feature error: missing series {0}")]
    Feature(String),

    /// Model artifact does not match the feature schema it is applied to.
    #[error("schema mismatch: model was trained on {expected}, got {actual}")]
    SchemaMismatch { expected: String, actual: String },

    /// The LP/MILP machinery hit an internal limit.
    #[error("solver error: {0}")]
    Solver(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
