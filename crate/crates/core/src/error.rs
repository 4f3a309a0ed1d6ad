use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("no complete rows remain after dropping incomplete records")]
    NoCompleteRows,

    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("column `{column}` is binary but holds non-binary value {value} at row {row}")]
    NotBinary {
        column: String,
        row: usize,
        value: f64,
    },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("invalid weights: {0}")]
    InvalidWeights(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("empty sample")]
    EmptySample,

    #[error("positivity violation: {0}")]
    Positivity(String),

    #[error("separation detected in logistic fit")]
    Separation,

    #[error("logistic fit did not converge after {0} iterations")]
    NonConvergence(usize),

    #[error("matching produced no pairs")]
    NoMatches,

    #[error("imputation {index} failed: {source}")]
    Imputation {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
