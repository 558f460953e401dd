use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: {what} (expected {expected}, found {found})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("numerical breakdown in signed subset sum: {0}")]
    NumericalBreakdown(String),

    #[error("cluster has {ones} successes, above the subset cap of {cap} (2^{ones} terms)")]
    SubsetCapExceeded { ones: usize, cap: usize },

    #[error("outcome table for m = {m} is too large (limit {limit})")]
    TooManyOutcomes { m: usize, limit: usize },

    #[error("quadrature did not converge: {0}")]
    Quadrature(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("data error at row {row}, column `{column}`: {message}")]
    Data {
        row: usize,
        column: String,
        message: String,
    },

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("empty data file")]
    EmptyData,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
