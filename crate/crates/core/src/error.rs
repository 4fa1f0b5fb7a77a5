use thiserror::Error;

/// Errors raised by the covariance-forest library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("degenerate node: {rows} row(s), at least 2 are needed for a sample covariance")]
    DegenerateNode { rows: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("non-positive variance at diagonal entry {index}")]
    NonPositiveVariance { index: usize },

    #[error("matrix is not positive semi-definite")]
    NotPsd,

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("nodesize tuning infeasible: {0}")]
    TuningInfeasible(String),

    #[error("invalid control set: {0}")]
    InvalidControlSet(String),

    #[error("invalid simulation setup: {0}")]
    InvalidSimulation(String),

    #[error("output error: {0}")]
    Output(String),
}

pub type Result<T> = std::result::Result<T, Error>;
