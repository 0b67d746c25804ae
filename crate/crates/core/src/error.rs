use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("feature index {index} out of range for dimension {dim}")]
    DimensionMismatch { index: usize, dim: usize },

    #[error("vector length {got} does not match expected dimension {expected}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("sparse entries are not strictly increasing at position {position}")]
    UnsortedIndices { position: usize },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("dataset has {n} rows, need at least {required}")]
    TooFewSamples { n: usize, required: usize },

    #[error("batch index {index} out of range for {n} samples")]
    BatchIndex { index: usize, n: usize },

    #[error("empty batch")]
    EmptyBatch,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("start point is not in the feasible domain")]
    Infeasible,

    #[error("non-finite value in {what} at iteration {iteration}")]
    NonFinite {
        what: &'static str,
        iteration: usize,
    },

    #[error("subproblem mode {mode} does not match the y-domain {domain}")]
    ModeDomainMismatch {
        mode: &'static str,
        domain: &'static str,
    },

    #[error("rate fit needs positive values, got {value} at row {row}")]
    NonPositive { row: usize, value: f64 },

    #[error("rate fit needs at least {required} points, got {got}")]
    TooFewPoints { required: usize, got: usize },
}

pub type Result<T> = std::result::Result<T, Error>;
