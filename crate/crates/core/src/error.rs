use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("point {x} lies outside the domain [{lo}, {hi}]")]
    Domain { x: f64, lo: f64, hi: f64 },

    #[error("point {x} is a branch endpoint; the derivative is one-sided there")]
    Discontinuity { x: f64 },

    #[error("invalid map: {0}")]
    InvalidMap(String),

    #[error("invalid interval [{lo}, {hi})")]
    InvalidInterval { lo: f64, hi: f64 },

    #[error("structural mismatch: {0}")]
    Structural(String),

    #[error("margin violation: {0}")]
    MarginViolation(String),

    #[error("noise leaves the domain: {0}")]
    Boundary(String),

    #[error("chain left the domain at step {step} (x = {x})")]
    ChainExit { step: usize, x: f64 },

    #[error("invalid noise kernel: {0}")]
    InvalidKernel(String),

    #[error("partition mismatch: {0}")]
    PartitionMismatch(String),

    #[error(
        "power iteration did not converge after {iterations} iterations (residual {residual:e})"
    )]
    Convergence { iterations: usize, residual: f64 },

    #[error("eigensolver failed: {0}")]
    Numerical(String),

    #[error("metastability structure violated: {0}")]
    MetastabilityStructure(String),

    #[error("eps = {eps} is too large: hulls of least elements {first} and {second} overlap")]
    EpsTooLarge {
        eps: f64,
        first: usize,
        second: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
