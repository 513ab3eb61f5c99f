use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("coincident spins {0} and {1}")]
    Singularity(usize, usize),
    #[error("sampling failed after {attempts} attempts: {what}")]
    SamplingFailure { what: String, attempts: usize },
    #[error("cannot rescale: {0}")]
    CannotRescale(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("size guard: {what} requires n_spins <= {max}, got {n}")]
    SizeGuard {
        what: &'static str,
        n: usize,
        max: usize,
    },
    #[error("operator is not Hermitian")]
    NonHermitian,
    #[error("Chebyshev expansion did not reach tol {tol:e} within {cap} terms")]
    OrderCap { tol: f64, cap: usize },
    #[error("zero-width pulse in finite-width mode")]
    ZeroWidthPulse,
    #[error("matrix logarithm branch ambiguous: {0}")]
    BranchAmbiguity(String),
    #[error("degenerate signal: {0}")]
    Degenerate(String),
    #[error("eigendecomposition failed")]
    Eigen,
    #[error("extremum not found: {0}")]
    NotFound(String),
    #[error("sequence data: {0}")]
    Data(String),
}

pub type Result<T> = std::result::Result<T, Error>;
