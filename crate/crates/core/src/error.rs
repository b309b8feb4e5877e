use thiserror::Error;

/// Errors raised by the benchmark library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not positive definite (largest jitter tried: {max_jitter:e})")]
    NotPositiveDefinite { max_jitter: f64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("predictive variance is zero at location {index}; correlation undefined")]
    ZeroVariance { index: usize },

    #[error("test location {index} has zero predictive variance")]
    DegenerateTest { index: usize },

    #[error("batch covariance is singular")]
    SingularBatch,

    #[error("matrix is singular")]
    SingularMatrix,

    #[error("KL decomposition identity violated: residual {residual:e}")]
    IdentityViolation { residual: f64 },

    #[error("degenerate training data: {0}")]
    DegenerateData(String),

    #[error("chain {chain}: acceptance rate never entered the target window during burn-in (last {acceptance:.3})")]
    AdaptationFailed { chain: usize, acceptance: f64 },

    #[error("pool exhausted: requested {requested}, only {available} left")]
    PoolExhausted { requested: usize, available: usize },

    #[error("dataset too small: {rows} rows, need at least {min}")]
    TooSmall { rows: usize, min: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("malformed matrix file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}
