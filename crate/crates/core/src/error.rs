use thiserror::Error;

/// Errors raised by measure construction, transport maps and checks.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid mixture: {0}")]
    InvalidMixture(String),

    #[error("matrix is not symmetric positive definite: {0}")]
    NotSpd(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("singularity reached; critical time {critical_time}")]
    Singularity { critical_time: f64 },

    #[error("kernel weights underflow at query point (log weight sum {log_sum})")]
    WeightUnderflow { log_sum: f64 },

    #[error("missing diagnostics: {0}")]
    MissingDiagnostics(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch { expected, found });
    }
    Ok(())
}
