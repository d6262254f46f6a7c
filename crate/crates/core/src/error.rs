use thiserror::Error;

/// Errors raised by the filtering laboratory.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum FilterError {
    #[error("dimension mismatch in `{field}`: expected {expected}, got {got}")]
    Dimension {
        field: &'static str,
        expected: String,
        got: String,
    },

    #[error("non-finite value at step {step}: {what}")]
    NonFinite { step: usize, what: &'static str },

    #[error("covariance lost positive semi-definiteness at step {step} (min eigenvalue {min_eigenvalue:e})")]
    NotPositiveSemiDefinite { step: usize, min_eigenvalue: f64 },

    #[error("Riccati integration did not converge: residual {residual:e} after horizon {horizon}")]
    NoConvergence { residual: f64, horizon: f64 },

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("kernel condition violated: sigma_B sigma_B^T does not vanish on kernel vector {vector:?}")]
    KernelCondition { vector: Vec<f64> },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{failed} of {total} replicas failed (limit 1%): {first}")]
    TooManyFailures {
        failed: usize,
        total: usize,
        first: String,
    },
}

pub type Result<T> = std::result::Result<T, FilterError>;
