use thiserror::Error;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("non-finite values produced by {0}")]
    Numeric(String),

    #[error("integrand is not mean-free: |mean| = {mean:.3e} exceeds tolerance {tol:.3e}")]
    Integrability { mean: f64, tol: f64 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("hierarchy error: {0}")]
    Hierarchy(String),

    #[error("integration failed at t = {t}: {reason}")]
    Integration { t: f64, reason: String },

    #[error("Newton iteration did not converge after {iterations} iterations (residual {residual:.3e})")]
    Elliptic { iterations: usize, residual: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, LabError>;
