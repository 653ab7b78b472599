use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("Assumption 1 violated at discretization: relative margin {margin:.3e} below {threshold:.1e}")]
    Assumption1Violated { margin: f64, threshold: f64 },
    #[error("linear solve failed: relative residual {residual:.3e} (target {target:.1e})")]
    SolveFailed { residual: f64, target: f64 },
    #[error("iteration did not converge after {iterations} steps: {what}")]
    NotConverged { iterations: usize, what: String, history: Vec<f64> },
    #[error("{0}")]
    Numerical(String),
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
