use thiserror::Error;

/// Errors produced by the scheduling library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("validation failed: {0}")]
    Validation(String),

    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: String,
        expected: String,
        got: String,
    },

    #[error("{what} is not positive definite (min eigenvalue {min_eig:e}{})", fmt_time(*.time))]
    NotPositiveDefinite {
        what: String,
        min_eig: f64,
        time: Option<f64>,
    },

    #[error("innovation covariance of sensor {sensor} is numerically singular")]
    SingularInnovation { sensor: usize },

    #[error("projection did not converge after {iterations} sweeps (residual {residual:e})")]
    ProjectionStalled { iterations: usize, residual: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn fmt_time(time: Option<f64>) -> String {
    match time {
        Some(t) => format!(" at t = {t}; increase the substep count"),
        None => String::new(),
    }
}

pub type Result<T> = std::result::Result<T, Error>;
