use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Bad arguments, shapes or indices supplied by the caller.
    #[error("{0}")]
    Usage(String),

    #[error("singular matrix: |det| = {det:e} is at or below threshold {threshold:e}")]
    Singular { det: f64, threshold: f64 },

    /// The model covariance at this parameter point is not a valid Gaussian covariance.
    #[error("infeasible point: {0}")]
    Infeasible(String),

    #[error("t = {t} lies outside the feasible set {lo} <= |t| <= {hi}")]
    InfeasibleT { t: f64, lo: f64, hi: f64 },

    #[error("division by zero: {0}")]
    Division(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn usage<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Usage(msg.into()))
}
