use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes do not fit together.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Input outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A factorization met a (numerically) rank-deficient operand.
    #[error("rank deficiency at {context}: smallest pivot {pivot:e} below tolerance {tol:e}")]
    RankDeficient { context: String, pivot: f64, tol: f64 },

    /// Iterative solver stopped before reaching its tolerance.
    #[error("solver did not converge after {iterations} iterations (relative residual {residual:e})")]
    Solver { iterations: usize, residual: f64 },

    /// The dense oracle would exceed its configured size cap.
    #[error("dense oracle refused: {entries} entries exceed cap {cap}")]
    OracleCap { entries: u128, cap: usize },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("data error: {0}")]
    Data(String),

    #[error("checkpoint format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn shape_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Shape(msg.into()))
}

pub(crate) fn domain_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
