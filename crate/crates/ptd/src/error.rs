use thiserror::Error;

/// Errors produced by tensor construction, penalty operators, solvers and drivers.
#[derive(Error, Debug)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    /// The penalty weight drove a factor update to the zero vector.
    #[error("over-penalized {what}: penalty weight produced a zero vector")]
    OverPenalized { what: String },

    /// The closed-form boundary solution does not exist: the dual fit is exact,
    /// so the linear target lies in the row space of the penalty operator.
    #[error("degenerate update target: {0}")]
    DegenerateTarget(String),

    #[error("solver did not converge: {0}")]
    NonConvergence(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
