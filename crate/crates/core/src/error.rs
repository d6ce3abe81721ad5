use thiserror::Error;

/// Errors raised by the engine.
#[derive(Debug, Error)]
pub enum FrontError {
    #[error("unsupported dimension {0}, expected 1, 2 or 3")]
    UnsupportedDimension(usize),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("grid of {nodes} nodes exceeds the memory budget of {budget} nodes")]
    MemoryBudget { nodes: u128, budget: usize },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("time stamps do not match: {0}")]
    StampMismatch(String),

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("time step {dt:e} exceeds the stability limit {limit:e}")]
    CflViolation { dt: f64, limit: f64 },

    #[error("stable time step degenerated to {0:e}")]
    CflDegenerate(f64),

    #[error("time regression: requested t = {requested}, last prepared t = {last}")]
    TimeRegression { requested: f64, last: f64 },

    #[error("invalid velocity law: {0}")]
    InvalidLaw(String),

    #[error("malformed field dump: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = FrontError> = std::result::Result<T, E>;
