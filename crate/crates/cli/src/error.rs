use frontflow::FrontError;
use thiserror::Error;

/// Failures of a command, each mapped to a documented exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{}", format_config(path, *line, message))]
    Config { path: String, line: Option<usize>, message: String },

    #[error("usage: {0}")]
    Usage(String),

    /// Stability failure or a front reaching the boundary margin.
    #[error("runtime violation: {0}")]
    Runtime(String),

    #[error("fixed-point iteration did not converge after {0} iterations")]
    NotConverged(usize),

    #[error("{failed} of {total} checks failed")]
    CheckFailed { failed: usize, total: usize },

    #[error("front left the barrier ball at t = {0}")]
    ContainmentViolated(f64),

    #[error(transparent)]
    Engine(FrontError),
}

fn format_config(path: &str, line: Option<usize>, message: &str) -> String {
    match line {
        Some(l) => format!("config error at {path}:{l}: {message}"),
        None => format!("config error in {path}: {message}"),
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config { .. } | Self::Usage(_) | Self::Engine(_) => 1,
            Self::Runtime(_) => 2,
            Self::NotConverged(_) => 3,
            Self::CheckFailed { .. } => 4,
            Self::ContainmentViolated(_) => 5,
        }
    }
}

impl From<FrontError> for CliError {
    fn from(e: FrontError) -> Self {
        match e {
            FrontError::CflViolation { .. } | FrontError::CflDegenerate(_) | FrontError::NonFinite(_) => {
                Self::Runtime(e.to_string())
            }
            other => Self::Engine(other),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Engine(FrontError::Io(e))
    }
}
