use thiserror::Error;

/// Errors produced by model construction, evaluation, and I/O.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument violated a documented precondition.
    #[error("domain error: {0}")]
    Domain(String),

    /// A model or configuration invariant does not hold.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// A series or iteration failed to converge.
    #[error("numeric convergence failure: {0}")]
    Convergence(String),

    /// Malformed input data (trace files, model documents).
    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn convergence(msg: impl Into<String>) -> Self {
        Error::Convergence(msg.into())
    }

    pub fn parse(msg: impl Into<String>) -> Self {
        Error::Parse(msg.into())
    }

    /// Process exit code for the CLI: 1 for validation problems,
    /// 2 for numeric-convergence failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Convergence(_) => 2,
            _ => 1,
        }
    }
}
