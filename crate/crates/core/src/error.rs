//! Error type shared across the workbench.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller violated an operation contract (dimension mismatch, bad argument).
    #[error("contract violation: {0}")]
    Contract(String),

    /// An operation that needs at least one token was given none.
    #[error("empty query: operation requires at least one token")]
    EmptyQuery,

    /// The black-box query budget is spent; training-mode queries must stop.
    #[error("query budget exhausted: {used} of {max} training queries already spent")]
    BudgetExhausted { used: u64, max: u64 },

    /// A loss or gradient became non-finite.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// Configuration is invalid; every violation found is listed.
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),

    /// A stage was asked to run before its upstream stage produced an artifact.
    #[error("missing artifact `{path}`: run the `{stage}` stage first")]
    Dependency { stage: String, path: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path} line {line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
}

impl Error {
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the CLI: 0 success, 2 validation, 3 budget, 4 numeric, 1 other.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Contract(_) => 2,
            Error::BudgetExhausted { .. } => 3,
            Error::Numeric(_) => 4,
            _ => 1,
        }
    }
}
