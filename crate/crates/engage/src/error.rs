use thiserror::Error;

/// Crate-wide error type. Variants map onto the CLI exit codes:
/// input problems (1), configuration problems (2), internal invariant
/// breaches (3).
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty session")]
    EmptySession,

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("leakage guard: {0}")]
    Leakage(String),

    #[error("internal invariant breach: {0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit code for this error (0 is success, so never returned here).
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Dimension(_) | Error::Leakage(_) | Error::Internal(_) => 3,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
