use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Input data, knowledge or configuration failed validation.
    #[error("validation error: {0}")]
    Validation(String),

    /// A knowledge or config file could not be parsed.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// Two artifacts that must agree on column layout do not.
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    /// A numerical routine produced a non-finite value or failed to converge.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// A tape was replayed against parameters that changed after the forward pass.
    #[error("stale tape: recorded at parameter version {recorded}, map is at {current}")]
    StaleTape { recorded: u64, current: u64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    /// Process exit code used by the command-line driver.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Validation(_) | Error::Parse { .. } | Error::SchemaMismatch(_) => 2,
            Error::Numeric(_) | Error::StaleTape { .. } => 3,
            Error::Io(_) | Error::Csv(_) | Error::Json(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
