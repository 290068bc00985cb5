use thiserror::Error;

/// Errors raised anywhere in the benchmark pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("record {id}: {reason}")]
    InvalidRecord { id: String, reason: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("size limit exceeded: {0}")]
    Size(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("split error: {0}")]
    Split(String),

    #[error("non-finite value in parameter `{param}`")]
    Numeric { param: String },

    #[error("usage error: {0}")]
    Usage(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Coarse error category, used by the command line to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Runtime,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::Usage(_) | Error::Size(_) => ErrorKind::Config,
            Error::Parse { .. }
            | Error::InvalidRecord { .. }
            | Error::Validation(_)
            | Error::Split(_)
            | Error::Json(_) => ErrorKind::Data,
            Error::Numeric { .. } | Error::Io(_) => ErrorKind::Runtime,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
