use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, HarError>;

#[derive(Debug, Error)]
pub enum HarError {
    /// One or more configuration problems, each prefixed by its field path.
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{}:{line}: {message}", path.display())]
    Ingest {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("data error: {0}")]
    Data(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("malformed artifact: {0}")]
    Format(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl HarError {
    pub fn config(msg: impl Into<String>) -> Self {
        HarError::Config(vec![msg.into()])
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HarError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarError::Config(_) | HarError::InvalidArgument(_) | HarError::Shape(_) => 2,
            HarError::Ingest { .. } | HarError::Data(_) | HarError::Format(_) | HarError::Io { .. } => 3,
            HarError::Numeric(_) => 4,
        }
    }
}
