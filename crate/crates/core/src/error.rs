use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Coarse classification used by front ends to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Runtime,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("EMB1 format error at byte offset {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid manifest: {0}")]
    Manifest(String),

    #[error("invalid prompt embeddings: {0}")]
    Prompt(String),

    #[error("degenerate prompt embedding for class {class}: template mean has zero norm")]
    DegeneratePrompt { class: usize },

    #[error("insufficient data: {what} requires {required} samples but only {available} are available")]
    InsufficientData {
        what: String,
        required: usize,
        available: usize,
    },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("synthetic generation failed: {0}")]
    Generation(String),

    #[error("configuration error: {0}")]
    Config(String),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) => ErrorKind::Config,
            Error::Format { .. }
            | Error::Io { .. }
            | Error::Manifest(_)
            | Error::Prompt(_)
            | Error::DegeneratePrompt { .. }
            | Error::InsufficientData { .. }
            | Error::DimensionMismatch { .. }
            | Error::NonFinite(_) => ErrorKind::Data,
            Error::Precondition(_) | Error::Generation(_) | Error::Diverged(_) => ErrorKind::Runtime,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
