use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// One or more configuration values are invalid. Every offending key is listed.
    #[error("invalid configuration: {}", .0.join("; "))]
    Config(Vec<String>),

    #[error("{primitive}: dimension mismatch: {detail}")]
    Dimension {
        primitive: &'static str,
        detail: String,
    },

    #[error("parse error in {}:{line}: {message}", file.display())]
    Parse {
        file: PathBuf,
        line: u64,
        message: String,
    },

    #[error("invalid data: {0}")]
    Data(String),

    #[error("recording {0} has no samples left after artifact removal")]
    EmptyRecording(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("{0}")]
    Runtime(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(primitive: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            primitive,
            detail: detail.into(),
        }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(vec![msg.into()])
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Parse { .. }
            | Error::Data(_)
            | Error::EmptyRecording(_)
            | Error::InsufficientData(_)
            | Error::Checkpoint(_)
            | Error::Json(_) => 3,
            Error::Dimension { .. } | Error::UndefinedMetric(_) | Error::Runtime(_) | Error::Io(_) => 4,
        }
    }
}
