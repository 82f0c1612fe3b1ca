use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A JSONL line could not be decoded.
    #[error("{path}:{line}: {message}")]
    Ingest {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("unknown template placeholder `{{{0}}}`")]
    Template(String),

    #[error("provider error{}: {message}", .status.map(|s| format!(" (HTTP {s})")).unwrap_or_default())]
    Provider {
        message: String,
        status: Option<u16>,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("report error: {0}")]
    Report(String),

    #[error("hallucination rate is undefined over zero samples")]
    UndefinedRate,

    #[error("harness fault: {0}")]
    Harness(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit status: 1 usage/config, 2 data validation, 3 harness fault.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Template(_) => 1,
            Error::Ingest { .. }
            | Error::Validation(_)
            | Error::Report(_)
            | Error::UndefinedRate
            | Error::Json(_) => 2,
            Error::Io { .. } | Error::Provider { .. } | Error::Harness(_) => 3,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Ingest { .. } => "ingest",
            Error::Validation(_) => "validation",
            Error::Template(_) => "template",
            Error::Provider { .. } => "provider",
            Error::Config(_) => "config",
            Error::Report(_) => "report",
            Error::UndefinedRate => "undefined_rate",
            Error::Harness(_) => "harness",
            Error::Json(_) => "json",
        }
    }
}
