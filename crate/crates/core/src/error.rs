use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("invalid configuration:\n  - {}", .0.join("\n  - "))]
    Config(Vec<String>),

    #[error("pool state error: {0}")]
    State(String),

    #[error("need {required} gold-labeled instances, corpus has {available}")]
    InsufficientLabels { required: usize, available: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("degenerate signal: {0}")]
    DegenerateSignal(String),

    #[error("degenerate training data: {0}")]
    DegenerateData(String),

    #[error("annotator `{name}` unavailable: {reason}")]
    AnnotatorUnavailable { name: String, reason: String },

    #[error("protocol error from annotator `{name}`: {reason}")]
    Protocol { name: String, reason: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short category tag used by the command line for exit messages.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Parse { .. } => "parse",
            Error::Validation(_) => "validation",
            Error::Config(_) => "config",
            Error::State(_) => "state",
            Error::InsufficientLabels { .. } => "data",
            Error::Shape(_) => "shape",
            Error::DegenerateSignal(_) | Error::DegenerateData(_) => "degenerate",
            Error::AnnotatorUnavailable { .. } | Error::Protocol { .. } => "annotator",
            Error::Checkpoint(_) => "checkpoint",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }
}
