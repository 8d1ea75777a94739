use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the evaluation toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("mask has no set pixels")]
    EmptyMask,

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid parameter: {0}")]
    Param(String),

    #[error("label {label} at pixel ({x}, {y}) is not in the category set")]
    Label { label: u16, x: usize, y: usize },

    #[error("instance id {0} has no manifest entry")]
    Manifest(u16),

    #[error("F-measure undefined: {0}")]
    Undefined(String),

    #[error("no category could be evaluated")]
    EmptyReport,

    #[error("{path}: format error: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("{path}: value {value} out of [0, 1] at index {index}")]
    Range {
        path: PathBuf,
        index: usize,
        value: f32,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("invariant violated: {0}")]
    Invariant(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }

    /// Process exit code for the command-line tool: 2 for data and format
    /// problems, 3 for internal invariant violations.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Invariant(_) => 3,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
