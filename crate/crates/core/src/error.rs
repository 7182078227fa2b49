//! One error type for the whole core crate. Variants carry enough context to
//! identify the offending node/file/value, since most of these surface to the
//! CLI as the reason for a nonzero exit.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, CoreError>;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value produced by {op} (first at flat index {index})")]
    NonFinite { op: &'static str, index: usize },

    #[error("numerical abort: {0}")]
    Numerical(String),

    #[error("degenerate rotation input: {0}")]
    DegenerateRotation(String),

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("model has no trained weights loaded: {0}")]
    Untrained(String),

    #[error("file format error in {path}: {detail}")]
    Format { path: String, detail: String },

    #[error("missing prerequisite artifact: {0}")]
    MissingArtifact(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CoreError {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        CoreError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub fn format(path: impl AsRef<std::path::Path>, detail: impl Into<String>) -> Self {
        CoreError::Format {
            path: path.as_ref().display().to_string(),
            detail: detail.into(),
        }
    }
}
