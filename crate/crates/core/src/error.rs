use thiserror::Error;

/// Errors surfaced by every stage of the pipeline.
#[derive(Debug, Error)]
pub enum HemlError {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("parse error at `{path}`: {message}")]
    Parse { path: String, message: String },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("schedule error: {0}")]
    Schedule(String),

    #[error("training failed at node {node_id}: {message}")]
    Training { node_id: usize, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, HemlError>;

impl HemlError {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        HemlError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// True for errors caused by how the caller invoked an operation
    /// rather than by the data or the environment.
    pub fn is_usage(&self) -> bool {
        matches!(self, HemlError::Usage(_))
    }
}
