use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = LlcError> = std::result::Result<T, E>;

/// Every failure the library can report.
#[derive(Debug, Error)]
pub enum LlcError {
    #[error("shape error in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: [usize; 2],
        right: [usize; 2],
    },
    #[error("domain error in {op}: {detail}")]
    Domain { op: &'static str, detail: String },
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("invalid state: {0}")]
    State(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("format error in {file}, line {line}: {message}")]
    Format {
        file: String,
        line: usize,
        message: String,
    },
    #[error("non-finite {what} at epoch {epoch}")]
    Numeric { epoch: usize, what: String },
    #[error("diagnostic error: {0}")]
    Diagnostic(String),
    #[error("search space exceeds the cap of {cap} architectures ({raw} raw combinations)")]
    TooManyArchitectures { cap: usize, raw: u128 },
    #[error("config error: {0}")]
    Config(String),
}

impl LlcError {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        LlcError::Argument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        LlcError::Io {
            path: path.into(),
            source,
        }
    }
}
