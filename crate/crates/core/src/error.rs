use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the laboratory.
#[derive(Debug, Error)]
pub enum Error {
    /// Two shapes disagree; `dim` names the offending axis or extent.
    #[error("{op}: shape mismatch in {dim}: expected {expected}, got {got}")]
    Shape {
        op: &'static str,
        dim: String,
        expected: String,
        got: String,
    },

    /// An input lies outside the domain of the operation.
    #[error("{op}: {msg}")]
    Domain { op: &'static str, msg: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("cannot access {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A file exists but its contents are not what we expect.
    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("missing files: {}", .0.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(", "))]
    Missing(Vec<PathBuf>),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn shape(
        op: &'static str,
        dim: impl Into<String>,
        expected: impl ToString,
        got: impl ToString,
    ) -> Self {
        Error::Shape {
            op,
            dim: dim.into(),
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    pub(crate) fn domain(op: &'static str, msg: impl Into<String>) -> Self {
        Error::Domain {
            op,
            msg: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }
}
