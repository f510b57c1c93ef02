use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("changed path `{0}` is absent from both snapshots")]
    UnknownChangedPath(String),

    #[error("embedding sidecar has no entry for node {0}")]
    MissingSidecarNode(usize),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("label must be 0 or 1, got {0}")]
    InvalidLabel(i64),

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("invalid config: {0}")]
    Config(String),

    #[error("unsupported format version `{found}` (expected `{expected}`)")]
    FormatVersion { expected: String, found: String },

    #[error("malformed document: {0}")]
    Malformed(String),

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
}
