use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("missing file {}", path.display())]
    MissingFile { path: PathBuf },

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid manifest {}: {reason}", path.display())]
    Manifest { path: PathBuf, reason: String },

    #[error("size mismatch in {}: expected {expected} bytes, found {actual}", path.display())]
    SizeMismatch {
        path: PathBuf,
        expected: u64,
        actual: u64,
    },

    #[error("class id out of range in {} at byte offset {offset}: id {id} >= class count {class_count}", path.display())]
    ClassIdOutOfRange {
        path: PathBuf,
        offset: u64,
        id: u32,
        class_count: usize,
    },

    #[error("non-finite embedding value in {} at byte offset {offset}", path.display())]
    NonFinite { path: PathBuf, offset: u64 },

    #[error("malformed saliency record at byte offset {offset}: {reason}")]
    MalformedRecord { offset: u64, reason: String },

    #[error("length mismatch: {what} has {actual} entries, expected {expected}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("unknown class {0:?}")]
    UnknownClass(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("validation bundle required for KLD")]
    ValidationBundleRequired,

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile { path }
        } else {
            Error::Io { path, source }
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
