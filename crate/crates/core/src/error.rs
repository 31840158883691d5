use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: expected {expected}, got {actual}")]
    ShapeMismatch {
        op: &'static str,
        expected: String,
        actual: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("label {label} out of range for record {id}")]
    LabelOutOfRange { id: String, label: i64 },

    #[error("batchnorm in train mode needs at least 2 elements per channel, got {0}")]
    DegenerateBatch(usize),

    #[error("AUC undefined: labels contain only class {0}")]
    AucUndefined(usize),

    #[error("classes absent from labels: {0:?}")]
    MissingClasses(Vec<usize>),

    #[error("split '{0}' is empty")]
    EmptySplit(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: malformed PGM: {reason}")]
    Pgm { path: PathBuf, reason: String },

    #[error("manifest: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("checkpoint: bad magic bytes {0:?}")]
    BadMagic([u8; 4]),

    #[error("checkpoint: unsupported format version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("checkpoint: truncated, {section} needs {expected} bytes but {available} remain")]
    Truncated {
        section: &'static str,
        expected: usize,
        available: usize,
    },

    #[error("checkpoint: {0}")]
    LengthMismatch(String),
}

impl Error {
    pub(crate) fn shape(op: &'static str, expected: impl ToString, actual: impl ToString) -> Self {
        Error::ShapeMismatch {
            op,
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
