use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the analysis toolkit.
///
/// Variants are grouped by how a caller is expected to react: format errors
/// mean the input file is unusable, validation errors mean a dataset or plan
/// broke one of its invariants, argument errors mean the request itself was
/// malformed, and numerical errors mean the math has no defined answer.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { expected: u32, found: u32 },

    #[error("truncated payload: {context}")]
    Truncated { context: String },

    #[error("non-finite activation at sample {sample}, neuron {neuron}")]
    NonFinite { sample: usize, neuron: usize },

    #[error("label {label} at sample {sample} out of range for {n_concepts} concepts")]
    LabelOutOfRange {
        sample: usize,
        label: u32,
        n_concepts: u32,
    },

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by unreadable or malformed input data.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Io { .. }
                | Error::BadMagic { .. }
                | Error::VersionMismatch { .. }
                | Error::Truncated { .. }
                | Error::NonFinite { .. }
                | Error::LabelOutOfRange { .. }
                | Error::Manifest(_)
                | Error::Validation(_)
                | Error::Json(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
