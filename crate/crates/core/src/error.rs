use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("probability {value} at index {index} is outside [0, 1]")]
    InvalidProbability { index: usize, value: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("hidden-neuron cap of {0} reached")]
    CapacityReached(usize),

    #[error("cannot remove every hidden neuron of a layer")]
    WouldRemoveAllNeurons,

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("bad magic: expected {expected:?}")]
    BadMagic { expected: &'static str },

    #[error("truncated data while reading {0}")]
    Truncated(&'static str),

    #[error("inconsistent model: {0}")]
    Inconsistent(String),

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("{path}, row {row}: {message}")]
    Row {
        path: PathBuf,
        row: usize,
        message: String,
    },

    #[error("unknown label {label:?} in {path}, row {row}")]
    UnknownLabel {
        path: PathBuf,
        row: usize,
        label: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn check_dim(context: &'static str, expected: usize, actual: usize) -> Result<()> {
        if expected == actual {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                context,
                expected,
                actual,
            })
        }
    }
}
