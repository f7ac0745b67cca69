use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{0}")]
    InvalidArgument(String),

    #[error("input shorter than receptive field: need at least {required} samples, got {actual}")]
    InputTooShort { required: usize, actual: usize },

    #[error("empty reduction over shape {0:?}")]
    EmptyReduction(Vec<usize>),

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("FFT length {0} is not a power of two")]
    NotPowerOfTwo(usize),

    #[error("ESR undefined for silent target")]
    SilentTarget,

    #[error("empty split: {0}")]
    EmptySplit(String),

    #[error("wav: {0}")]
    Wav(#[from] crate::audio::wav::WavError),

    #[error("dataset: {0}")]
    Dataset(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("training diverged at epoch {epoch}, batch {batch} (lr {lr:e}): non-finite loss twice in a row")]
    Diverged { epoch: usize, batch: usize, lr: f64 },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
