use std::path::PathBuf;

use thiserror::Error;

use crate::numerics::Shape;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {left} and {right}")]
    ShapeMismatch {
        op: &'static str,
        left: Shape,
        right: Shape,
    },

    #[error("index out of range: {0}")]
    OutOfRange(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("extent {extent} is not divisible into {num_blocks} blocks")]
    IndivisiblePartition { extent: usize, num_blocks: usize },

    #[error("forward cache does not match the parameters or batch passed to backward")]
    StaleCache,

    #[error("unknown layer `{0}`")]
    UnknownLayer(String),

    #[error("layer `{0}` is not prunable")]
    NotPrunable(String),

    #[error("mask mismatch: {0}")]
    MaskMismatch(String),

    #[error("mask retains no entries")]
    DegenerateMask,

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("non-finite loss at step {step} (tensor `{tensor}`)")]
    NonFiniteLoss { step: usize, tensor: String },

    #[error("{}:{line}: {msg}", path.display())]
    Format {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("{phase}: {source}")]
    InPhase {
        phase: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Tags the error with the pipeline phase it came from.
    pub fn in_phase(self, phase: &'static str) -> Self {
        Error::InPhase {
            phase,
            source: Box::new(self),
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }
}
