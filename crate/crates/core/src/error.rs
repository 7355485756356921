use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("corrupt metadata in {path}: {reason}")]
    Metadata { path: PathBuf, reason: String },

    #[error("length mismatch: expected {expected} values, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("value {value} at voxel {index} is out of range for {kind} volume")]
    OutOfRange {
        kind: &'static str,
        index: usize,
        value: f64,
    },

    #[error("non-finite value at voxel {0}")]
    NonFinite(usize),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("empty mask: no voxels of interest")]
    EmptyMask,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("batch normalization evaluated before any training step")]
    UninitializedStats,

    #[error("model has not been trained")]
    Untrained,

    #[error("training diverged at epoch {epoch} ({stage}): loss = {loss}")]
    Diverged {
        epoch: usize,
        stage: &'static str,
        loss: f64,
    },

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("degenerate input: {0}")]
    Degenerate(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn at_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
