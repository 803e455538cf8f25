use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("degenerate ray: {0}")]
    DegenerateRay(String),

    #[error("invalid bounds on axis {axis}: lo={lo}, hi={hi}")]
    InvalidBounds { axis: usize, lo: f64, hi: f64 },

    #[error("ray coordinate {value} on axis {axis} lies outside [0, 1]")]
    OutOfBounds { axis: usize, value: f64 },

    #[error("camera position {position:?} is not covered by any sub-scene")]
    UncoveredPose { position: [f64; 3] },

    #[error("non-finite gradient in tensor {tensor} at element {index}")]
    NonFiniteGradient { tensor: usize, index: usize },

    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },

    #[error("{} degenerate rays while rendering (first: {:?})", pixels.len(), pixels.first())]
    DegenerateView { pixels: Vec<(usize, usize)> },

    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },

    #[error("image codec error for {path}: {message}")]
    Codec { path: PathBuf, message: String },

    #[error(transparent)]
    Checkpoint(#[from] crate::checkpoint::CheckpointError),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::InvalidConfig(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
