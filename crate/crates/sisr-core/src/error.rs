use std::path::PathBuf;

use crate::image::Colorspace;

/// Crate-wide error type.
///
/// [`Error::is_precondition`] distinguishes "the request itself was invalid"
/// (bad shapes, wrong colorspace, unsupported scale, ...) from failures that
/// happen while carrying out a valid request (I/O, corrupt files, divergence).
/// The CLI maps the former to exit code 2 and the latter to 3.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("expected image in {expected:?} space, got {found:?}")]
    SpaceMismatch {
        expected: Colorspace,
        found: Colorspace,
    },

    #[error("expected {expected} channel(s), got {found}")]
    ChannelMismatch { expected: usize, found: usize },

    #[error("invalid image geometry: {0}")]
    BadGeometry(String),

    #[error("unsupported scale factor {0} (expected a power of two from the supported set)")]
    UnsupportedScale(u32),

    #[error("image {width}x{height} is not divisible by {scale} (pass crop=true to crop)")]
    NotDivisible {
        width: usize,
        height: usize,
        scale: u32,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unsupported PNG layout: {0}")]
    UnsupportedPng(String),

    #[error("tensor shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("unsupported kernel size {0}x{0} (only 1x1 and 3x3 convolutions)")]
    UnsupportedKernel(usize),

    #[error("graph node {0} used before a value was bound")]
    UnboundInput(usize),

    #[error("backward called before forward")]
    BackwardBeforeForward,

    #[error("invalid model configuration: {0}")]
    BadConfig(String),

    #[error("optimizer state does not match parameter {index}: {detail}")]
    OptimizerMismatch { index: usize, detail: String },

    #[error("checkpoint {path}: {detail}")]
    Checkpoint { path: PathBuf, detail: String },

    #[error("checkpoint layer {layer}: expected shape {expected}, found {found}")]
    CheckpointShape {
        layer: String,
        expected: String,
        found: String,
    },

    #[error("training diverged at step {step}: loss={loss}, grad_norm={grad_norm}")]
    Diverged { step: u64, loss: f64, grad_norm: f64 },

    #[error("no usable training images: {0}")]
    EmptyTrainingSet(String),

    #[error("cascade stage {0} required by the scale plan is missing")]
    MissingStage(String),

    #[error("gradient check failed: {0}")]
    GradcheckFailed(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    PngDecode {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("{path}: {source}")]
    PngEncode {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

impl Error {
    /// True when the error describes an invalid request (caller bug or bad
    /// arguments) rather than a failure encountered while executing a valid
    /// one.
    pub fn is_precondition(&self) -> bool {
        !matches!(
            self,
            Error::Io { .. }
                | Error::PngDecode { .. }
                | Error::PngEncode { .. }
                | Error::Checkpoint { .. }
                | Error::CheckpointShape { .. }
                | Error::Diverged { .. }
                | Error::GradcheckFailed(_)
        )
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
