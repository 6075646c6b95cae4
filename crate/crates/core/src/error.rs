use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = SkelError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum SkelError {
    #[error("invalid value for `{field}`: {reason}")]
    InvalidConfig { field: String, reason: String },

    #[error("malformed pose: {0}")]
    MalformedPose(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("index {index} out of range (len {len})")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("need at least {required} frames, got {got}")]
    InsufficientFrames { required: usize, got: usize },

    #[error("joint {0} was requested more than once for growth")]
    DuplicateGrowth(usize),

    #[error("joint {0} is not a base joint and cannot receive grown children")]
    NotBaseJoint(usize),

    #[error("operation not allowed in {mode} mode: {reason}")]
    ModeMismatch { mode: &'static str, reason: String },

    #[error("observation frame {0} is empty")]
    EmptyObservation(usize),

    #[error("non-finite loss at iteration {iteration}")]
    NumericFailure { iteration: usize },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed document {path}: {reason}")]
    Format { path: PathBuf, reason: String },
}

impl SkelError {
    pub fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        SkelError::InvalidConfig {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        SkelError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit status used by the command-line front end.
    ///
    /// 2 for validation problems, 3 for numeric failures, 4 for I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            SkelError::NumericFailure { .. } => 3,
            SkelError::Io { .. } => 4,
            _ => 2,
        }
    }
}
