use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Input or configuration rejected before any work was done.
    #[error("invalid {field}: {reason}")]
    Invalid { field: String, reason: String },

    /// A scene or run configuration with one or more violated constraints.
    #[error("validation failed: {}", .0.join("; "))]
    Validation(Vec<String>),

    #[error("frequency {0} Hz was not precomputed in the steering set")]
    MissingFrequency(f64),

    #[error("azimuth {0} deg is not on the DOA grid")]
    OffGrid(f64),

    #[error("insufficient samples: need at least {needed}, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    #[error("index {index} out of range (len {len})")]
    OutOfRange { index: usize, len: usize },

    #[error("channel count mismatch: geometry has {geometry} microphones, audio has {audio} channels")]
    ChannelMismatch { geometry: usize, audio: usize },

    #[error("timeline mismatch: {0}")]
    Timeline(String),

    #[error("no valid data: every block was empty after bin selection")]
    NoValidData,

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("wav: {0}")]
    Wav(#[from] hound::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Invalid {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// True for errors caused by bad configuration rather than runtime failures.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Invalid { .. } | Error::Validation(_) | Error::OffGrid(_) | Error::Parse { .. }
        )
    }
}
