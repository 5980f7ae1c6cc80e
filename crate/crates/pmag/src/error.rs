//! Crate-wide error type.

use std::path::PathBuf;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A signal is shorter than an operation requires.
    #[error("signal too short: length {len}, need at least {min} ({context})")]
    SignalTooShort {
        len: usize,
        min: usize,
        context: &'static str,
    },

    /// Invalid configuration value (bad grid, negative rate, out-of-range CRF, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// Tensor or clip shape does not match what an operation expects.
    #[error("shape error: {0}")]
    Shape(String),

    /// A spectrum has no usable peak (e.g. identically zero power).
    #[error("no dominant frequency: spectrum has no positive power in band")]
    NoDominantFrequency,

    /// Unknown subject id in a shift distribution.
    #[error("subject `{0}` is not registered in the shift distribution")]
    UnknownSubject(String),

    /// Dataset ingestion failure with the offending path.
    #[error("ingestion error at {path}: {reason}")]
    Ingestion { path: PathBuf, reason: String },

    /// External encoder binary could not be found.
    #[error("video encoder not found: {0}. Install ffmpeg, or point PMAG_FFMPEG at an \
             encoder accepting the ffmpeg flag subset (the bundled pmag-encshim works)")]
    EncoderMissing(String),

    /// The external encoder/decoder subprocess failed.
    #[error("encoder failure on {path}: {detail}")]
    Codec { path: PathBuf, detail: String },

    /// Batch compression aborted; lists the samples that failed.
    #[error("compression aborted; failed samples: {0:?}")]
    CompressionAborted(Vec<String>),

    /// Training contract violations (unfrozen theta in stage II, mixed CRF, ...).
    #[error("training contract violation: {0}")]
    Contract(String),

    /// Training loss became non-finite.
    #[error("training diverged at epoch {epoch}: loss {loss}; diagnostic checkpoint at {checkpoint:?}")]
    Diverged {
        epoch: usize,
        loss: f64,
        checkpoint: Option<PathBuf>,
    },

    /// Checkpoint file is malformed or from an incompatible config.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl Error {
    /// Attach a path to a raw io error.
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
