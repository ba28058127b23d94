//! Error types shared across the toolkit.

use std::path::PathBuf;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Everything that can go wrong while synthesizing, training, or evaluating.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Feature vector has (near-)zero sample standard deviation, so
    /// standardization is undefined.
    #[error("degenerate feature: sample std {sigma_h:.3e} below 1e-12 (constant vector)")]
    DegenerateFeature { sigma_h: f64 },

    /// Array shapes disagree between operands.
    #[error("shape mismatch: {context} (left {left:?}, right {right:?})")]
    ShapeMismatch {
        context: String,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    /// Schedule queried outside its step range.
    #[error("step {step} out of range for schedule with {total_steps} steps")]
    StepOutOfRange { step: usize, total_steps: usize },

    /// Model cannot produce input gradients.
    #[error("model does not support input-gradient computation: {0}")]
    NonDifferentiableModel(String),

    /// Percentage parameter outside (0, 100].
    #[error("invalid percentage {value}: must be in (0, 100]")]
    InvalidPercentage { value: f64 },

    /// Shuffle mask selects no pixels.
    #[error("empty mask: shuffle requires at least one selected pixel")]
    EmptyMask,

    /// Metric computed over an empty score set.
    #[error("empty score set: {0}")]
    EmptySet(&'static str),

    /// Benchmark spec fails validation.
    #[error("invalid benchmark spec: {0}")]
    InvalidSpec(String),

    /// Dataset root missing or contains no usable samples.
    #[error("missing or empty directory: {path}")]
    MissingDirectory { path: PathBuf },

    /// Image file exists but cannot be decoded.
    #[error("unreadable image {path}: {reason}")]
    UnreadableImage { path: PathBuf, reason: String },

    /// Run or synthesis configuration is invalid.
    #[error("config error: {0}")]
    ConfigParse(String),

    /// Checkpoint file version or structure not understood.
    #[error("checkpoint format error: {0}")]
    CheckpointFormat(String),

    /// Loss or gradient became non-finite during training.
    #[error("numeric failure: {0}")]
    NumericFailure(String),

    /// Underlying I/O failure.
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape_mismatch(
        context: impl Into<String>,
        left: &[usize],
        right: &[usize],
    ) -> Self {
        Error::ShapeMismatch {
            context: context.into(),
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }

    /// Wraps an I/O failure with its path.
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the CLI: 2 config, 3 data, 4 numeric, 1 other.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::ConfigParse(_) | Error::InvalidSpec(_) | Error::InvalidPercentage { .. } => 2,
            Error::MissingDirectory { .. } | Error::UnreadableImage { .. } | Error::Io { .. } => 3,
            Error::NumericFailure(_) => 4,
            _ => 1,
        }
    }
}
