use std::path::PathBuf;

use crate::imaging::ChannelId;

/// Errors raised anywhere in the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("image decode failed: {0}")]
    Decode(String),
    #[error("unsupported image format")]
    UnsupportedFormat,
    #[error("grid {grid_rows}x{grid_cols} does not divide a {height}x{width} plane")]
    GridMismatch {
        grid_rows: usize,
        grid_cols: usize,
        height: usize,
        width: usize,
    },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("no reference frames supplied")]
    EmptyReference,
    #[error("reference lambda {0} lies outside the ideal band [1.2, 1.5]")]
    LambdaOutOfBand(f64),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("format version mismatch: expected {expected:?}, found {found:?}")]
    VersionMismatch { expected: String, found: String },
    #[error("corrupt model file: {0}")]
    CorruptModel(String),
    #[error("degenerate model: {0}")]
    DegenerateModel(String),
    #[error("channel {0} is not allowed for this method")]
    IllegalChannel(ChannelId),
    #[error("covariance matrix for {0} is singular")]
    SingularCovariance(String),
    #[error("GMM weights do not match the channel set: {0}")]
    WeightMismatch(String),
    #[error("plane too small: {0}")]
    TooSmall(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("query {t} outside the interpolation span [{lo}, {hi}]")]
    OutOfRange { t: f64, lo: f64, hi: f64 },
    #[error("need at least {need} points, got {got}")]
    TooFewPoints { need: usize, got: usize },
    #[error("Levenberg-Marquardt damping exceeded {0:e} without an acceptable step")]
    DampingExhausted(f64),
    #[error("gradient norm {0:e} vanished before training started")]
    GradientVanished(f64),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("empty input")]
    Empty,
    #[error("sequence has zero variance")]
    DegenerateVariance,
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("parse error: {0}")]
    Parse(String),
}

/// Coarse classification used by the command-line front end to map errors to exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Bad arguments or configuration.
    Usage,
    /// Missing, malformed or out-of-contract data.
    Data,
    /// A numerical procedure could not proceed.
    Numerical,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::IllegalChannel(_) | Error::WeightMismatch(_) | Error::ConfigInvalid(_) => ErrorClass::Usage,
            Error::DegenerateModel(_)
            | Error::SingularCovariance(_)
            | Error::DampingExhausted(_)
            | Error::GradientVanished(_)
            | Error::DegenerateVariance => ErrorClass::Numerical,
            _ => ErrorClass::Data,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
