use thiserror::Error;

use crate::geometry::ImageDims;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0} vs {1}")]
    DimsMismatch(ImageDims, ImageDims),

    #[error("invalid image dimensions {width}x{height}")]
    InvalidDims { width: u32, height: u32 },

    #[error("invalid bbox [{0}, {1}, {2}, {3}]: corners must satisfy x1 <= x2 and y1 <= y2")]
    InvalidBBox(i64, i64, i64, i64),

    #[error("mask bit length {got} does not match {expected}")]
    BadMaskLength { expected: usize, got: usize },

    #[error("empty input")]
    EmptyInput,

    #[error("corrupt RLE: {0}")]
    CorruptRle(String),

    #[error("corrupt PGM: {0}")]
    CorruptPgm(String),

    #[error("{masks} masks supplied for {preds} predictions")]
    MaskCountMismatch { preds: usize, masks: usize },

    #[error("invalid ground-truth instance: {0}")]
    InvalidInstance(String),

    #[error("group needs at least 2 rollouts, got {0}")]
    GroupTooSmall(usize),

    #[error("likelihood ratios are required for the objective")]
    RatiosRequired,

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("rollout pool of {pool} is smaller than selection size {select}")]
    PoolTooSmall { pool: usize, select: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("no valid responses to vote over")]
    NoValidResponses,

    #[error("candidate references unknown or unparseable response {0}")]
    UnknownResponse(usize),

    #[error("duplicate candidate for response {0}, prediction {1}")]
    DuplicateCandidate(usize, usize),

    #[error("a target count was decided but the candidate pool is empty")]
    EmptyPool,

    #[error("parse error: {0}")]
    Parse(String),

    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    /// Input errors map to exit code 2 in the CLI; everything else is internal.
    pub fn is_input_error(&self) -> bool {
        !matches!(self, Error::Io(_))
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}
