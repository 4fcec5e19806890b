use thiserror::Error;

/// Errors shared by every module in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid shape {shape:?}: {reason}")]
    InvalidShape { shape: Vec<usize>, reason: String },

    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch { left: Vec<usize>, right: Vec<usize> },

    #[error("expected rank {expected}, got rank {got}")]
    RankMismatch { expected: usize, got: usize },

    #[error("out of bounds: {0}")]
    OutOfBounds(String),

    #[error("downsampling requested: output size {out} < input size {input}")]
    Downsample { input: usize, out: usize },

    #[error("output length {out} is not an integer multiple of input length {input}")]
    NonIntegerRatio { input: usize, out: usize },

    #[error("mask is not binary: element {value} at index {index}")]
    NonBinaryMask { index: usize, value: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("token count {tokens} does not match {leading} leading + {grid_h}x{grid_w} grid")]
    TokenCountMismatch {
        tokens: usize,
        leading: usize,
        grid_h: usize,
        grid_w: usize,
    },

    #[error("no analytic variance multiplier for `{op}`: {reason}")]
    UnknownMultiplier { op: String, reason: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("tensor file format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
