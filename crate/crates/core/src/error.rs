use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the counting toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unsupported bit depth {0}, expected 8 or 16")]
    UnsupportedBitDepth(u8),

    #[error("unsupported channel count {0}, expected 1 or 3")]
    UnsupportedChannels(usize),

    #[error("raster data length {actual} does not match {width}x{height}x{channels}")]
    RasterShape {
        width: usize,
        height: usize,
        channels: usize,
        actual: usize,
    },

    #[error("invalid value: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("point ({x}, {y}) outside {width}x{height} raster")]
    PointOutOfBounds {
        x: f64,
        y: f64,
        width: usize,
        height: usize,
    },

    #[error("model file format error: {0}")]
    Format(String),

    #[error("model file version {found} is newer than supported version {supported}")]
    Version { found: u32, supported: u32 },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("png error in {path}: {message}")]
    Png { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
