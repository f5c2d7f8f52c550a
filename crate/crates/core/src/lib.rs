//! Point-supervised object counting.
//!
//! Tiles large rasters, renders point annotations into density targets,
//! trains a small fully convolutional network with either a blob-based
//! point-supervision loss or a density least-squares loss, and scores
//! predictions with count (MAPE), grid-localized (GAMPE) and presence
//! (F-score) metrics.

pub mod blobkit;
pub mod density;
pub mod error;
pub mod experiment;
pub mod inference;
pub mod lossfns;
pub mod manifest;
pub mod metrics;
pub mod pngio;
pub mod raster;
pub mod scalar;
pub mod synthgen;
pub mod tiler;
pub mod trainer;
pub mod tinyfcn;

pub use error::{Error, Result};
pub use raster::{Point, Raster, TileLabel, TileRecord};
