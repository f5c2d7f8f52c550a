//! Pixel containers, point annotations and tile validation.
//!
//! Coordinates: origin top-left, `x` is the column and `y` the row. A point
//! `(x, y)` falls in pixel `(floor(x), floor(y))`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default ground sample distance in meters per pixel.
pub const DEFAULT_GSD: f64 = 0.4;

/// Default tile edge length in pixels.
pub const DEFAULT_TILE_SIZE: usize = 500;

/// An `height x width x channels` image with values in `[0, 1]`, stored
/// row-major with interleaved channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f32>,
    gsd: f64,
}

impl Raster {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::UnsupportedChannels(channels));
        }
        if data.len() != width * height * channels {
            return Err(Error::RasterShape {
                width,
                height,
                channels,
                actual: data.len(),
            });
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0) {
            return Err(Error::InvalidArgument(format!(
                "raster value {v} outside [0, 1]"
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
            gsd: DEFAULT_GSD,
        })
    }

    pub fn zeros(width: usize, height: usize, channels: usize) -> Result<Self> {
        Self::new(width, height, channels, vec![0.0; width * height * channels])
    }

    pub fn with_gsd(mut self, gsd: f64) -> Self {
        self.gsd = gsd;
        self
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn gsd(&self) -> f64 {
        self.gsd
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// Planar `[channel][row][col]` copy, the layout the network consumes.
    pub fn to_planar(&self) -> Vec<f32> {
        let plane = self.width * self.height;
        let mut out = vec![0.0; plane * self.channels];
        for (i, px) in self.data.chunks_exact(self.channels).enumerate() {
            for (c, v) in px.iter().enumerate() {
                out[c * plane + i] = *v;
            }
        }
        out
    }

    /// Copies the `w x h` window starting at `(x0, y0)`. Pixels beyond the
    /// raster edge are mirrored (reflection without repeating the edge pixel).
    pub fn window_reflect(&self, x0: usize, y0: usize, w: usize, h: usize) -> Raster {
        let mut data = Vec::with_capacity(w * h * self.channels);
        for y in 0..h {
            let sy = reflect_index((y0 + y) as isize, self.height);
            for x in 0..w {
                let sx = reflect_index((x0 + x) as isize, self.width);
                let base = (sy * self.width + sx) * self.channels;
                data.extend_from_slice(&self.data[base..base + self.channels]);
            }
        }
        Raster {
            width: w,
            height: h,
            channels: self.channels,
            data,
            gsd: self.gsd,
        }
    }
}

/// Mirrors an index into `0..n` (`-1 -> 1`, `n -> n - 2`).
pub fn reflect_index(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let mut i = i.rem_euclid(period);
    if i >= n {
        i = period - i;
    }
    i as usize
}

/// Scales integer samples to `[0, 1]` by dividing by `2^bits - 1`.
pub fn normalize_ingest(
    raw: &[u16],
    width: usize,
    height: usize,
    channels: usize,
    bit_depth: u8,
) -> Result<Raster> {
    let max = match bit_depth {
        8 => 255.0f64,
        16 => 65535.0f64,
        other => return Err(Error::UnsupportedBitDepth(other)),
    };
    if channels != 1 && channels != 3 {
        return Err(Error::UnsupportedChannels(channels));
    }
    if let Some(v) = raw.iter().find(|v| f64::from(**v) > max) {
        return Err(Error::InvalidArgument(format!(
            "sample {v} exceeds {bit_depth}-bit range"
        )));
    }
    let data = raw.iter().map(|v| (f64::from(*v) / max) as f32).collect();
    Raster::new(width, height, channels, data)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    /// Integer pixel `(col, row)` containing the point.
    pub fn pixel(&self) -> (usize, usize) {
        (self.x.floor() as usize, self.y.floor() as usize)
    }

    pub fn in_bounds(&self, width: usize, height: usize) -> bool {
        self.x.is_finite()
            && self.y.is_finite()
            && self.x >= 0.0
            && self.y >= 0.0
            && self.x < width as f64
            && self.y < height as f64
    }
}

pub(crate) fn check_points(points: &[Point], width: usize, height: usize) -> Result<()> {
    match points.iter().find(|p| !p.in_bounds(width, height)) {
        Some(p) => Err(Error::PointOutOfBounds {
            x: p.x,
            y: p.y,
            width,
            height,
        }),
        None => Ok(()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TileLabel {
    #[serde(rename = "cow")]
    Cow,
    #[serde(rename = "no cow")]
    NoCow,
}

impl TileLabel {
    pub fn for_count(n: usize) -> Self {
        if n == 0 {
            TileLabel::NoCow
        } else {
            TileLabel::Cow
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TileRecord {
    pub id: String,
    pub image: Raster,
    pub points: Vec<Point>,
    pub label: TileLabel,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    PointOutOfBounds { index: usize, point: Point },
    LabelMismatch { label: TileLabel, points: usize },
    WrongSize { width: usize, height: usize, expected: usize },
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::PointOutOfBounds { index, point } => write!(
                f,
                "point out of bounds: #{index} at ({}, {})",
                point.x, point.y
            ),
            Violation::LabelMismatch { label, points } => {
                write!(f, "label/points mismatch: label {label:?} with {points} points")
            }
            Violation::WrongSize {
                width,
                height,
                expected,
            } => write!(f, "wrong size: {width}x{height}, expected {expected}x{expected}"),
        }
    }
}

/// Checks the label/points/bounds invariants of a tile against an expected
/// edge length. Never fails; an empty list means the tile is valid.
pub fn validate_tile(tile: &TileRecord, tile_size: usize) -> Vec<Violation> {
    validate_annotations(
        &tile.points,
        tile.label,
        tile.image.width(),
        tile.image.height(),
        Some(tile_size),
    )
}

/// Same checks as [`validate_tile`] without needing pixel data.
pub fn validate_annotations(
    points: &[Point],
    label: TileLabel,
    width: usize,
    height: usize,
    tile_size: Option<usize>,
) -> Vec<Violation> {
    let mut out = Vec::new();
    if let Some(size) = tile_size {
        if width != size || height != size {
            out.push(Violation::WrongSize {
                width,
                height,
                expected: size,
            });
        }
    }
    for (index, p) in points.iter().enumerate() {
        if !p.in_bounds(width, height) {
            out.push(Violation::PointOutOfBounds { index, point: *p });
        }
    }
    if TileLabel::for_count(points.len()) != label {
        out.push(Violation::LabelMismatch {
            label,
            points: points.len(),
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tile(points: Vec<Point>, label: TileLabel) -> TileRecord {
        TileRecord {
            id: "t".into(),
            image: Raster::zeros(500, 500, 1).unwrap(),
            points,
            label,
        }
    }

    #[test]
    fn empty_no_cow_tile_is_valid() {
        assert!(validate_tile(&tile(vec![], TileLabel::NoCow), 500).is_empty());
    }

    #[test]
    fn out_of_bounds_point_is_reported() {
        let v = validate_tile(&tile(vec![Point::new(600.0, 10.0)], TileLabel::Cow), 500);
        assert_eq!(v.len(), 1);
        assert!(v[0].to_string().starts_with("point out of bounds"));
    }

    #[test]
    fn label_mismatch_is_reported() {
        let pts = vec![Point::new(1.0, 1.0), Point::new(2.0, 2.0), Point::new(3.0, 3.0)];
        let v = validate_tile(&tile(pts, TileLabel::NoCow), 500);
        assert_eq!(v.len(), 1);
        assert!(v[0].to_string().starts_with("label/points mismatch"));
    }

    #[test]
    fn every_violation_is_collected() {
        let t = TileRecord {
            id: "bad".into(),
            image: Raster::zeros(64, 64, 3).unwrap(),
            points: vec![Point::new(-1.0, 3.0), Point::new(f64::NAN, 0.0)],
            label: TileLabel::NoCow,
        };
        assert_eq!(validate_tile(&t, 500).len(), 4);
    }

    #[test]
    fn ingest_scaling() {
        let r = normalize_ingest(&[255, 0], 2, 1, 1, 8).unwrap();
        assert_eq!(r.data(), &[1.0, 0.0]);
        let r = normalize_ingest(&[32767], 1, 1, 1, 16).unwrap();
        assert!((f64::from(r.data()[0]) - 32767.0 / 65535.0).abs() < 1e-7);
        assert!(matches!(
            normalize_ingest(&[0], 1, 1, 1, 12),
            Err(Error::UnsupportedBitDepth(12))
        ));
        assert!(matches!(
            normalize_ingest(&[0; 8], 1, 1, 8, 8),
            Err(Error::UnsupportedChannels(8))
        ));
    }

    #[test]
    fn ingest_is_monotone_over_8bit_range() {
        let raw: Vec<u16> = (0..=255).collect();
        let r = normalize_ingest(&raw, 256, 1, 1, 8).unwrap();
        assert!(r.data().windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn reflect_indices() {
        assert_eq!(reflect_index(-1, 5), 1);
        assert_eq!(reflect_index(5, 5), 3);
        assert_eq!(reflect_index(6, 5), 2);
        assert_eq!(reflect_index(3, 5), 3);
        assert_eq!(reflect_index(7, 1), 0);
    }

    #[test]
    fn rejects_out_of_range_values() {
        assert!(Raster::new(1, 1, 1, vec![1.5]).is_err());
        assert!(Raster::new(2, 1, 1, vec![0.5]).is_err());
    }
}
