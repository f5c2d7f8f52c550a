//! Running a trained model on arbitrary-size rasters and turning its output
//! into counts, points and grid cell counts.

use serde::{Deserialize, Serialize};

use crate::blobkit::blob_count;
use crate::density::{block_index, cell_counts, point_cell_counts, DensityMap};
use crate::error::{Error, Result};
use crate::lossfns::BLOB_THRESHOLD;
use crate::raster::{Point, Raster};
use crate::tinyfcn::{forward_one, Cache, Head, ModelParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// Detection head trained with the blob point-supervision loss.
    Lcfcn,
    /// Density head trained with the least-squares loss.
    Density,
}

impl ModelKind {
    pub fn head(self) -> Head {
        match self {
            ModelKind::Lcfcn => Head::Detection,
            ModelKind::Density => Head::Density,
        }
    }

    pub fn from_head(head: Head) -> Self {
        match head {
            Head::Detection => ModelKind::Lcfcn,
            Head::Density => ModelKind::Density,
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lcfcn" => Ok(ModelKind::Lcfcn),
            "density" => Ok(ModelKind::Density),
            other => Err(Error::InvalidArgument(format!("unknown model {other:?}"))),
        }
    }
}

/// Smallest multiple of 8 not below `n`.
pub fn padded_len(n: usize) -> usize {
    n.div_ceil(8) * 8
}

/// Network input for a raster: planar, reflect-padded to multiples of 8.
#[derive(Debug, Clone)]
pub struct PreparedInput {
    pub planar: Vec<f32>,
    pub width: usize,
    pub height: usize,
    pub padded_width: usize,
    pub padded_height: usize,
}

pub fn prepare_input(image: &Raster) -> PreparedInput {
    let (pw, ph) = (padded_len(image.width()), padded_len(image.height()));
    let planar = if (pw, ph) == (image.width(), image.height()) {
        image.to_planar()
    } else {
        image.window_reflect(0, 0, pw, ph).to_planar()
    };
    PreparedInput {
        planar,
        width: image.width(),
        height: image.height(),
        padded_width: pw,
        padded_height: ph,
    }
}

/// Keeps the top-left `w x h` window of a `pw`-wide map.
pub fn crop(map: &[f32], pw: usize, w: usize, h: usize) -> Vec<f32> {
    if pw == w {
        return map[..w * h].to_vec();
    }
    (0..h).flat_map(|r| map[r * pw..r * pw + w].iter().copied()).collect()
}

/// Inverse of [`crop`]: zero-fills the padding.
pub fn uncrop(map: &[f32], pw: usize, ph: usize, w: usize) -> Vec<f32> {
    if pw == w {
        let mut v = map.to_vec();
        v.resize(pw * ph, 0.0);
        return v;
    }
    let mut out = vec![0.0; pw * ph];
    for (r, row) in map.chunks_exact(w).enumerate() {
        out[r * pw..r * pw + w].copy_from_slice(row);
    }
    out
}

/// Forward pass on a prepared input, returning the cropped output map.
pub fn run(params: &ModelParams, input: &PreparedInput) -> Result<(Vec<f32>, Cache<f32>)> {
    let (out, cache) = forward_one(
        &params.arch,
        &params.values,
        &input.planar,
        input.padded_height,
        input.padded_width,
    )?;
    Ok((crop(&out, input.padded_width, input.width, input.height), cache))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub kind: ModelKind,
    pub width: usize,
    pub height: usize,
    /// Probability map (lcfcn) or density map (density).
    pub map: Vec<f32>,
    /// Blob count (lcfcn) or integrated density (density).
    pub count: f64,
    /// Blob centroids (lcfcn) or the `round(count)` strongest local maxima
    /// of the density map (density).
    pub points: Vec<Point>,
}

impl Prediction {
    /// Predicted counts over a `grid_n x grid_n` partition.
    pub fn cell_counts(&self, grid_n: usize) -> Result<Vec<f64>> {
        match self.kind {
            ModelKind::Lcfcn => point_cell_counts(&self.points, self.width, self.height, grid_n),
            ModelKind::Density => {
                let values = self.map.iter().map(|v| f64::from(*v)).collect();
                cell_counts(&DensityMap::from_values(self.width, self.height, values, f64::NAN)?, grid_n)
            }
        }
    }
}

pub fn interpret(kind: ModelKind, map: Vec<f32>, width: usize, height: usize) -> Result<Prediction> {
    let (count, points) = match kind {
        ModelKind::Lcfcn => {
            let d = blob_count(&map, width, height, BLOB_THRESHOLD)?;
            (d.count as f64, d.centroids)
        }
        ModelKind::Density => {
            let total: f64 = map.iter().map(|v| f64::from(*v)).sum();
            let k = total.round().max(0.0) as usize;
            (total, density_peaks(&map, width, height, k))
        }
    };
    Ok(Prediction {
        kind,
        width,
        height,
        map,
        count,
        points,
    })
}

pub fn predict(params: &ModelParams, image: &Raster) -> Result<Prediction> {
    if image.channels() != params.arch.in_channels {
        return Err(Error::ShapeMismatch(format!(
            "image has {} channels, model expects {}",
            image.channels(),
            params.arch.in_channels
        )));
    }
    let input = prepare_input(image);
    let (map, _) = run(params, &input)?;
    interpret(ModelKind::from_head(params.arch.head), map, image.width(), image.height())
}

/// Up to `k` strict-or-first 3x3 local maxima with positive value, strongest
/// first (ties by raster order), at pixel centers.
pub fn density_peaks(map: &[f32], width: usize, height: usize, k: usize) -> Vec<Point> {
    if k == 0 {
        return Vec::new();
    }
    let mut peaks: Vec<(f32, usize)> = Vec::new();
    for r in 0..height {
        for c in 0..width {
            let i = r * width + c;
            let v = map[i];
            if v <= 0.0 {
                continue;
            }
            let mut is_peak = true;
            'n: for dr in -1isize..=1 {
                for dc in -1isize..=1 {
                    if dr == 0 && dc == 0 {
                        continue;
                    }
                    let (rr, cc) = (r as isize + dr, c as isize + dc);
                    if rr < 0 || cc < 0 || rr >= height as isize || cc >= width as isize {
                        continue;
                    }
                    let j = rr as usize * width + cc as usize;
                    // plateau: only the first pixel in raster order counts
                    if map[j] > v || (map[j] == v && j < i) {
                        is_peak = false;
                        break 'n;
                    }
                }
            }
            if is_peak {
                peaks.push((v, i));
            }
        }
    }
    peaks.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    peaks
        .into_iter()
        .take(k)
        .map(|(_, i)| Point::new((i % width) as f64 + 0.5, (i / width) as f64 + 0.5))
        .collect()
}

/// Ground-truth cell counts for annotated points.
pub fn truth_cells(points: &[Point], width: usize, height: usize, grid_n: usize) -> Result<Vec<f64>> {
    point_cell_counts(points, width, height, grid_n)
}

/// Grid cell `(row, col)` of a point.
pub fn cell_of(p: &Point, width: usize, height: usize, grid_n: usize) -> (usize, usize) {
    let (c, r) = p.pixel();
    (block_index(r, height, grid_n), block_index(c, width, grid_n))
}
