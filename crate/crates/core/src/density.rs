//! Gaussian density maps rendered from point annotations.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::raster::{check_points, Point};

/// Default kernel width in pixels, about half a 5 px object.
pub const DEFAULT_SIGMA: f64 = 2.0;

/// Kernel footprint radius in multiples of sigma.
pub const TRUNCATE_SIGMAS: f64 = 4.0;

const MAGIC: &[u8; 4] = b"DMAP";

#[derive(Debug, Clone, PartialEq)]
pub struct DensityMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
    sigma: f64,
}

impl DensityMap {
    pub fn zeros(width: usize, height: usize, sigma: f64) -> Self {
        Self {
            width,
            height,
            values: vec![0.0; width * height],
            sigma,
        }
    }

    /// Wraps a row-major value grid. Values must be finite and non-negative.
    pub fn from_values(width: usize, height: usize, values: Vec<f64>, sigma: f64) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {width}x{height} map",
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::InvalidArgument(format!("density value {v}")));
        }
        Ok(Self {
            width,
            height,
            values,
            sigma,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self {
            values: self.values.iter().map(|v| v * k).collect(),
            ..self.clone()
        }
    }

    /// Debug dump: `"DMAP"`, u16 width, u16 height, then f32 LE values.
    pub fn write_raw<W: Write>(&self, mut w: W) -> Result<()> {
        let (width, height) = (dim_u16(self.width)?, dim_u16(self.height)?);
        w.write_all(MAGIC)?;
        w.write_all(&width.to_le_bytes())?;
        w.write_all(&height.to_le_bytes())?;
        for v in &self.values {
            w.write_all(&(*v as f32).to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_raw<R: Read>(mut r: R) -> Result<Self> {
        let mut header = [0u8; 8];
        r.read_exact(&mut header)
            .map_err(|_| Error::Format("truncated density header".into()))?;
        if &header[..4] != MAGIC {
            return Err(Error::Format("bad density map magic".into()));
        }
        let width = u16::from_le_bytes([header[4], header[5]]) as usize;
        let height = u16::from_le_bytes([header[6], header[7]]) as usize;
        let mut buf = vec![0u8; width * height * 4];
        r.read_exact(&mut buf)
            .map_err(|_| Error::Format("truncated density values".into()))?;
        let values = buf
            .chunks_exact(4)
            .map(|b| f64::from(f32::from_le_bytes([b[0], b[1], b[2], b[3]])))
            .collect();
        Self::from_values(width, height, values, f64::NAN)
    }
}

fn dim_u16(n: usize) -> Result<u16> {
    u16::try_from(n).map_err(|_| Error::InvalidArgument(format!("dimension {n} exceeds u16")))
}

/// Renders one Gaussian per point, each truncated at `4 sigma` and
/// renormalized to unit mass so the map integrates to the point count.
/// Pixel `(c, r)` is evaluated at its center `(c + 0.5, r + 0.5)`.
pub fn render_density(
    points: &[Point],
    width: usize,
    height: usize,
    sigma: f64,
) -> Result<DensityMap> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!("sigma {sigma} must be positive")));
    }
    check_points(points, width, height)?;
    let mut map = DensityMap::zeros(width, height, sigma);
    let radius = (TRUNCATE_SIGMAS * sigma).ceil() as isize;
    let inv = 1.0 / (2.0 * sigma * sigma);
    let mut kernel = Vec::new();
    for p in points {
        let (pc, pr) = p.pixel();
        let c0 = (pc as isize - radius).max(0) as usize;
        let c1 = (pc as isize + radius).min(width as isize - 1) as usize;
        let r0 = (pr as isize - radius).max(0) as usize;
        let r1 = (pr as isize + radius).min(height as isize - 1) as usize;
        kernel.clear();
        let mut mass = 0.0;
        for r in r0..=r1 {
            let dy = r as f64 + 0.5 - p.y;
            for c in c0..=c1 {
                let dx = c as f64 + 0.5 - p.x;
                let k = (-(dx * dx + dy * dy) * inv).exp();
                mass += k;
                kernel.push(k);
            }
        }
        let cols = c1 - c0 + 1;
        for (i, k) in kernel.iter().enumerate() {
            let (r, c) = (r0 + i / cols, c0 + i % cols);
            map.values[r * width + c] += k / mass;
        }
    }
    Ok(map)
}

/// Total mass of the map, accumulated in raster order.
pub fn count_from_density(m: &DensityMap) -> f64 {
    m.values.iter().sum()
}

/// Block boundaries for an `n`-way split of `len`; the last block absorbs
/// the remainder.
pub fn block_edges(len: usize, n: usize) -> Vec<usize> {
    let step = len / n;
    (0..=n).map(|i| if i == n { len } else { i * step }).collect()
}

/// Index of the block containing pixel coordinate `v` (see [`block_edges`]).
pub fn block_index(v: usize, len: usize, n: usize) -> usize {
    (v / (len / n)).min(n - 1)
}

/// Integrates the map over a `grid_n x grid_n` partition. Returns a row-major
/// matrix where entry `row * grid_n + col` is the mass of that block.
pub fn cell_counts(m: &DensityMap, grid_n: usize) -> Result<Vec<f64>> {
    if grid_n == 0 || grid_n > m.width.min(m.height) {
        return Err(Error::InvalidArgument(format!(
            "grid {grid_n} invalid for {}x{} map",
            m.width, m.height
        )));
    }
    let mut cells = vec![0.0; grid_n * grid_n];
    let xe = block_edges(m.width, grid_n);
    let ye = block_edges(m.height, grid_n);
    for gy in 0..grid_n {
        for gx in 0..grid_n {
            let mut s = 0.0;
            for r in ye[gy]..ye[gy + 1] {
                s += m.values[r * m.width + xe[gx]..r * m.width + xe[gx + 1]]
                    .iter()
                    .sum::<f64>();
            }
            cells[gy * grid_n + gx] = s;
        }
    }
    Ok(cells)
}

/// Ground-truth cell counts: number of points whose pixel falls in each block.
pub fn point_cell_counts(
    points: &[Point],
    width: usize,
    height: usize,
    grid_n: usize,
) -> Result<Vec<f64>> {
    if grid_n == 0 || grid_n > width.min(height) {
        return Err(Error::InvalidArgument(format!(
            "grid {grid_n} invalid for {width}x{height} image"
        )));
    }
    check_points(points, width, height)?;
    let mut cells = vec![0.0; grid_n * grid_n];
    for p in points {
        let (c, r) = p.pixel();
        cells[block_index(r, height, grid_n) * grid_n + block_index(c, width, grid_n)] += 1.0;
    }
    Ok(cells)
}
