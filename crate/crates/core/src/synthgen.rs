//! Deterministic synthetic pasture tiles with known object points.
//!
//! Each tile is a function of `(seed, index)` only: a low-frequency
//! green/brown background, unannotated distractors (bare-soil patches and
//! dark bushes) and bright oriented ellipses for the animals, one point at
//! each ellipse center.

use rand::distr::{Distribution, Uniform, weighted::WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Poisson;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{Point, Raster, TileLabel, TileRecord, DEFAULT_GSD, DEFAULT_TILE_SIZE};

/// Lower edges of the count bins `{0}, [1,10], [11,100], [101,inf)`.
pub const BIN_LOWER: [usize; 4] = [0, 1, 11, 101];

/// Fraction of tiles with at least one animal in the reference dataset
/// (903 of 12,252 labeled patches).
pub const REFERENCE_POSITIVE_FRACTION: f64 = 903.0 / 12_252.0;

const PLACEMENT_ATTEMPTS: usize = 1000;
const MAX_COUNT_RESAMPLES: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub tile_size: usize,
    pub gsd: f64,
    /// Mean body length in meters.
    pub cattle_length_m: f64,
    /// Probability of each count bin, aligned with [`BIN_LOWER`].
    pub count_weights: [f64; 4],
    /// Expected distractors per tile.
    pub distractor_density: f64,
    pub seed: u64,
    /// Upper count for the open-ended bin; `None` derives it from tile area.
    pub max_count: Option<usize>,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            tile_size: DEFAULT_TILE_SIZE,
            gsd: DEFAULT_GSD,
            cattle_length_m: 2.0,
            count_weights: Self::weights_for_positive_fraction(REFERENCE_POSITIVE_FRACTION),
            distractor_density: 4.0,
            seed: 0,
            max_count: None,
        }
    }
}

impl SceneConfig {
    /// Splits `positive` across the non-empty bins in a long-tailed
    /// 54/37/9 ratio; the rest goes to the empty bin.
    pub fn weights_for_positive_fraction(positive: f64) -> [f64; 4] {
        let p = positive.clamp(0.0, 1.0);
        [1.0 - p, p * 0.54, p * 0.37, p * 0.09]
    }

    pub fn validate(&self) -> Result<()> {
        if self.tile_size < 32 {
            return Err(Error::InvalidArgument(format!(
                "tile size {} below minimum 32",
                self.tile_size
            )));
        }
        if !(self.gsd > 0.0 && self.gsd.is_finite()) {
            return Err(Error::InvalidArgument(format!("gsd {} must be positive", self.gsd)));
        }
        if !(self.cattle_length_m > 0.0 && self.cattle_length_m.is_finite()) {
            return Err(Error::InvalidArgument("object length must be positive".into()));
        }
        if self.count_weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::InvalidArgument("count weights must be non-negative".into()));
        }
        let total: f64 = self.count_weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!("count weights sum to {total}, not 1")));
        }
        if !(self.distractor_density >= 0.0 && self.distractor_density.is_finite()) {
            return Err(Error::InvalidArgument("distractor density must be non-negative".into()));
        }
        if self.count_weights[3] > 0.0 && self.max_count() < BIN_LOWER[3] {
            return Err(Error::InvalidArgument(format!(
                "tile size {} cannot hold {} objects",
                self.tile_size, BIN_LOWER[3]
            )));
        }
        Ok(())
    }

    /// Object length in pixels.
    pub fn object_length_px(&self) -> f64 {
        self.cattle_length_m / self.gsd
    }

    pub fn max_count(&self) -> usize {
        self.max_count.unwrap_or_else(|| {
            let l = self.object_length_px();
            let area = (self.tile_size * self.tile_size) as f64;
            ((0.35 * area / (l * l)) as usize).min(1500)
        })
    }

    fn separation(&self, count: usize) -> f64 {
        let factor = if count > 10 { 1.0 } else { 1.5 };
        factor * self.object_length_px()
    }
}

/// Bin index of a ground-truth count under [`BIN_LOWER`].
pub fn count_bin(count: usize) -> usize {
    BIN_LOWER.iter().rposition(|lo| count >= *lo).unwrap_or(0)
}

fn tile_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn sample_in_bin(rng: &mut ChaCha8Rng, bin: usize, max_count: usize) -> usize {
    match bin {
        0 => 0,
        1 => rng.random_range(1..=10),
        _ => {
            let lo = BIN_LOWER[bin] as f64;
            let hi = if bin == 2 { 100.0 } else { max_count.max(101) as f64 };
            // log-uniform: long tail within the bin
            let v = (rng.random_range(lo.ln()..(hi + 1.0).ln())).exp().floor();
            (v as usize).clamp(lo as usize, hi as usize)
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Ellipse {
    cx: f64,
    cy: f64,
    semi_major: f64,
    semi_minor: f64,
    angle: f64,
}

impl Ellipse {
    fn contains(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.angle.sin_cos();
        let (dx, dy) = (x - self.cx, y - self.cy);
        let u = (dx * c + dy * s) / self.semi_major;
        let v = (-dx * s + dy * c) / self.semi_minor;
        u * u + v * v <= 1.0
    }
}

/// RGB canvas in `[0, 1]`, row-major interleaved.
struct Canvas {
    size: usize,
    rgb: Vec<f64>,
}

impl Canvas {
    /// Blends `color` into every pixel by its 4x4 supersampled coverage of
    /// `inside`, within the bounding box `[x0, x1) x [y0, y1)`.
    fn paint<F: Fn(f64, f64) -> bool>(&mut self, bbox: (f64, f64, f64, f64), color: [f64; 3], alpha: f64, inside: F) {
        let (x0, y0, x1, y1) = bbox;
        let clamp = |v: f64| (v.max(0.0) as usize).min(self.size);
        for r in clamp(y0.floor())..clamp(y1.ceil()) {
            for c in clamp(x0.floor())..clamp(x1.ceil()) {
                let mut hits = 0;
                for sy in 0..4 {
                    for sx in 0..4 {
                        if inside(c as f64 + (sx as f64 + 0.5) / 4.0, r as f64 + (sy as f64 + 0.5) / 4.0) {
                            hits += 1;
                        }
                    }
                }
                if hits == 0 {
                    continue;
                }
                let a = alpha * hits as f64 / 16.0;
                let px = &mut self.rgb[(r * self.size + c) * 3..][..3];
                for k in 0..3 {
                    px[k] = px[k] * (1.0 - a) + color[k] * a;
                }
            }
        }
    }
}

/// Smooth value noise: bilinear interpolation of a random lattice with
/// spacing `cell` pixels, smoothstep-weighted.
fn value_noise(rng: &mut ChaCha8Rng, size: usize, cell: usize) -> Vec<f64> {
    let n = size / cell + 2;
    let lattice: Vec<f64> = (0..n * n).map(|_| rng.random::<f64>()).collect();
    let mut out = Vec::with_capacity(size * size);
    for r in 0..size {
        let fy = r as f64 / cell as f64;
        let (iy, ty) = (fy.floor() as usize, smooth(fy.fract()));
        for c in 0..size {
            let fx = c as f64 / cell as f64;
            let (ix, tx) = (fx.floor() as usize, smooth(fx.fract()));
            let a = lattice[iy * n + ix] * (1.0 - tx) + lattice[iy * n + ix + 1] * tx;
            let b = lattice[(iy + 1) * n + ix] * (1.0 - tx) + lattice[(iy + 1) * n + ix + 1] * tx;
            out.push(a * (1.0 - ty) + b * ty);
        }
    }
    out
}

fn smooth(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

const GRASS: [f64; 3] = [0.24, 0.42, 0.17];
const SOIL: [f64; 3] = [0.47, 0.40, 0.26];
const SAND: [f64; 3] = [0.78, 0.72, 0.58];
const BUSH: [f64; 3] = [0.08, 0.17, 0.06];
const HIDE: [f64; 3] = [0.95, 0.94, 0.90];

fn background(rng: &mut ChaCha8Rng, size: usize) -> Canvas {
    let coarse = value_noise(rng, size, 48);
    let fine = value_noise(rng, size, 6);
    let mut rgb = Vec::with_capacity(size * size * 3);
    for i in 0..size * size {
        let t = coarse[i];
        let shade = 0.85 + 0.25 * fine[i] + rng.random_range(-0.03..0.03);
        for k in 0..3 {
            rgb.push((GRASS[k] * (1.0 - t) + SOIL[k] * t) * shade);
        }
    }
    Canvas { size, rgb }
}

/// Irregular patch: a cluster of overlapping discs.
fn paint_patch(rng: &mut ChaCha8Rng, canvas: &mut Canvas, color: [f64; 3], radii: (f64, f64), alpha: f64) {
    let size = canvas.size as f64;
    let (cx, cy) = (rng.random_range(0.0..size), rng.random_range(0.0..size));
    let lobes = rng.random_range(3..=6);
    let discs: Vec<(f64, f64, f64)> = (0..lobes)
        .map(|_| {
            let r = rng.random_range(radii.0..radii.1);
            (cx + rng.random_range(-r..r), cy + rng.random_range(-r..r), r)
        })
        .collect();
    let reach = discs
        .iter()
        .map(|(x, y, r)| ((x - cx).abs() + r).max((y - cy).abs() + r))
        .fold(0.0, f64::max);
    canvas.paint((cx - reach, cy - reach, cx + reach, cy + reach), color, alpha, |x, y| {
        discs.iter().any(|(dx, dy, r)| (x - dx).powi(2) + (y - dy).powi(2) <= r * r)
    });
}

fn place_objects(rng: &mut ChaCha8Rng, cfg: &SceneConfig, count: usize) -> Option<Vec<Ellipse>> {
    let size = cfg.tile_size as f64;
    let length = cfg.object_length_px();
    let min_sep = cfg.separation(count);
    let margin = 1.0;
    let mut placed: Vec<Ellipse> = Vec::with_capacity(count);
    for _ in 0..count {
        let mut ok = false;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let (cx, cy) = (
                rng.random_range(margin..size - margin),
                rng.random_range(margin..size - margin),
            );
            if placed
                .iter()
                .all(|e| (e.cx - cx).powi(2) + (e.cy - cy).powi(2) >= min_sep * min_sep)
            {
                let l = length * rng.random_range(0.85..1.15);
                placed.push(Ellipse {
                    cx,
                    cy,
                    semi_major: l / 2.0,
                    semi_minor: l * rng.random_range(0.2..0.26),
                    angle: rng.random_range(0.0..std::f64::consts::PI),
                });
                ok = true;
                break;
            }
        }
        if !ok {
            return None;
        }
    }
    Some(placed)
}

/// Number of annotated objects tile `index` will contain.
pub fn tile_count(cfg: &SceneConfig, index: u64) -> Result<usize> {
    cfg.validate()?;
    let mut rng = tile_rng(cfg.seed, index);
    let (count, _) = draw_layout(&mut rng, cfg)?;
    Ok(count)
}

fn draw_layout(rng: &mut ChaCha8Rng, cfg: &SceneConfig) -> Result<(usize, Vec<Ellipse>)> {
    let bins = WeightedIndex::new(cfg.count_weights)
        .map_err(|e| Error::InvalidArgument(format!("count weights: {e}")))?;
    let bin = bins.sample(rng);
    for _ in 0..MAX_COUNT_RESAMPLES {
        let count = sample_in_bin(rng, bin, cfg.max_count());
        if let Some(objects) = place_objects(rng, cfg, count) {
            return Ok((count, objects));
        }
    }
    Err(Error::InvalidArgument(format!(
        "could not place objects for bin starting at {} in a {} px tile",
        BIN_LOWER[bin], cfg.tile_size
    )))
}

/// Renders tile `index`. The raster is quantized to the 8-bit grid so a PNG
/// round trip is lossless.
pub fn generate_tile(cfg: &SceneConfig, index: u64) -> Result<TileRecord> {
    cfg.validate()?;
    let mut rng = tile_rng(cfg.seed, index);
    let (_, objects) = draw_layout(&mut rng, cfg)?;
    let size = cfg.tile_size;
    let mut canvas = background(&mut rng, size);

    let n_distractors = if cfg.distractor_density > 0.0 {
        let poisson = Poisson::new(cfg.distractor_density)
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        poisson.sample(&mut rng) as usize
    } else {
        0
    };
    let length = cfg.object_length_px();
    for _ in 0..n_distractors {
        if rng.random_bool(0.5) {
            let shade = rng.random_range(0.9..1.0);
            let color = SAND.map(|v| v * shade);
            paint_patch(&mut rng, &mut canvas, color, (0.5 * length, 1.2 * length), 0.85);
        } else {
            paint_patch(&mut rng, &mut canvas, BUSH, (0.3 * length, 0.8 * length), 0.9);
        }
    }

    let mut points = Vec::with_capacity(objects.len());
    for e in &objects {
        let shade = rng.random_range(0.82..1.0);
        let color = HIDE.map(|v| v * shade);
        let r = e.semi_major;
        canvas.paint((e.cx - r, e.cy - r, e.cx + r, e.cy + r), color, 1.0, |x, y| e.contains(x, y));
        points.push(Point::new(e.cx, e.cy));
    }

    let data = canvas
        .rgb
        .iter()
        .map(|v| ((v.clamp(0.0, 1.0) * 255.0).round() / 255.0) as f32)
        .collect();
    let image = Raster::new(size, size, 3, data)?.with_gsd(cfg.gsd);
    Ok(TileRecord {
        id: format!("synth-{:06}", index),
        image,
        label: TileLabel::for_count(points.len()),
        points,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Deterministic split assignment for tiles `0..n`. Sizes are rounded from
/// the fractions with every split non-empty; membership is a seeded shuffle.
pub fn assign_splits(n: usize, fractions: [f64; 3], seed: u64) -> Result<Vec<Split>> {
    if n < 3 {
        return Err(Error::InvalidArgument(format!("need at least 3 tiles, got {n}")));
    }
    if fractions.iter().any(|f| !(*f > 0.0)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "split fractions {fractions:?} must be positive and sum to 1"
        )));
    }
    let mut n_train = ((n as f64 * fractions[0]).round() as usize).max(1);
    let mut n_val = ((n as f64 * fractions[1]).round() as usize).max(1);
    while n_train + n_val > n - 1 {
        if n_train >= n_val && n_train > 1 {
            n_train -= 1;
        } else {
            n_val -= 1;
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = tile_rng(seed, u64::MAX);
    for i in (1..n).rev() {
        let j = Uniform::new_inclusive(0, i).expect("valid range").sample(&mut rng);
        order.swap(i, j);
    }
    let mut splits = vec![Split::Test; n];
    for (rank, &i) in order.iter().enumerate() {
        splits[i] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
    }
    Ok(splits)
}

/// Generates `n` tiles with their split labels.
pub fn generate_dataset(
    cfg: &SceneConfig,
    n: usize,
    fractions: [f64; 3],
) -> Result<Vec<(TileRecord, Split)>> {
    let splits = assign_splits(n, fractions, cfg.seed)?;
    splits
        .into_iter()
        .enumerate()
        .map(|(i, s)| Ok((generate_tile(cfg, i as u64)?, s)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn small(weights: [f64; 4]) -> SceneConfig {
        SceneConfig {
            tile_size: 128,
            count_weights: weights,
            seed: 42,
            ..SceneConfig::default()
        }
    }

    #[test]
    fn forced_empty_bin() {
        let t = generate_tile(&small([1.0, 0.0, 0.0, 0.0]), 3).unwrap();
        assert!(t.points.is_empty());
        assert_eq!(t.label, TileLabel::NoCow);
    }

    #[test]
    fn deterministic_per_seed_and_index() {
        let cfg = small([0.2, 0.3, 0.3, 0.2]);
        for i in [0, 5, 17] {
            let a = generate_tile(&cfg, i).unwrap();
            let b = generate_tile(&cfg, i).unwrap();
            assert_eq!(a, b);
        }
        assert_ne!(generate_tile(&cfg, 0).unwrap().image, generate_tile(&cfg, 1).unwrap().image);
    }

    #[test]
    fn points_inside_bounds_and_separated() {
        let cfg = small([0.0, 0.0, 0.0, 1.0]);
        let t = generate_tile(&cfg, 9).unwrap();
        assert!(t.points.len() >= 101);
        let sep = cfg.object_length_px();
        for (i, a) in t.points.iter().enumerate() {
            assert!(a.in_bounds(128, 128));
            for b in &t.points[i + 1..] {
                assert!(((a.x - b.x).powi(2) + (a.y - b.y).powi(2)).sqrt() >= sep - 1e-9);
            }
        }
    }

    #[test]
    fn objects_are_brighter_than_grass() {
        let cfg = small([0.0, 1.0, 0.0, 0.0]);
        let t = generate_tile(&cfg, 2).unwrap();
        for p in &t.points {
            let (c, r) = p.pixel();
            let lum: f32 = (0..3).map(|k| t.image.get(c, r, k)).sum::<f32>() / 3.0;
            assert!(lum > 0.6, "center luminance {lum}");
        }
    }

    #[test]
    fn bins() {
        assert_eq!(count_bin(0), 0);
        assert_eq!(count_bin(7), 1);
        assert_eq!(count_bin(10), 1);
        assert_eq!(count_bin(11), 2);
        assert_eq!(count_bin(55), 2);
        assert_eq!(count_bin(100), 2);
        assert_eq!(count_bin(101), 3);
        assert_eq!(count_bin(300), 3);
    }

    #[test]
    fn split_sizes_and_disjointness() {
        let s = assign_splits(10, [0.6, 0.2, 0.2], 1).unwrap();
        let count = |k| s.iter().filter(|v| **v == k).count();
        assert_eq!((count(Split::Train), count(Split::Val), count(Split::Test)), (6, 2, 2));
        assert_eq!(s, assign_splits(10, [0.6, 0.2, 0.2], 1).unwrap());

        let s = assign_splits(3, [0.98, 0.01, 0.01], 4).unwrap();
        let kinds: HashSet<_> = s.iter().collect();
        assert_eq!(kinds.len(), 3);
        assert!(assign_splits(2, [0.6, 0.2, 0.2], 1).is_err());
        assert!(assign_splits(10, [0.6, 0.2, 0.3], 1).is_err());
    }

    #[test]
    fn rejects_invalid_configs() {
        assert!(small([0.5, 0.5, 0.5, 0.0]).validate().is_err());
        let mut c = small([1.0, 0.0, 0.0, 0.0]);
        c.gsd = 0.0;
        assert!(c.validate().is_err());
        let tiny = SceneConfig {
            tile_size: 32,
            count_weights: [0.0, 0.0, 0.0, 1.0],
            ..SceneConfig::default()
        };
        assert!(tiny.validate().is_err());
    }
}
