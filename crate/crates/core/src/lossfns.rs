//! Training objectives with analytic gradients with respect to the model
//! output: the blob-based point-supervision loss and the density
//! least-squares loss.

use serde::{Deserialize, Serialize};

use crate::blobkit::{blob_count, points_per_blob, watershed_split, BlobMap};
use crate::density::DensityMap;
use crate::error::{Error, Result};
use crate::raster::{check_points, Point};
use crate::scalar::Scalar;

/// Probabilities are clamped to `[EPS, 1 - EPS]` before taking logarithms.
pub const EPS: f64 = 1e-6;

/// Foreground threshold that defines blobs.
pub const BLOB_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LcfcnLossBreakdown {
    pub image_term: f64,
    pub point_term: f64,
    pub split_term: f64,
    pub fp_term: f64,
    pub total: f64,
}

/// The piecewise-constant structure the loss is built on: everything that
/// depends on thresholding or ordering rather than smoothly on `prob`.
#[derive(Debug, Clone, PartialEq)]
pub struct LcfcnStructure {
    pub argmax: usize,
    pub blobs: BlobMap,
    /// `(weight, boundary pixels)` per blob holding two or more points.
    pub splits: Vec<(usize, Vec<usize>)>,
    /// Pixels of blobs holding no point.
    pub false_positive_pixels: Vec<usize>,
}

pub fn lcfcn_structure<T: Scalar>(
    prob: &[T],
    width: usize,
    height: usize,
    points: &[Point],
) -> Result<LcfcnStructure> {
    if prob.len() != width * height {
        return Err(Error::ShapeMismatch(format!(
            "probability map of {} pixels for {width}x{height}",
            prob.len()
        )));
    }
    check_points(points, width, height)?;
    let mut argmax = 0;
    for (i, p) in prob.iter().enumerate() {
        if *p > prob[argmax] {
            argmax = i;
        }
    }
    let blobs = blob_count(prob, width, height, BLOB_THRESHOLD)?.blobs;
    let counts = points_per_blob(&blobs, points)?;
    let pixels = blobs.pixels();
    let mut splits = Vec::new();
    let mut false_positive_pixels = Vec::new();
    for (b, &m) in counts.per_blob.iter().enumerate() {
        let label = b as u32 + 1;
        if m == 0 {
            false_positive_pixels.extend_from_slice(&pixels[b]);
        } else if m >= 2 {
            let seeds: Vec<Point> = points
                .iter()
                .filter(|p| {
                    let (c, r) = p.pixel();
                    blobs.label_at(c, r) == label
                })
                .copied()
                .collect();
            let mut distinct: Vec<(usize, usize)> = seeds.iter().map(Point::pixel).collect();
            distinct.sort_unstable();
            distinct.dedup();
            if distinct.len() < 2 {
                // all points share one pixel, nothing to split
                continue;
            }
            let boundary = watershed_split(prob, width, height, &pixels[b], &seeds)?;
            splits.push((m, boundary));
        }
    }
    Ok(LcfcnStructure {
        argmax,
        blobs,
        splits,
        false_positive_pixels,
    })
}

/// `-log(clamp(p))` and its derivative in `p` (zero where clamped).
#[inline]
fn neg_log<T: Scalar>(p: T) -> (f64, T) {
    let v: f64 = p.into();
    if v <= EPS {
        (-EPS.ln(), T::zero())
    } else if v >= 1.0 - EPS {
        (-(1.0 - EPS).ln(), T::zero())
    } else {
        (-v.ln(), -T::one() / p)
    }
}

/// `-log(1 - clamp(p))` and its derivative in `p` (zero where clamped).
#[inline]
fn neg_log_complement<T: Scalar>(p: T) -> (f64, T) {
    let v: f64 = p.into();
    if v <= EPS {
        (-(1.0 - EPS).ln(), T::zero())
    } else if v >= 1.0 - EPS {
        (-EPS.ln(), T::zero())
    } else {
        (-(1.0 - v).ln(), T::one() / (T::one() - p))
    }
}

/// Blob-based point-supervision loss over a foreground probability map.
///
/// * image term: `-log max p` when the image has points, else `-log(1 - max p)`
/// * point term: `-sum log p` at each annotated pixel
/// * split term: for each blob with `m >= 2` points, `m * sum -log(1 - p)` over
///   its watershed boundary
/// * false-positive term: `sum -log(1 - p)` over blobs without points
///
/// The gradient treats the blob structure as fixed.
pub fn lcfcn_loss<T: Scalar>(
    prob: &[T],
    width: usize,
    height: usize,
    points: &[Point],
) -> Result<(LcfcnLossBreakdown, Vec<T>)> {
    let s = lcfcn_structure(prob, width, height, points)?;
    Ok(lcfcn_loss_with_structure(prob, width, points, &s))
}

pub fn lcfcn_loss_with_structure<T: Scalar>(
    prob: &[T],
    width: usize,
    points: &[Point],
    s: &LcfcnStructure,
) -> (LcfcnLossBreakdown, Vec<T>) {
    let mut grad = vec![T::zero(); prob.len()];
    let mut out = LcfcnLossBreakdown::default();

    let pmax = prob[s.argmax];
    let (v, g) = if points.is_empty() {
        neg_log_complement(pmax)
    } else {
        neg_log(pmax)
    };
    out.image_term = v;
    grad[s.argmax] = grad[s.argmax] + g;

    for p in points {
        let (c, r) = p.pixel();
        let i = r * width + c;
        let (v, g) = neg_log(prob[i]);
        out.point_term += v;
        grad[i] = grad[i] + g;
    }

    for (m, boundary) in &s.splits {
        let w = T::of(*m as f64);
        let mut sum = 0.0;
        for &i in boundary {
            let (v, g) = neg_log_complement(prob[i]);
            sum += v;
            grad[i] = grad[i] + w * g;
        }
        out.split_term += *m as f64 * sum;
    }

    for &i in &s.false_positive_pixels {
        let (v, g) = neg_log_complement(prob[i]);
        out.fp_term += v;
        grad[i] = grad[i] + g;
    }

    out.total = out.image_term + out.point_term + out.split_term + out.fp_term;
    (out, grad)
}

/// `0.5 * sum (pred - target)^2` and its gradient `pred - target`.
pub fn density_loss_raw<T: Scalar>(pred: &[T], target: &[T]) -> Result<(f64, Vec<T>)> {
    if pred.len() != target.len() {
        return Err(Error::ShapeMismatch(format!(
            "prediction has {} values, target {}",
            pred.len(),
            target.len()
        )));
    }
    let mut loss = 0.0;
    let grad = pred
        .iter()
        .zip(target)
        .map(|(p, t)| {
            let d = *p - *t;
            let df: f64 = d.into();
            loss += 0.5 * df * df;
            d
        })
        .collect();
    Ok((loss, grad))
}

pub fn density_loss(pred: &DensityMap, target: &DensityMap) -> Result<(f64, Vec<f64>)> {
    if (pred.width(), pred.height()) != (target.width(), target.height()) {
        return Err(Error::ShapeMismatch(format!(
            "prediction {}x{} vs target {}x{}",
            pred.width(),
            pred.height(),
            target.width(),
            target.height()
        )));
    }
    density_loss_raw(pred.values(), target.values())
}
