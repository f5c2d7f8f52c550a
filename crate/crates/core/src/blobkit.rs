//! Connected components, per-blob point accounting and seeded watershed
//! splitting over probability maps.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};
use crate::raster::{check_points, Point};

/// 4-connected labeling of a binary mask. Label 0 is background; blobs are
/// numbered `1..=count` in raster order of their first pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlobMap {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<u32>,
    pub count: usize,
}

impl BlobMap {
    #[inline]
    pub fn label_at(&self, col: usize, row: usize) -> u32 {
        self.labels[row * self.width + col]
    }

    /// Pixel indices of every blob, indexed by `label - 1`.
    pub fn pixels(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.count];
        for (i, l) in self.labels.iter().enumerate() {
            if *l > 0 {
                out[*l as usize - 1].push(i);
            }
        }
        out
    }
}

fn find(parent: &mut [u32], mut x: u32) -> u32 {
    while parent[x as usize] != x {
        parent[x as usize] = parent[parent[x as usize] as usize];
        x = parent[x as usize];
    }
    x
}

/// Two-pass union-find labeling with 4-connectivity.
pub fn connected_components(mask: &[bool], width: usize, height: usize) -> Result<BlobMap> {
    if mask.len() != width * height {
        return Err(Error::ShapeMismatch(format!(
            "mask of {} pixels for {width}x{height}",
            mask.len()
        )));
    }
    let mut provisional = vec![0u32; mask.len()];
    // parent[0] is unused so provisional labels index directly
    let mut parent: Vec<u32> = vec![0];
    for r in 0..height {
        for c in 0..width {
            let i = r * width + c;
            if !mask[i] {
                continue;
            }
            let left = if c > 0 { provisional[i - 1] } else { 0 };
            let up = if r > 0 { provisional[i - width] } else { 0 };
            provisional[i] = match (left, up) {
                (0, 0) => {
                    let l = parent.len() as u32;
                    parent.push(l);
                    l
                }
                (l, 0) | (0, l) => l,
                (a, b) => {
                    let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                    if ra != rb {
                        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
                        parent[hi as usize] = lo;
                    }
                    a
                }
            };
        }
    }
    let mut remap = vec![0u32; parent.len()];
    let mut count = 0u32;
    let mut labels = vec![0u32; mask.len()];
    for (i, p) in provisional.iter().enumerate() {
        if *p == 0 {
            continue;
        }
        let root = find(&mut parent, *p) as usize;
        if remap[root] == 0 {
            count += 1;
            remap[root] = count;
        }
        labels[i] = remap[root];
    }
    Ok(BlobMap {
        width,
        height,
        labels,
        count: count as usize,
    })
}

/// Points attributed to the blob containing their pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlobPoints {
    /// Point count per blob, indexed by `label - 1`.
    pub per_blob: Vec<usize>,
    pub background: usize,
}

impl BlobPoints {
    pub fn total(&self) -> usize {
        self.per_blob.iter().sum::<usize>() + self.background
    }
}

pub fn points_per_blob(blobs: &BlobMap, points: &[Point]) -> Result<BlobPoints> {
    check_points(points, blobs.width, blobs.height)?;
    let mut out = BlobPoints {
        per_blob: vec![0; blobs.count],
        background: 0,
    };
    for p in points {
        let (c, r) = p.pixel();
        match blobs.label_at(c, r) {
            0 => out.background += 1,
            l => out.per_blob[l as usize - 1] += 1,
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct FloodEntry {
    level: f64,
    seq: u64,
    pixel: usize,
}

impl Eq for FloodEntry {}

impl Ord for FloodEntry {
    // max-heap: highest probability first, then earliest arrival
    fn cmp(&self, other: &Self) -> Ordering {
        self.level
            .total_cmp(&other.level)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

impl PartialOrd for FloodEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

const UNLABELED: i32 = 0;
const BOUNDARY: i32 = -1;

/// Seeded watershed over the topography `-prob`, restricted to `blob` (pixel
/// indices). Regions grow from each distinct seed pixel in order of
/// decreasing probability; equal probabilities are flooded in arrival order,
/// where arrival follows raster order of seeds and of neighbors. A pixel
/// reached by two different regions becomes a boundary pixel. Blob pixels cut
/// off from every seed by the boundary are returned as boundary too, so that
/// removing the result leaves exactly one component per seed. Seeds in
/// 4-adjacent pixels cannot be separated and end up in one component.
///
/// Returns the boundary pixel indices in ascending order.
pub fn watershed_split<T>(
    prob: &[T],
    width: usize,
    height: usize,
    blob: &[usize],
    seeds: &[Point],
) -> Result<Vec<usize>>
where
    T: Copy + Into<f64>,
{
    if prob.len() != width * height {
        return Err(Error::ShapeMismatch(format!(
            "probability map of {} pixels for {width}x{height}",
            prob.len()
        )));
    }
    check_points(seeds, width, height)?;
    let mut in_blob = vec![false; prob.len()];
    for &i in blob {
        if i >= prob.len() {
            return Err(Error::InvalidArgument(format!("blob pixel {i} out of range")));
        }
        in_blob[i] = true;
    }
    let mut seed_pixels: Vec<usize> = seeds
        .iter()
        .map(|p| {
            let (c, r) = p.pixel();
            r * width + c
        })
        .collect();
    if let Some(p) = seed_pixels.iter().find(|i| !in_blob[**i]) {
        return Err(Error::InvalidArgument(format!(
            "seed at pixel ({}, {}) lies outside the blob",
            p % width,
            p / width
        )));
    }
    seed_pixels.sort_unstable();
    seed_pixels.dedup();
    if seed_pixels.len() < 2 {
        return Err(Error::InvalidArgument(
            "watershed split needs at least two distinct seeds".into(),
        ));
    }

    let mut label = vec![UNLABELED; prob.len()];
    let mut queued = vec![false; prob.len()];
    let mut heap = BinaryHeap::new();
    let mut seq = 0u64;
    for (k, &s) in seed_pixels.iter().enumerate() {
        label[s] = k as i32 + 1;
        queued[s] = true;
    }
    let push_neighbors = |i: usize,
                          heap: &mut BinaryHeap<FloodEntry>,
                          queued: &mut [bool],
                          seq: &mut u64| {
        for n in neighbors4(i, width, height).into_iter().flatten() {
            if in_blob[n] && !queued[n] {
                queued[n] = true;
                heap.push(FloodEntry {
                    level: prob[n].into(),
                    seq: *seq,
                    pixel: n,
                });
                *seq += 1;
            }
        }
    };
    for &s in &seed_pixels {
        push_neighbors(s, &mut heap, &mut queued, &mut seq);
    }
    while let Some(FloodEntry { pixel, .. }) = heap.pop() {
        let mut found = UNLABELED;
        let mut conflict = false;
        for n in neighbors4(pixel, width, height).into_iter().flatten() {
            let l = label[n];
            if l > 0 {
                if found == UNLABELED {
                    found = l;
                } else if found != l {
                    conflict = true;
                }
            }
        }
        if conflict {
            label[pixel] = BOUNDARY;
        } else {
            debug_assert!(found > 0);
            label[pixel] = found;
            push_neighbors(pixel, &mut heap, &mut queued, &mut seq);
        }
    }
    let mut boundary: Vec<usize> = blob
        .iter()
        .copied()
        .filter(|&i| label[i] == BOUNDARY || label[i] == UNLABELED)
        .collect();
    boundary.sort_unstable();
    boundary.dedup();
    Ok(boundary)
}

/// Up, left, right, down neighbors (raster order).
#[inline]
pub(crate) fn neighbors4(i: usize, width: usize, height: usize) -> [Option<usize>; 4] {
    let (r, c) = (i / width, i % width);
    [
        (r > 0).then(|| i - width),
        (c > 0).then(|| i - 1),
        (c + 1 < width).then(|| i + 1),
        (r + 1 < height).then(|| i + width),
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlobDetections {
    pub count: usize,
    /// Mean pixel-center coordinate of each blob, in label order.
    pub centroids: Vec<Point>,
    pub blobs: BlobMap,
}

/// Thresholds `prob >= threshold` and counts the resulting blobs.
pub fn blob_count<T>(prob: &[T], width: usize, height: usize, threshold: f64) -> Result<BlobDetections>
where
    T: Copy + Into<f64>,
{
    let mask: Vec<bool> = prob.iter().map(|p| (*p).into() >= threshold).collect();
    let blobs = connected_components(&mask, width, height)?;
    let mut sums = vec![(0.0f64, 0.0f64, 0usize); blobs.count];
    for (i, l) in blobs.labels.iter().enumerate() {
        if *l > 0 {
            let s = &mut sums[*l as usize - 1];
            s.0 += (i % width) as f64 + 0.5;
            s.1 += (i / width) as f64 + 0.5;
            s.2 += 1;
        }
    }
    let centroids = sums
        .iter()
        .map(|(x, y, n)| Point::new(x / *n as f64, y / *n as f64))
        .collect();
    Ok(BlobDetections {
        count: blobs.count,
        centroids,
        blobs,
    })
}
