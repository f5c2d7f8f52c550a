//! Slicing scenes into fixed-size tiles and distributing point annotations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{Point, Raster, DEFAULT_TILE_SIZE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PadPolicy {
    /// Emit only tiles fully covered by the scene.
    DropPartial,
    /// Emit border tiles mirror-padded to full size.
    ReflectPad,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileGrid {
    pub tile_size: usize,
    pub stride: usize,
    pub pad_policy: PadPolicy,
}

impl Default for TileGrid {
    fn default() -> Self {
        Self {
            tile_size: DEFAULT_TILE_SIZE,
            stride: DEFAULT_TILE_SIZE,
            pad_policy: PadPolicy::DropPartial,
        }
    }
}

impl TileGrid {
    pub fn new(tile_size: usize, stride: usize, pad_policy: PadPolicy) -> Result<Self> {
        let grid = Self {
            tile_size,
            stride,
            pad_policy,
        };
        grid.check()?;
        Ok(grid)
    }

    fn check(&self) -> Result<()> {
        if self.tile_size < 32 {
            return Err(Error::InvalidArgument(format!(
                "tile size {} below minimum 32",
                self.tile_size
            )));
        }
        if self.stride == 0 {
            return Err(Error::InvalidArgument("stride must be at least 1".into()));
        }
        Ok(())
    }

    /// Tile origins along one axis of length `n`.
    fn axis_origins(&self, n: usize) -> Vec<usize> {
        let mut out = Vec::new();
        match self.pad_policy {
            PadPolicy::DropPartial => {
                let mut o = 0;
                while o + self.tile_size <= n {
                    out.push(o);
                    o += self.stride;
                }
            }
            PadPolicy::ReflectPad => {
                let mut o = 0;
                loop {
                    out.push(o);
                    if o + self.tile_size >= n {
                        break;
                    }
                    o += self.stride;
                }
            }
        }
        out
    }
}

/// Tile origin as `(x, y)` = (column, row) of its top-left pixel in the scene.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Origin {
    pub x: usize,
    pub y: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tile {
    pub raster: Raster,
    pub origin: Origin,
}

/// Cuts `scene` into tiles ordered by origin row, then column.
pub fn slice(scene: &Raster, grid: &TileGrid) -> Result<Vec<Tile>> {
    grid.check()?;
    let xs = grid.axis_origins(scene.width());
    let ys = grid.axis_origins(scene.height());
    let mut tiles = Vec::with_capacity(xs.len() * ys.len());
    for &y in &ys {
        for &x in &xs {
            tiles.push(Tile {
                raster: scene.window_reflect(x, y, grid.tile_size, grid.tile_size),
                origin: Origin { x, y },
            });
        }
    }
    Ok(tiles)
}

/// Result of [`assign_points`]: tile-local point lists (same order as the
/// tiles) plus scene points that no tile covers.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Assignment {
    pub per_tile: Vec<Vec<Point>>,
    pub orphans: Vec<Point>,
}

/// Assigns scene points to every tile whose half-open pixel range
/// `[origin, origin + size)` contains them, in tile-local coordinates. With a
/// non-overlapping grid each point lands in exactly one tile or in `orphans`.
///
/// Only the real (unpadded) part of a reflect-padded tile owns points.
pub fn assign_points(
    points: &[Point],
    tiles: &[Tile],
    scene_width: usize,
    scene_height: usize,
) -> Assignment {
    let mut out = Assignment {
        per_tile: vec![Vec::new(); tiles.len()],
        orphans: Vec::new(),
    };
    for p in points {
        let mut owned = false;
        for (i, t) in tiles.iter().enumerate() {
            let x_end = (t.origin.x + t.raster.width()).min(scene_width) as f64;
            let y_end = (t.origin.y + t.raster.height()).min(scene_height) as f64;
            let (x0, y0) = (t.origin.x as f64, t.origin.y as f64);
            if p.x >= x0 && p.x < x_end && p.y >= y0 && p.y < y_end {
                out.per_tile[i].push(Point::new(p.x - x0, p.y - y0));
                owned = true;
            }
        }
        if !owned {
            out.orphans.push(*p);
        }
    }
    out
}

/// Writes tiles back into a `width x height` canvas, trimming padding.
/// Later tiles overwrite earlier ones where they overlap.
pub fn reassemble(tiles: &[Tile], width: usize, height: usize, channels: usize) -> Result<Raster> {
    let mut data = vec![0.0f32; width * height * channels];
    for t in tiles {
        if t.raster.channels() != channels {
            return Err(Error::ShapeMismatch(format!(
                "tile has {} channels, canvas {channels}",
                t.raster.channels()
            )));
        }
        let tw = t.raster.width();
        let cols = tw.min(width.saturating_sub(t.origin.x));
        let rows = t.raster.height().min(height.saturating_sub(t.origin.y));
        for r in 0..rows {
            let src = r * tw * channels;
            let dst = ((t.origin.y + r) * width + t.origin.x) * channels;
            data[dst..dst + cols * channels]
                .copy_from_slice(&t.raster.data()[src..src + cols * channels]);
        }
    }
    Raster::new(width, height, channels, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn scene(w: usize, h: usize) -> Raster {
        let data = (0..w * h).map(|i| (i % 251) as f32 / 250.0).collect();
        Raster::new(w, h, 1, data).unwrap()
    }

    fn grid(size: usize, pad: PadPolicy) -> TileGrid {
        TileGrid::new(size, size, pad).unwrap()
    }

    #[test]
    fn exact_tiling_of_square_scene() {
        let tiles = slice(&scene(1000, 1000), &grid(500, PadPolicy::DropPartial)).unwrap();
        let origins: Vec<_> = tiles.iter().map(|t| (t.origin.x, t.origin.y)).collect();
        assert_eq!(origins, vec![(0, 0), (500, 0), (0, 500), (500, 500)]);
    }

    #[test]
    fn drop_partial_discards_border() {
        let tiles = slice(&scene(1200, 500), &grid(500, PadPolicy::DropPartial)).unwrap();
        assert_eq!(tiles.len(), 2);
    }

    #[test]
    fn reflect_pad_mirrors_border_tile() {
        let s = scene(750, 500);
        let tiles = slice(&s, &grid(500, PadPolicy::ReflectPad)).unwrap();
        assert_eq!(tiles.len(), 2);
        let t = &tiles[1];
        assert_eq!(t.origin, Origin { x: 500, y: 0 });
        assert_eq!((t.raster.width(), t.raster.height()), (500, 500));
        // 250 real columns, then mirrored: local col 250 is scene col 748.
        for row in [0, 17, 499] {
            assert_eq!(t.raster.get(249, row, 0), s.get(749, row, 0));
            assert_eq!(t.raster.get(250, row, 0), s.get(748, row, 0));
            assert_eq!(t.raster.get(251, row, 0), s.get(747, row, 0));
        }
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(TileGrid::new(16, 16, PadPolicy::DropPartial).is_err());
        assert!(TileGrid::new(64, 0, PadPolicy::DropPartial).is_err());
    }

    #[test]
    fn half_open_assignment() {
        let tiles = slice(&scene(1000, 500), &grid(500, PadPolicy::DropPartial)).unwrap();
        let a = assign_points(
            &[Point::new(499.5, 0.0), Point::new(500.0, 0.0)],
            &tiles,
            1000,
            500,
        );
        assert_eq!(a.per_tile[0], vec![Point::new(499.5, 0.0)]);
        assert_eq!(a.per_tile[1], vec![Point::new(0.0, 0.0)]);
        assert!(a.orphans.is_empty());
    }

    #[test]
    fn dropped_region_points_become_orphans() {
        let tiles = slice(&scene(1200, 500), &grid(500, PadPolicy::DropPartial)).unwrap();
        let a = assign_points(&[Point::new(1100.0, 3.0)], &tiles, 1200, 500);
        assert_eq!(a.orphans.len(), 1);
        assert!(a.per_tile.iter().all(Vec::is_empty));
    }

    proptest! {
        #[test]
        fn points_are_conserved(
            w in 64usize..400, h in 64usize..400,
            pts in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 0..40),
        ) {
            let s = Raster::zeros(w, h, 1).unwrap();
            let tiles = slice(&s, &grid(32, PadPolicy::DropPartial)).unwrap();
            let points: Vec<Point> = pts
                .iter()
                .map(|(fx, fy)| Point::new(fx * w as f64 * 0.9999, fy * h as f64 * 0.9999))
                .collect();
            let a = assign_points(&points, &tiles, w, h);
            // brute force: a point is owned iff its pixel lies inside the covered block
            let cover_w = (w / 32) * 32;
            let cover_h = (h / 32) * 32;
            let expected_orphans = points
                .iter()
                .filter(|p| p.x >= cover_w as f64 || p.y >= cover_h as f64)
                .count();
            let assigned: usize = a.per_tile.iter().map(Vec::len).sum();
            prop_assert_eq!(a.orphans.len(), expected_orphans);
            prop_assert_eq!(assigned + a.orphans.len(), points.len());
        }

        #[test]
        fn reflect_slices_reassemble_exactly(w in 33usize..200, h in 33usize..200) {
            let s = scene(w, h);
            let tiles = slice(&s, &grid(32, PadPolicy::ReflectPad)).unwrap();
            let back = reassemble(&tiles, w, h, 1).unwrap();
            prop_assert_eq!(back.data(), s.data());
        }
    }
}
