//! The dataset manifest: one JSON file listing every tile, its image path
//! (relative to the manifest directory), point annotations, label and split.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pngio::read_png;
use crate::raster::{validate_annotations, Point, Raster, TileLabel};
use crate::synthgen::Split;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileEntry {
    pub id: String,
    pub image: String,
    pub width: usize,
    pub height: usize,
    pub points: Vec<Point>,
    pub label: TileLabel,
    pub split: Option<Split>,
    /// Bumped on every annotation save; used for optimistic concurrency.
    #[serde(default)]
    pub revision: u64,
    /// Whether a human (or generator) has confirmed the annotation.
    #[serde(default = "default_labeled")]
    pub labeled: bool,
}

fn default_labeled() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub tiles: Vec<TileEntry>,
}

impl Default for DatasetManifest {
    fn default() -> Self {
        Self {
            version: MANIFEST_VERSION,
            tiles: Vec::new(),
        }
    }
}

impl DatasetManifest {
    pub fn path_in(dir: &Path) -> PathBuf {
        dir.join(MANIFEST_FILE)
    }

    /// Structural checks: version, unique ids, annotation invariants.
    pub fn validate(&self) -> Result<()> {
        if self.version != MANIFEST_VERSION {
            return Err(Error::Dataset(format!(
                "manifest version {} unsupported",
                self.version
            )));
        }
        let mut ids = HashSet::new();
        for t in &self.tiles {
            if !ids.insert(t.id.as_str()) {
                return Err(Error::Dataset(format!("duplicate tile id {}", t.id)));
            }
            let v = validate_annotations(&t.points, t.label, t.width, t.height, None);
            if let Some(first) = v.first() {
                return Err(Error::Dataset(format!("tile {}: {first}", t.id)));
            }
        }
        Ok(())
    }

    /// Loads and validates `dir/manifest.json`, checking every image exists.
    pub fn load(dir: &Path) -> Result<Self> {
        let text = fs::read_to_string(Self::path_in(dir))
            .map_err(|e| Error::Dataset(format!("{}: {e}", Self::path_in(dir).display())))?;
        let m: Self = serde_json::from_str(&text)
            .map_err(|e| Error::Dataset(format!("manifest parse error: {e}")))?;
        m.validate()?;
        for t in &m.tiles {
            if !dir.join(&t.image).is_file() {
                return Err(Error::Dataset(format!(
                    "tile {}: image {} not found",
                    t.id, t.image
                )));
            }
        }
        Ok(m)
    }

    /// Writes to a temporary sibling, syncs it, then renames over the
    /// manifest, so readers see either the old or the new file.
    pub fn save_atomic(&self, dir: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        let tmp = dir.join(format!(".{MANIFEST_FILE}.tmp"));
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(text.as_bytes())?;
            f.write_all(b"\n")?;
            f.sync_all()?;
        }
        fs::rename(&tmp, Self::path_in(dir))?;
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&TileEntry> {
        self.tiles.iter().find(|t| t.id == id)
    }

    pub fn tiles_in(&self, split: Split) -> impl Iterator<Item = &TileEntry> {
        self.tiles.iter().filter(move |t| t.split == Some(split))
    }
}

/// A loaded tile ready for training or evaluation.
#[derive(Debug, Clone)]
pub struct Sample {
    pub id: String,
    pub image: Raster,
    pub points: Vec<Point>,
}

/// Loads every tile of `split` with its image.
pub fn load_split(dir: &Path, manifest: &DatasetManifest, split: Split) -> Result<Vec<Sample>> {
    manifest
        .tiles_in(split)
        .map(|t| {
            let image = read_png(&dir.join(&t.image))?;
            if image.width() != t.width || image.height() != t.height {
                return Err(Error::Dataset(format!(
                    "tile {}: image is {}x{}, manifest says {}x{}",
                    t.id,
                    image.width(),
                    image.height(),
                    t.width,
                    t.height
                )));
            }
            Ok(Sample {
                id: t.id.clone(),
                image,
                points: t.points.clone(),
            })
        })
        .collect()
}
