use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use cownter_core::inference::{predict as run_predict, ModelKind};
use cownter_core::manifest::{load_split, DatasetManifest, TileEntry, MANIFEST_VERSION};
use cownter_core::metrics::{binned_report, SeedEval};
use cownter_core::pngio::{read_png, write_png};
use cownter_core::synthgen::{generate_dataset, SceneConfig};
use cownter_core::tiler::{assign_points, slice, PadPolicy, TileGrid};
use cownter_core::tinyfcn::{load_params, save_params};
use cownter_core::trainer::{evaluate_oracle, evaluate_seed, train_with, TrainConfig, PRESENCE_THRESHOLD};
use cownter_core::{Point, Raster, TileLabel};
use serde::Serialize;
use serde_json::json;

use crate::args::{EvalArgs, PredictArgs, SynthArgs, TileArgs, TrainArgs};
use crate::error::{CliError, CliResult};

const TILE_DIR: &str = "tiles";

fn tile_path(id: &str) -> String {
    format!("{TILE_DIR}/{id}.png")
}

pub fn synth(a: &SynthArgs, out: &mut dyn Write) -> CliResult<()> {
    let count_weights = match (&a.weights, a.imbalance) {
        (Some(w), _) if w.len() == 4 => [w[0], w[1], w[2], w[3]],
        (Some(w), _) => return Err(CliError::usage(format!("--weights needs 4 values, got {}", w.len()))),
        (None, Some(r)) if (0.0..=1.0).contains(&r) => SceneConfig::weights_for_positive_fraction(r),
        (None, Some(r)) => return Err(CliError::usage(format!("--imbalance {r} is not a fraction"))),
        (None, None) => SceneConfig::default().count_weights,
    };
    let cfg = SceneConfig {
        tile_size: a.size,
        gsd: a.gsd,
        count_weights,
        distractor_density: a.distractors,
        seed: a.seed,
        ..SceneConfig::default()
    };
    cfg.validate()?;
    let fractions = [a.splits[0], a.splits[1], a.splits[2]];
    let dataset = generate_dataset(&cfg, a.tiles, fractions)?;

    fs::create_dir_all(a.out.join(TILE_DIR))?;
    let mut tiles = Vec::with_capacity(dataset.len());
    for (rec, split) in dataset {
        let image = tile_path(&rec.id);
        write_png(&rec.image, &a.out.join(&image))?;
        tiles.push(TileEntry {
            id: rec.id,
            image,
            width: rec.image.width(),
            height: rec.image.height(),
            points: rec.points,
            label: rec.label,
            split: Some(split),
            revision: 0,
            labeled: true,
        });
    }
    let positive = tiles.iter().filter(|t| t.label == TileLabel::Cow).count();
    let n = tiles.len();
    DatasetManifest {
        version: MANIFEST_VERSION,
        tiles,
    }
    .save_atomic(&a.out)?;
    writeln!(
        out,
        "{}",
        json!({ "manifest": DatasetManifest::path_in(&a.out), "tiles": n, "with_cattle": positive })
    )?;
    Ok(())
}

fn read_points(path: &Path) -> CliResult<Vec<Point>> {
    let text = fs::read_to_string(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

pub fn tile(a: &TileArgs, out: &mut dyn Write) -> CliResult<()> {
    let scene = read_png(&a.scene)?;
    let policy = if a.pad {
        PadPolicy::ReflectPad
    } else {
        PadPolicy::DropPartial
    };
    let grid = TileGrid::new(a.tile_size, a.stride.unwrap_or(a.tile_size), policy)?;
    let tiles = slice(&scene, &grid)?;
    let points = a.points.as_deref().map(read_points).transpose()?;
    if let Some(p) = points.iter().flatten().find(|p| !p.in_bounds(scene.width(), scene.height())) {
        return Err(CliError::data(format!(
            "scene point ({}, {}) outside the {}x{} scene",
            p.x,
            p.y,
            scene.width(),
            scene.height()
        )));
    }
    let assignment = points
        .as_ref()
        .map(|p| assign_points(p, &tiles, scene.width(), scene.height()));

    let stem = a
        .scene
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("scene")
        .to_string();
    fs::create_dir_all(a.out.join(TILE_DIR))?;
    let mut entries = Vec::with_capacity(tiles.len());
    for (i, t) in tiles.iter().enumerate() {
        let id = format!("{stem}-{}-{}", t.origin.y, t.origin.x);
        let image = tile_path(&id);
        write_png(&t.raster, &a.out.join(&image))?;
        let tile_points = assignment.as_ref().map(|s| s.per_tile[i].clone()).unwrap_or_default();
        entries.push(TileEntry {
            id,
            image,
            width: t.raster.width(),
            height: t.raster.height(),
            label: TileLabel::for_count(tile_points.len()),
            points: tile_points,
            split: None,
            revision: 0,
            labeled: points.is_some(),
        });
    }
    let n = entries.len();
    DatasetManifest {
        version: MANIFEST_VERSION,
        tiles: entries,
    }
    .save_atomic(&a.out)?;
    let orphans = assignment.map_or(0, |s| s.orphans.len());
    writeln!(
        out,
        "{}",
        json!({ "manifest": DatasetManifest::path_in(&a.out), "tiles": n, "orphans": orphans })
    )?;
    Ok(())
}

pub fn train(a: &TrainArgs, out: &mut dyn Write) -> CliResult<()> {
    let manifest = DatasetManifest::load(&a.data)?;
    let train = load_split(&a.data, &manifest, cownter_core::synthgen::Split::Train)?;
    let val = load_split(&a.data, &manifest, cownter_core::synthgen::Split::Val)?;
    let mut cfg = TrainConfig::new(a.model.into(), a.seed);
    cfg.epochs = a.epochs;
    cfg.batch_size = a.batch_size;
    cfg.adam.learning_rate = a.lr;
    cfg.patience = a.patience.unwrap_or(10.min(a.epochs));
    cfg.monitor = a.monitor.into();

    let mut log_file = a.log.as_deref().map(fs::File::create).transpose()?;
    let mut write_err: Option<std::io::Error> = None;
    let outcome = train_with(&train, &val, &cfg, |rec| {
        let line = serde_json::to_string(rec).expect("epoch record serializes");
        let mut emit = || -> std::io::Result<()> {
            writeln!(out, "{line}")?;
            if let Some(f) = log_file.as_mut() {
                writeln!(f, "{line}")?;
            }
            Ok(())
        };
        if let Err(e) = emit() {
            write_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = write_err {
        return Err(e.into());
    }
    save_params(&outcome.params, &a.out)?;
    Ok(())
}

#[derive(Serialize)]
struct CsvRow<'a> {
    seed: u64,
    model: &'a str,
    id: &'a str,
    y: u64,
    y_hat: f64,
    ape: f64,
    gampe: f64,
}

fn write_csv(path: &Path, runs: &[SeedEval], models: &[String]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    for (run, model) in runs.iter().zip(models) {
        for img in &run.images {
            let gampe = img
                .pred_cells
                .iter()
                .zip(&img.gt_cells)
                .map(|(p, g)| (g - p).abs() / g.max(1.0))
                .sum();
            w.serialize(CsvRow {
                seed: run.seed,
                model,
                id: &img.id,
                y: img.pair.y,
                y_hat: img.pair.y_hat,
                ape: (img.pair.y as f64 - img.pair.y_hat).abs() / (img.pair.y.max(1) as f64),
                gampe,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn eval(a: &EvalArgs, out: &mut dyn Write) -> CliResult<()> {
    if a.grid == 0 {
        return Err(CliError::usage("--grid must be positive"));
    }
    if let Some(n) = a.seeds {
        if !a.oracle && n != a.models.len() {
            return Err(CliError::usage(format!(
                "--seeds {n} needs {n} --model files (one per training seed), got {}",
                a.models.len()
            )));
        }
    }
    let manifest = DatasetManifest::load(&a.data)?;
    let samples = load_split(&a.data, &manifest, a.split.into())?;
    if samples.is_empty() {
        return Err(CliError::data("the selected split has no tiles"));
    }
    let (runs, names) = if a.oracle {
        (vec![evaluate_oracle(&samples, a.grid)?], vec!["oracle".to_string()])
    } else {
        let mut runs = Vec::new();
        for (i, path) in a.models.iter().enumerate() {
            let params = load_params(path)?;
            runs.push(evaluate_seed(&params, &samples, a.grid, i as u64)?);
        }
        (runs, a.models.iter().map(|p| p.display().to_string()).collect())
    };
    let report = binned_report(&runs, a.grid, PRESENCE_THRESHOLD)?;
    let text = serde_json::to_string_pretty(&report)?;
    match &a.out {
        Some(p) => fs::write(p, text + "\n")?,
        None => writeln!(out, "{text}")?,
    }
    if let Some(p) = &a.csv {
        write_csv(p, &runs, &names)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct PredictOutput {
    model: ModelKind,
    count: f64,
    points: Vec<Point>,
}

/// RGB copy of `image` with a red cross on every point.
pub fn overlay(image: &Raster, points: &[Point]) -> CliResult<Raster> {
    let (w, h) = (image.width(), image.height());
    let mut data = Vec::with_capacity(w * h * 3);
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                data.push(image.get(x, y, c.min(image.channels() - 1)));
            }
        }
    }
    for p in points {
        let (px, py) = p.pixel();
        for d in -2isize..=2 {
            for (x, y) in [(px as isize + d, py as isize), (px as isize, py as isize + d)] {
                if x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h {
                    let i = (y as usize * w + x as usize) * 3;
                    data[i..i + 3].copy_from_slice(&[1.0, 0.0, 0.0]);
                }
            }
        }
    }
    Ok(Raster::new(w, h, 3, data)?)
}

pub fn predict(a: &PredictArgs, out: &mut dyn Write) -> CliResult<()> {
    let params = load_params(&a.model)?;
    let image = read_png(&a.image)?;
    let pred = run_predict(&params, &image)?;
    let body = PredictOutput {
        model: pred.kind,
        count: pred.count,
        points: pred.points.clone(),
    };
    fs::write(&a.out, serde_json::to_string_pretty(&body)? + "\n")?;
    if let Some(path) = &a.overlay {
        write_png(&overlay(&image, &pred.points)?, path)?;
    }
    writeln!(out, "{}", json!({ "count": pred.count, "points": pred.points.len(), "out": a.out }))?;
    Ok(())
}

pub fn ensure_dir(path: &Path) -> CliResult<PathBuf> {
    if path.is_dir() {
        Ok(path.to_path_buf())
    } else {
        Err(CliError::data(format!("{} is not a directory", path.display())))
    }
}
