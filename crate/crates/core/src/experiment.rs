//! The desk-scale synthetic experiment: one seeded dataset, both models
//! trained under several seeds, binned test-split reports.

use serde::Serialize;

use crate::error::Result;
use crate::inference::ModelKind;
use crate::manifest::Sample;
use crate::metrics::{binned_report, EvalReport, SeedEval};
use crate::synthgen::{generate_dataset, SceneConfig, Split};
use crate::trainer::{evaluate_seed, train, EpochRecord, TrainConfig, PRESENCE_THRESHOLD};

#[derive(Debug, Clone)]
pub struct DeskConfig {
    pub scene: SceneConfig,
    pub n_tiles: usize,
    pub fractions: [f64; 3],
    pub seeds: Vec<u64>,
    pub epochs: usize,
    pub patience: usize,
    pub grid_n: usize,
}

impl Default for DeskConfig {
    fn default() -> Self {
        Self {
            scene: SceneConfig {
                tile_size: 128,
                // every density bin must be represented at 600 tiles
                count_weights: [0.5, 0.2, 0.2, 0.1],
                seed: 2020,
                ..SceneConfig::default()
            },
            n_tiles: 600,
            fractions: [0.6, 0.2, 0.2],
            seeds: vec![0, 1, 2],
            epochs: 30,
            patience: 10,
            grid_n: 4,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct DeskData {
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
}

pub fn desk_data(cfg: &DeskConfig) -> Result<DeskData> {
    let mut data = DeskData::default();
    for (rec, split) in generate_dataset(&cfg.scene, cfg.n_tiles, cfg.fractions)? {
        let s = Sample {
            id: rec.id,
            image: rec.image,
            points: rec.points,
        };
        match split {
            Split::Train => data.train.push(s),
            Split::Val => data.val.push(s),
            Split::Test => data.test.push(s),
        }
    }
    Ok(data)
}

#[derive(Debug, Clone, Serialize)]
pub struct SeedRun {
    pub seed: u64,
    pub best_epoch: usize,
    pub log: Vec<EpochRecord>,
    pub eval: SeedEval,
}

#[derive(Debug, Clone, Serialize)]
pub struct ModelRuns {
    pub model: ModelKind,
    pub runs: Vec<SeedRun>,
    pub report: EvalReport,
}

impl ModelRuns {
    /// Report restricted to a single seed's evaluation.
    pub fn seed_report(&self, i: usize, grid_n: usize) -> Result<EvalReport> {
        binned_report(std::slice::from_ref(&self.runs[i].eval), grid_n, PRESENCE_THRESHOLD)
    }
}

/// Trains `model` once per seed and evaluates each run on the test split.
pub fn run_model(cfg: &DeskConfig, data: &DeskData, model: ModelKind) -> Result<ModelRuns> {
    let mut runs = Vec::new();
    for &seed in &cfg.seeds {
        let mut tc = TrainConfig::new(model, seed);
        tc.epochs = cfg.epochs;
        tc.patience = cfg.patience.min(cfg.epochs);
        let out = train(&data.train, &data.val, &tc)?;
        let eval = evaluate_seed(&out.params, &data.test, cfg.grid_n, seed)?;
        runs.push(SeedRun {
            seed,
            best_epoch: out.best_epoch,
            log: out.log,
            eval,
        });
    }
    let evals: Vec<SeedEval> = runs.iter().map(|r| r.eval.clone()).collect();
    let report = binned_report(&evals, cfg.grid_n, PRESENCE_THRESHOLD)?;
    Ok(ModelRuns { model, runs, report })
}
