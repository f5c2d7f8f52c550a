//! Training: Adam updates, seeded mini-batch epochs, early stopping on a
//! validation metric, and evaluation into count reports.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::density::render_density;
use crate::error::{Error, Result};
use crate::inference::{interpret, prepare_input, run, truth_cells, uncrop, ModelKind, PreparedInput};
use crate::lossfns::{density_loss_raw, lcfcn_loss};
use crate::manifest::Sample;
use crate::metrics::{binned_report, mape, CountPair, EvalReport, ImageEval, SeedEval};
use crate::raster::Point;
use crate::tinyfcn::{backward_one, init_params, ArchConfig, InitScheme, ModelParams};

/// Presence decision threshold on predicted counts.
pub const PRESENCE_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Monitor {
    ValMape,
    ValLoss,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelKind,
    pub batch_size: usize,
    pub epochs: usize,
    pub adam: AdamConfig,
    pub monitor: Monitor,
    pub patience: usize,
    pub seed: u64,
    /// Gaussian width of density targets, in pixels.
    pub sigma: f64,
    /// Density targets are multiplied by this during training; the returned
    /// parameters are rescaled so outputs are plain densities again.
    pub density_scale: f64,
    pub stage_channels: [usize; 3],
}

impl TrainConfig {
    pub fn new(model: ModelKind, seed: u64) -> Self {
        Self {
            model,
            batch_size: 8,
            epochs: 100,
            adam: AdamConfig::default(),
            monitor: Monitor::ValMape,
            patience: 10,
            seed,
            sigma: crate::density::DEFAULT_SIGMA,
            density_scale: 64.0,
            stage_channels: [16, 32, 64],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let a = &self.adam;
        let positive = [a.learning_rate, a.beta1, a.beta2, a.eps, self.sigma, self.density_scale]
            .iter()
            .all(|v| *v > 0.0 && v.is_finite());
        if !positive || a.beta1 >= 1.0 || a.beta2 >= 1.0 {
            return Err(Error::InvalidArgument("hyperparameters must be positive (betas < 1)".into()));
        }
        if self.batch_size == 0 || self.epochs == 0 || self.patience == 0 {
            return Err(Error::InvalidArgument("batch size, epochs and patience must be positive".into()));
        }
        if self.patience > self.epochs {
            return Err(Error::InvalidArgument(format!(
                "patience {} exceeds epoch limit {}",
                self.patience, self.epochs
            )));
        }
        Ok(())
    }
}

/// First and second moment estimates and the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }
}

/// One bias-corrected Adam update; advances `state.t`.
pub fn adam_step(params: &mut [f32], grads: &[f32], state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    if params.len() != grads.len() || state.m.len() != params.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} parameters, {} gradients, {} optimizer slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!("gradient {i} is {}", grads[i])));
    }
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for i in 0..params.len() {
        let g = f64::from(grads[i]);
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] = (f64::from(params[i]) - cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.eps)) as f32;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub improved: bool,
    pub stop: bool,
}

/// Tracks the best (lowest) validation metric; signals a stop after
/// `patience` consecutive epochs without strict improvement.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<f64>,
    best_epoch: usize,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: None,
            best_epoch: 0,
            stale: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, metric: f64) -> Observation {
        let improved = metric.is_finite() && self.best.is_none_or(|b| metric < b);
        if improved {
            self.best = Some(metric);
            self.best_epoch = epoch;
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        Observation {
            improved,
            stop: self.stale >= self.patience,
        }
    }

    pub fn best(&self) -> Option<(usize, f64)> {
        self.best.map(|b| (self.best_epoch, b))
    }
}

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_metric: f64,
    pub best: bool,
}

/// Something trainable epoch by epoch.
pub trait EpochRunner {
    type Checkpoint: Clone;

    /// Runs epoch `epoch` (1-based) and returns its mean training loss.
    fn train_epoch(&mut self, epoch: usize) -> Result<f64>;

    /// Validation metric, lower is better.
    fn validate(&mut self) -> Result<f64>;

    fn checkpoint(&self) -> Self::Checkpoint;
}

#[derive(Debug, Clone)]
pub struct FitOutcome<C> {
    pub best: C,
    pub best_epoch: usize,
    pub log: Vec<EpochRecord>,
    pub stopped_early: bool,
}

/// Epoch loop with early stopping; returns the checkpoint of the best
/// validation epoch.
pub fn fit<R: EpochRunner>(runner: &mut R, epochs: usize, patience: usize) -> Result<FitOutcome<R::Checkpoint>> {
    fit_with(runner, epochs, patience, |_| {})
}

/// [`fit`], calling `on_epoch` after each logged epoch.
pub fn fit_with<R: EpochRunner>(
    runner: &mut R,
    epochs: usize,
    patience: usize,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<FitOutcome<R::Checkpoint>> {
    let mut stopper = EarlyStopping::new(patience);
    let mut best = runner.checkpoint();
    let mut log = Vec::new();
    let mut stopped_early = false;
    for epoch in 1..=epochs {
        let train_loss = runner.train_epoch(epoch)?;
        if !train_loss.is_finite() {
            return Err(Error::NonFinite(format!("training loss {train_loss} at epoch {epoch}")));
        }
        let val_metric = runner.validate()?;
        let obs = stopper.observe(epoch, val_metric);
        if obs.improved {
            best = runner.checkpoint();
        }
        let record = EpochRecord {
            epoch,
            train_loss,
            val_metric,
            best: obs.improved,
        };
        on_epoch(&record);
        log.push(record);
        if obs.stop {
            stopped_early = epoch < epochs;
            break;
        }
    }
    let best_epoch = stopper.best().map_or(0, |(e, _)| e);
    Ok(FitOutcome {
        best,
        best_epoch,
        log,
        stopped_early,
    })
}

/// A sample with its network input and (for the density model) its target.
struct Prepared {
    input: PreparedInput,
    points: Vec<Point>,
    target: Option<Vec<f32>>,
}

fn prepare(samples: &[Sample], cfg: &TrainConfig) -> Result<Vec<Prepared>> {
    samples
        .iter()
        .map(|s| {
            let input = prepare_input(&s.image);
            let target = match cfg.model {
                ModelKind::Density => Some(
                    render_density(&s.points, s.image.width(), s.image.height(), cfg.sigma)?
                        .values()
                        .iter()
                        .map(|v| (*v * cfg.density_scale) as f32)
                        .collect(),
                ),
                ModelKind::Lcfcn => None,
            };
            Ok(Prepared {
                input,
                points: s.points.clone(),
                target,
            })
        })
        .collect()
}

/// Loss and output gradient for one item under the configured objective.
fn item_loss(kind: ModelKind, out: &[f32], item: &Prepared) -> Result<(f64, Vec<f32>)> {
    let (w, h) = (item.input.width, item.input.height);
    match kind {
        ModelKind::Lcfcn => {
            let (l, g) = lcfcn_loss(out, w, h, &item.points)?;
            Ok((l.total, g))
        }
        ModelKind::Density => density_loss_raw(out, item.target.as_deref().expect("density target")),
    }
}

struct NetworkRunner<'a> {
    cfg: &'a TrainConfig,
    /// Training-space output per unit of prediction.
    output_scale: f64,
    params: ModelParams,
    adam: AdamState,
    rng: ChaCha8Rng,
    train: Vec<Prepared>,
    val: Vec<Prepared>,
}

impl EpochRunner for NetworkRunner<'_> {
    type Checkpoint = ModelParams;

    fn train_epoch(&mut self, _epoch: usize) -> Result<f64> {
        let mut order: Vec<usize> = (0..self.train.len()).collect();
        order.shuffle(&mut self.rng);
        let mut loss_sum = 0.0;
        let mut grad = vec![0.0f32; self.params.values.len()];
        for batch in order.chunks(self.cfg.batch_size) {
            grad.fill(0.0);
            let scale = 1.0 / batch.len() as f32;
            for &i in batch {
                let item = &self.train[i];
                let (out, cache) = run(&self.params, &item.input)?;
                let (loss, dout) = item_loss(self.cfg.model, &out, item)?;
                if !loss.is_finite() {
                    return Err(Error::NonFinite(format!("loss {loss} on a training item")));
                }
                loss_sum += loss;
                let mut dout = uncrop(&dout, item.input.padded_width, item.input.padded_height, item.input.width);
                dout.iter_mut().for_each(|d| *d *= scale);
                backward_one(&self.params.arch, &self.params.values, &cache, &dout, &mut grad)?;
            }
            adam_step(&mut self.params.values, &grad, &mut self.adam, &self.cfg.adam)?;
        }
        Ok(loss_sum / self.train.len() as f64)
    }

    fn validate(&mut self) -> Result<f64> {
        match self.cfg.monitor {
            Monitor::ValMape => {
                let params = self.checkpoint();
                let pairs = self
                    .val
                    .iter()
                    .map(|item| {
                        let (out, _) = run(&params, &item.input)?;
                        let p = interpret(self.cfg.model, out, item.input.width, item.input.height)?;
                        Ok(CountPair::new(item.points.len() as u64, p.count))
                    })
                    .collect::<Result<Vec<_>>>()?;
                mape(&pairs)
            }
            Monitor::ValLoss => {
                let mut total = 0.0;
                for item in &self.val {
                    let (out, _) = run(&self.params, &item.input)?;
                    total += item_loss(self.cfg.model, &out, item)?.0;
                }
                Ok(total / (self.val.len() as f64 * self.output_scale * self.output_scale))
            }
        }
    }

    fn checkpoint(&self) -> ModelParams {
        let mut p = self.params.clone();
        if self.output_scale != 1.0 {
            p.scale_output((1.0 / self.output_scale) as f32);
        }
        p
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub best_epoch: usize,
    pub log: Vec<EpochRecord>,
    pub stopped_early: bool,
}

/// Trains a fresh Xavier-initialized network on `train`, early-stopping on
/// `val`. Fully determined by the samples and `cfg` (including its seed).
pub fn train(train: &[Sample], val: &[Sample], cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with(train, val, cfg, |_| {})
}

/// [`train`] with a per-epoch progress callback.
pub fn train_with(
    train: &[Sample],
    val: &[Sample],
    cfg: &TrainConfig,
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Dataset(format!(
            "need non-empty train and val splits (got {} and {})",
            train.len(),
            val.len()
        )));
    }
    let channels = train[0].image.channels();
    if let Some(s) = train.iter().chain(val).find(|s| s.image.channels() != channels) {
        return Err(Error::Dataset(format!("tile {} has a different channel count", s.id)));
    }
    let arch = ArchConfig {
        in_channels: channels,
        stage_channels: cfg.stage_channels,
        head: cfg.model.head(),
    };
    let params = init_params(arch, cfg.seed, InitScheme::Xavier)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut runner = NetworkRunner {
        cfg,
        output_scale: match cfg.model {
            ModelKind::Density => cfg.density_scale,
            ModelKind::Lcfcn => 1.0,
        },
        adam: AdamState::new(params.values.len()),
        params,
        rng,
        train: prepare(train, cfg)?,
        val: prepare(val, cfg)?,
    };
    let out = fit_with(&mut runner, cfg.epochs, cfg.patience, on_epoch)?;
    Ok(TrainOutcome {
        params: out.best,
        best_epoch: out.best_epoch,
        log: out.log,
        stopped_early: out.stopped_early,
    })
}

/// Per-image counts and cells for one model over `samples`.
pub fn evaluate_seed(params: &ModelParams, samples: &[Sample], grid_n: usize, seed: u64) -> Result<SeedEval> {
    let images = samples
        .iter()
        .map(|s| {
            let pred = crate::inference::predict(params, &s.image)?;
            Ok(ImageEval {
                id: s.id.clone(),
                pair: CountPair::new(s.points.len() as u64, pred.count),
                pred_cells: pred.cell_counts(grid_n)?,
                gt_cells: truth_cells(&s.points, s.image.width(), s.image.height(), grid_n)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SeedEval { seed, images })
}

/// Evaluation with the ground-truth points standing in for predictions.
pub fn evaluate_oracle(samples: &[Sample], grid_n: usize) -> Result<SeedEval> {
    let images = samples
        .iter()
        .map(|s| {
            let cells = truth_cells(&s.points, s.image.width(), s.image.height(), grid_n)?;
            Ok(ImageEval {
                id: s.id.clone(),
                pair: CountPair::new(s.points.len() as u64, s.points.len() as f64),
                pred_cells: cells.clone(),
                gt_cells: cells,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SeedEval { seed: 0, images })
}

/// Binned report for one trained model.
pub fn evaluate(params: &ModelParams, samples: &[Sample], grid_n: usize) -> Result<EvalReport> {
    binned_report(&[evaluate_seed(params, samples, grid_n, 0)?], grid_n, PRESENCE_THRESHOLD)
}
