//! Counting metrics: MAPE, grid-partitioned MAPE (GAMPE), presence/absence
//! F-score and count-binned reports aggregated over seeds.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synthgen::{count_bin, BIN_LOWER};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CountPair {
    /// Ground-truth count.
    pub y: u64,
    /// Predicted count.
    pub y_hat: f64,
}

impl CountPair {
    pub fn new(y: u64, y_hat: f64) -> Self {
        Self { y, y_hat }
    }

    #[inline]
    fn ape(&self) -> f64 {
        (self.y as f64 - self.y_hat).abs() / (self.y.max(1) as f64)
    }
}

/// `(1/n) sum |y - y_hat| / max(y, 1)`.
pub fn mape(pairs: &[CountPair]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("mape of an empty set".into()));
    }
    Ok(pairs.iter().map(CountPair::ape).sum::<f64>() / pairs.len() as f64)
}

/// Per-image sum over grid cells of `|y_c - y_hat_c| / max(y_c, 1)`,
/// averaged over images. Each inner vector holds one image's cell counts.
pub fn gampe(pred_cells: &[Vec<f64>], gt_cells: &[Vec<f64>]) -> Result<f64> {
    if gt_cells.is_empty() {
        return Err(Error::InvalidArgument("gampe of an empty image set".into()));
    }
    if pred_cells.len() != gt_cells.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} predicted images vs {} ground-truth images",
            pred_cells.len(),
            gt_cells.len()
        )));
    }
    let mut total = 0.0;
    for (k, (p, g)) in pred_cells.iter().zip(gt_cells).enumerate() {
        if p.len() != g.len() || g.is_empty() {
            return Err(Error::ShapeMismatch(format!(
                "image {k}: {} predicted cells vs {} ground-truth cells",
                p.len(),
                g.len()
            )));
        }
        total += image_gampe(p, g);
    }
    Ok(total / gt_cells.len() as f64)
}

fn image_gampe(pred: &[f64], gt: &[f64]) -> f64 {
    pred.iter()
        .zip(gt)
        .map(|(p, g)| (g - p).abs() / g.max(1.0))
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PresenceScore {
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub true_negatives: usize,
    /// Set when precision + recall is zero and F is reported as 0.
    pub undefined: bool,
}

/// Binary presence decision: predicted positive when `y_hat >= threshold`,
/// actual positive when `y >= 1`.
pub fn presence_fscore(pairs: &[CountPair], threshold: f64) -> PresenceScore {
    binary_fscore(pairs.iter().map(|p| (p.y_hat >= threshold, p.y >= 1)))
}

/// The same decision scored with empty tiles as the positive class.
pub fn absence_fscore(pairs: &[CountPair], threshold: f64) -> PresenceScore {
    binary_fscore(pairs.iter().map(|p| (p.y_hat < threshold, p.y == 0)))
}

fn binary_fscore(decisions: impl Iterator<Item = (bool, bool)>) -> PresenceScore {
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for d in decisions {
        match d {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    let ratio = |a: usize, b: usize| if a + b == 0 { 0.0 } else { a as f64 / (a + b) as f64 };
    let precision = ratio(tp, fp);
    let recall = ratio(tp, fn_);
    let undefined = precision + recall == 0.0;
    let f_score = if undefined {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    PresenceScore {
        precision,
        recall,
        f_score,
        true_positives: tp,
        false_positives: fp,
        false_negatives: fn_,
        true_negatives: tn,
        undefined,
    }
}

/// One image's evaluation inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageEval {
    pub id: String,
    pub pair: CountPair,
    pub pred_cells: Vec<f64>,
    pub gt_cells: Vec<f64>,
}

/// All images evaluated for one training seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedEval {
    pub seed: u64,
    pub images: Vec<ImageEval>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Mean and population standard deviation.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Some(Self {
            mean,
            std: var.sqrt(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinReport {
    pub label: String,
    pub lower: u64,
    pub upper: Option<u64>,
    pub n: usize,
    pub mape: Option<MeanStd>,
    pub gampe: Option<MeanStd>,
    pub mape_per_seed: Vec<f64>,
    pub gampe_per_seed: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PresenceReport {
    pub threshold: f64,
    pub precision: MeanStd,
    pub recall: MeanStd,
    pub f_score: MeanStd,
    pub per_seed: Vec<PresenceScore>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub grid_n: usize,
    pub seeds: Vec<u64>,
    pub n_images: usize,
    pub bin_edges: Vec<u64>,
    pub overall_mape: MeanStd,
    pub overall_gampe: MeanStd,
    pub bins: Vec<BinReport>,
    pub presence: PresenceReport,
}

impl EvalReport {
    pub fn bin(&self, lower: u64) -> Option<&BinReport> {
        self.bins.iter().find(|b| b.lower == lower)
    }
}

fn bin_label(i: usize) -> (String, u64, Option<u64>) {
    let lo = BIN_LOWER[i] as u64;
    match BIN_LOWER.get(i + 1) {
        Some(next) if *next as u64 - 1 == lo => (format!("{lo}"), lo, Some(lo)),
        Some(next) => (format!("{lo}-{}", next - 1), lo, Some(*next as u64 - 1)),
        None => (format!("{lo}+"), lo, None),
    }
}

/// Buckets images by ground-truth count into `{0}, [1,10], [11,100],
/// [101,inf)` and reports per-bin MAPE/GAMPE (mean and std across seeds)
/// plus presence precision/recall/F at `threshold`. Every seed run must
/// cover the same images in the same order.
pub fn binned_report(runs: &[SeedEval], grid_n: usize, threshold: f64) -> Result<EvalReport> {
    let first = runs
        .first()
        .ok_or_else(|| Error::InvalidArgument("binned report needs at least one seed run".into()))?;
    if first.images.is_empty() {
        return Err(Error::InvalidArgument("binned report over zero images".into()));
    }
    for r in runs {
        if r.images.len() != first.images.len()
            || r.images.iter().zip(&first.images).any(|(a, b)| a.id != b.id || a.pair.y != b.pair.y)
        {
            return Err(Error::ShapeMismatch(format!(
                "seed {} evaluated a different image set",
                r.seed
            )));
        }
    }
    let bin_of: Vec<usize> = first.images.iter().map(|im| count_bin(im.pair.y as usize)).collect();

    let per_seed_metrics = |select: &dyn Fn(usize) -> bool| -> Result<(Vec<f64>, Vec<f64>)> {
        let mut m = Vec::new();
        let mut g = Vec::new();
        for r in runs {
            let chosen: Vec<&ImageEval> = r
                .images
                .iter()
                .enumerate()
                .filter(|(i, _)| select(*i))
                .map(|(_, im)| im)
                .collect();
            if chosen.is_empty() {
                continue;
            }
            let pairs: Vec<CountPair> = chosen.iter().map(|im| im.pair).collect();
            let pred: Vec<Vec<f64>> = chosen.iter().map(|im| im.pred_cells.clone()).collect();
            let gt: Vec<Vec<f64>> = chosen.iter().map(|im| im.gt_cells.clone()).collect();
            m.push(mape(&pairs)?);
            g.push(gampe(&pred, &gt)?);
        }
        Ok((m, g))
    };

    let mut bins = Vec::with_capacity(BIN_LOWER.len());
    for b in 0..BIN_LOWER.len() {
        let (label, lower, upper) = bin_label(b);
        let n = bin_of.iter().filter(|v| **v == b).count();
        let (m, g) = per_seed_metrics(&|i| bin_of[i] == b)?;
        bins.push(BinReport {
            label,
            lower,
            upper,
            n,
            mape: MeanStd::of(&m),
            gampe: MeanStd::of(&g),
            mape_per_seed: m,
            gampe_per_seed: g,
        });
    }
    let (all_m, all_g) = per_seed_metrics(&|_| true)?;

    let per_seed: Vec<PresenceScore> = runs
        .iter()
        .map(|r| {
            let pairs: Vec<CountPair> = r.images.iter().map(|im| im.pair).collect();
            presence_fscore(&pairs, threshold)
        })
        .collect();
    let stat = |f: &dyn Fn(&PresenceScore) -> f64| {
        MeanStd::of(&per_seed.iter().map(f).collect::<Vec<_>>()).expect("non-empty")
    };
    let presence = PresenceReport {
        threshold,
        precision: stat(&|s| s.precision),
        recall: stat(&|s| s.recall),
        f_score: stat(&|s| s.f_score),
        per_seed: per_seed.clone(),
    };
    Ok(EvalReport {
        grid_n,
        seeds: runs.iter().map(|r| r.seed).collect(),
        n_images: first.images.len(),
        bin_edges: BIN_LOWER.iter().map(|v| *v as u64).collect(),
        overall_mape: MeanStd::of(&all_m).expect("non-empty"),
        overall_gampe: MeanStd::of(&all_g).expect("non-empty"),
        bins,
        presence,
    })
}
