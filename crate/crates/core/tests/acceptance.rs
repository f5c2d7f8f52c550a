//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails. Thresholds are pinned below.

mod common;

use std::collections::VecDeque;
use std::time::{Duration, Instant};

use common::*;
use cownter_core::blobkit::{connected_components, watershed_split};
use cownter_core::density::render_density;
use cownter_core::experiment::{desk_data, run_model, DeskConfig, ModelRuns};
use cownter_core::inference::ModelKind;
use cownter_core::lossfns::density_loss_raw;
use cownter_core::metrics::{absence_fscore, gampe, mape, CountPair};
use cownter_core::tinyfcn::Head;
use cownter_core::trainer::{fit, EpochRunner, PRESENCE_THRESHOLD};
use cownter_core::{Point, Result};
use rand::Rng;

const METRIC_TOL: f64 = 1e-12;
const METRIC_BUDGET: Duration = Duration::from_secs(1);
const CONSERVATION_TOL: f64 = 1e-9;
const CONSERVATION_BUDGET: Duration = Duration::from_secs(10);
const GRADIENT_TOL: f64 = 1e-4;
const GRADIENT_MIN_INSTANCES: usize = 20;
const GRADIENT_BUDGET: Duration = Duration::from_secs(120);
const LCFCN_MIN_F: f64 = 0.90;
const DENSITY_MAX_MAPE_1_10: f64 = 0.30;
const TREND_MIN_SEEDS: usize = 2;
const DESK_BUDGET: Duration = Duration::from_secs(30 * 60);

struct Outcome {
    pass: bool,
    detail: String,
}

fn report(n: usize, name: &str, o: &Outcome) {
    println!(
        "criterion {n} [{}] {name}: {}",
        if o.pass { "PASS" } else { "FAIL" },
        o.detail
    );
}

// ---------- 1: metric oracles ----------

fn brute_mape(y: &[u64], y_hat: &[f64]) -> f64 {
    let mut total = 0.0;
    for i in 0..y.len() {
        let denom = if y[i] == 0 { 1.0 } else { y[i] as f64 };
        let diff = if y_hat[i] > y[i] as f64 { y_hat[i] - y[i] as f64 } else { y[i] as f64 - y_hat[i] };
        total += diff / denom;
    }
    total / y.len() as f64
}

fn brute_gampe(gt: &[Vec<f64>], pred: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    for i in 0..gt.len() {
        let mut img = 0.0;
        for c in 0..gt[i].len() {
            let denom = if gt[i][c] < 1.0 { 1.0 } else { gt[i][c] };
            img += (gt[i][c] - pred[i][c]).abs() / denom;
        }
        total += img;
    }
    total / gt.len() as f64
}

fn criterion_metrics() -> Outcome {
    let start = Instant::now();
    let mut r = rng(1);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let n = r.random_range(1..40);
        let y: Vec<u64> = (0..n).map(|_| if r.random_bool(0.3) { 0 } else { r.random_range(0..500) }).collect();
        let y_hat: Vec<f64> = (0..n).map(|_| r.random_range(0.0..600.0)).collect();
        let pairs: Vec<CountPair> = y.iter().zip(&y_hat).map(|(a, b)| CountPair::new(*a, *b)).collect();
        worst = worst.max((mape(&pairs).unwrap() - brute_mape(&y, &y_hat)).abs());

        let g = r.random_range(1..6usize);
        let gt: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..g * g).map(|_| r.random_range(0..30) as f64).collect())
            .collect();
        let pred: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..g * g).map(|_| r.random_range(0.0..40.0)).collect())
            .collect();
        worst = worst.max((gampe(&pred, &gt).unwrap() - brute_gampe(&gt, &pred)).abs());

        // grid 1: one cell per image holding the whole count
        let gt1: Vec<Vec<f64>> = y.iter().map(|v| vec![*v as f64]).collect();
        let pred1: Vec<Vec<f64>> = y_hat.iter().map(|v| vec![*v]).collect();
        worst = worst.max((gampe(&pred1, &gt1).unwrap() - mape(&pairs).unwrap()).abs());
    }
    let t = start.elapsed();
    Outcome {
        pass: worst <= METRIC_TOL && t < METRIC_BUDGET,
        detail: format!("max |diff| {worst:.2e} (tol {METRIC_TOL:.0e}), {t:.2?} (budget {METRIC_BUDGET:?})"),
    }
}

// ---------- 2: density conservation ----------

fn criterion_conservation() -> Outcome {
    let start = Instant::now();
    let mut r = rng(2);
    let mut worst = 0.0f64;
    for _ in 0..500 {
        let (w, h) = (r.random_range(16..160usize), r.random_range(16..160usize));
        let n = r.random_range(0..=1200usize);
        let points: Vec<Point> = (0..n)
            .map(|_| match r.random_range(0..5) {
                0 => Point::new(0.0, r.random_range(0.0..h as f64)),
                1 => Point::new(w as f64 - 1e-9, r.random_range(0.0..h as f64)),
                2 => Point::new(r.random_range(0.0..w as f64), h as f64 - 1e-9),
                _ => Point::new(r.random_range(0.0..w as f64), r.random_range(0.0..h as f64)),
            })
            .collect();
        let m = render_density(&points, w, h, 2.0).unwrap();
        let total: f64 = m.values().iter().sum();
        worst = worst.max((total - n as f64).abs() / (n.max(1) as f64));
    }
    let t = start.elapsed();
    Outcome {
        pass: worst <= CONSERVATION_TOL && t < CONSERVATION_BUDGET,
        detail: format!(
            "max relative deviation {worst:.2e} (tol {CONSERVATION_TOL:.0e}), {t:.2?} (budget {CONSERVATION_BUDGET:?})"
        ),
    }
}

// ---------- 3: gradient checks ----------

fn density_gradcheck(seed: u64) -> f64 {
    let mut r = rng(seed);
    let n = 64;
    let pred = uniform_vec(&mut r, n, 0.0, 2.0);
    let target = uniform_vec(&mut r, n, 0.0, 2.0);
    let (_, g) = density_loss_raw(&pred, &target).unwrap();
    let mut worst = 0.0f64;
    for i in 0..n {
        let mut p = pred.clone();
        p[i] += FD_STEP;
        let up = density_loss_raw(&p, &target).unwrap().0;
        p[i] -= 2.0 * FD_STEP;
        let down = density_loss_raw(&p, &target).unwrap().0;
        worst = worst.max(rel_err(g[i], (up - down) / (2.0 * FD_STEP)));
    }
    worst
}

fn criterion_gradients() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut instances = 0;
    for seed in 0..8 {
        let mut r = rng(300 + seed);
        let (w, h) = (12, 12);
        let prob = uniform_vec(&mut r, w * h, 0.02, 0.98);
        let n = r.random_range(0..6);
        let points: Vec<Point> = (0..n)
            .map(|_| Point::new(r.random_range(0.0..w as f64), r.random_range(0.0..h as f64)))
            .collect();
        worst = worst.max(lcfcn_gradcheck(&prob, w, h, &points).0);
        instances += 1;
    }
    for seed in 0..6 {
        worst = worst.max(density_gradcheck(400 + seed));
        instances += 1;
    }
    for seed in 0..4 {
        for head in [Head::Detection, Head::Density] {
            worst = worst.max(network_gradcheck(500 + seed, head, 8, 8, [2, 3, 4]));
            instances += 1;
        }
    }
    let t = start.elapsed();
    Outcome {
        pass: worst < GRADIENT_TOL && instances >= GRADIENT_MIN_INSTANCES && t < GRADIENT_BUDGET,
        detail: format!(
            "{instances} instances, max relative error {worst:.2e} (tol {GRADIENT_TOL:.0e}), {t:.2?} (budget {GRADIENT_BUDGET:?})"
        ),
    }
}

// ---------- 4: blobs and watershed ----------

fn flood_fill(mask: &[bool], w: usize, h: usize) -> (Vec<u32>, u32) {
    let mut labels = vec![0u32; w * h];
    let mut next = 0;
    for start in 0..w * h {
        if !mask[start] || labels[start] != 0 {
            continue;
        }
        next += 1;
        labels[start] = next;
        let mut queue = VecDeque::from([start]);
        while let Some(i) = queue.pop_front() {
            let (x, y) = (i % w, i / w);
            let mut nb = Vec::with_capacity(4);
            if x > 0 {
                nb.push(i - 1);
            }
            if x + 1 < w {
                nb.push(i + 1);
            }
            if y > 0 {
                nb.push(i - w);
            }
            if y + 1 < h {
                nb.push(i + w);
            }
            for j in nb {
                if mask[j] && labels[j] == 0 {
                    labels[j] = next;
                    queue.push_back(j);
                }
            }
        }
    }
    (labels, next)
}

fn random_blob(r: &mut rand_chacha::ChaCha8Rng, w: usize, h: usize) -> Vec<usize> {
    loop {
        let mut mask = vec![false; w * h];
        let (mut cx, mut cy) = (r.random_range(6.0..(w - 6) as f64), r.random_range(6.0..(h - 6) as f64));
        for _ in 0..r.random_range(2..6) {
            let rad: f64 = r.random_range(1.5..5.0);
            for y in 0..h {
                for x in 0..w {
                    let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
                    if dx * dx + dy * dy <= rad * rad {
                        mask[y * w + x] = true;
                    }
                }
            }
            cx = (cx + r.random_range(-5.0..5.0)).clamp(2.0, w as f64 - 2.0);
            cy = (cy + r.random_range(-5.0..5.0)).clamp(2.0, h as f64 - 2.0);
        }
        let cc = connected_components(&mask, w, h).unwrap();
        // largest component
        let best = (1..=cc.count as u32)
            .max_by_key(|&k| (cc.labels.iter().filter(|l| **l == k).count(), std::cmp::Reverse(k)))
            .unwrap_or(0);
        let blob: Vec<usize> = (0..w * h).filter(|&i| best > 0 && cc.labels[i] == best).collect();
        if blob.len() >= 4 {
            return blob;
        }
    }
}

fn criterion_blobs() -> Outcome {
    let mut r = rng(4);
    let (w, h) = (64, 64);
    let mut cc_mismatch = 0;
    for _ in 0..200 {
        let density = r.random_range(0.2..0.8);
        let mask: Vec<bool> = (0..w * h).map(|_| r.random_bool(density)).collect();
        let cc = connected_components(&mask, w, h).unwrap();
        let (labels, count) = flood_fill(&mask, w, h);
        if cc.labels != labels || cc.count as u32 != count {
            cc_mismatch += 1;
        }
    }

    let (bw, bh) = (32, 32);
    let mut ws_fail = 0;
    for _ in 0..100 {
        let blob = random_blob(&mut r, bw, bh);
        let prob: Vec<f64> = (0..bw * bh).map(|_| r.random_range(0.5..1.0)).collect();
        let a = blob[r.random_range(0..blob.len())];
        // 4-adjacent seeds leave no pixel to cut between them
        let touching = |b: usize| b == a || (a % bw).abs_diff(b % bw) + (a / bw).abs_diff(b / bw) == 1;
        let b = loop {
            let b = blob[r.random_range(0..blob.len())];
            if !touching(b) {
                break b;
            }
        };
        let seeds: Vec<Point> = [a, b]
            .iter()
            .map(|&i| Point::new((i % bw) as f64 + 0.5, (i / bw) as f64 + 0.5))
            .collect();
        let boundary = watershed_split(&prob, bw, bh, &blob, &seeds).unwrap();
        let mut mask = vec![false; bw * bh];
        for &i in &blob {
            mask[i] = true;
        }
        for &i in &boundary {
            mask[i] = false;
        }
        let (labels, count) = flood_fill(&mask, bw, bh);
        let seed_labels = [labels[a], labels[b]];
        let ok = count == 2 && seed_labels[0] != 0 && seed_labels[1] != 0 && seed_labels[0] != seed_labels[1];
        if !ok {
            ws_fail += 1;
        }
    }
    Outcome {
        pass: cc_mismatch == 0 && ws_fail == 0,
        detail: format!(
            "components vs flood fill: {cc_mismatch}/200 mismatches; watershed: {ws_fail}/100 splits not one-seed-per-component"
        ),
    }
}

// ---------- 5 and 6: desk-scale experiment ----------

struct DeskResult {
    lcfcn: ModelRuns,
    density: ModelRuns,
    elapsed: Duration,
}

fn run_desk(cfg: &DeskConfig) -> Result<DeskResult> {
    let start = Instant::now();
    let data = desk_data(cfg)?;
    let lcfcn = run_model(cfg, &data, ModelKind::Lcfcn)?;
    let density = run_model(cfg, &data, ModelKind::Density)?;
    Ok(DeskResult {
        lcfcn,
        density,
        elapsed: start.elapsed(),
    })
}

fn absence_f(runs: &ModelRuns, i: usize) -> f64 {
    let pairs: Vec<CountPair> = runs.runs[i].eval.images.iter().map(|e| e.pair).collect();
    absence_fscore(&pairs, PRESENCE_THRESHOLD).f_score
}

fn print_table(cfg: &DeskConfig, runs: &ModelRuns) -> Result<()> {
    for (i, run) in runs.runs.iter().enumerate() {
        let rep = runs.seed_report(i, cfg.grid_n)?;
        let bins: Vec<String> = rep
            .bins
            .iter()
            .map(|b| {
                format!(
                    "{}(n={}): mape {:.3} gampe {:.3}",
                    b.label,
                    b.n,
                    b.mape.map_or(f64::NAN, |m| m.mean),
                    b.gampe.map_or(f64::NAN, |m| m.mean)
                )
            })
            .collect();
        println!(
            "    {:?} seed {}: best epoch {}/{}, presence F {:.3}, absence F {:.3}; {}",
            runs.model,
            run.seed,
            run.best_epoch,
            run.log.len(),
            rep.presence.f_score.mean,
            absence_f(runs, i),
            bins.join("; ")
        );
    }
    Ok(())
}

fn criterion_desk(cfg: &DeskConfig, res: &DeskResult) -> Result<Outcome> {
    print_table(cfg, &res.lcfcn)?;
    print_table(cfg, &res.density)?;
    let f = res.lcfcn.report.presence.f_score.mean;
    let m110 = res
        .density
        .report
        .bin(1)
        .and_then(|b| b.mape)
        .map_or(f64::INFINITY, |m| m.mean);
    let mut trend = 0;
    for i in 0..cfg.seeds.len() {
        let crowded = |runs: &ModelRuns| -> Result<f64> {
            Ok(runs.seed_report(i, cfg.grid_n)?.bin(101).and_then(|b| b.mape).map_or(f64::NAN, |m| m.mean))
        };
        let crowded_ok = crowded(&res.density)? <= crowded(&res.lcfcn)?;
        let empty_ok = absence_f(&res.lcfcn, i) >= absence_f(&res.density, i);
        if crowded_ok && empty_ok {
            trend += 1;
        }
    }
    let (a, b, c) = (f >= LCFCN_MIN_F, m110 <= DENSITY_MAX_MAPE_1_10, trend >= TREND_MIN_SEEDS);
    let fast = res.elapsed < DESK_BUDGET;
    Ok(Outcome {
        pass: a && b && c && fast,
        detail: format!(
            "(a) lcfcn presence F {f:.3} >= {LCFCN_MIN_F} {}; (b) density MAPE 1-10 {m110:.3} <= {DENSITY_MAX_MAPE_1_10} {}; \
             (c) trend holds in {trend}/{} seeds (need {TREND_MIN_SEEDS}) {}; runtime {:.0?} (budget {DESK_BUDGET:?})",
            ok(a),
            ok(b),
            cfg.seeds.len(),
            ok(c),
            res.elapsed
        ),
    })
}

fn ok(b: bool) -> &'static str {
    if b {
        "ok"
    } else {
        "MISSED"
    }
}

fn fingerprint(res: &DeskResult) -> String {
    serde_json::to_string(&(&res.lcfcn, &res.density)).expect("serializable")
}

// ---------- 7: early stopping ----------

struct Worsening {
    epoch: usize,
}

impl EpochRunner for Worsening {
    type Checkpoint = usize;
    fn train_epoch(&mut self, epoch: usize) -> Result<f64> {
        self.epoch = epoch;
        Ok(1.0)
    }
    fn validate(&mut self) -> Result<f64> {
        Ok(0.1 * self.epoch as f64)
    }
    fn checkpoint(&self) -> usize {
        self.epoch
    }
}

fn criterion_early_stopping() -> Outcome {
    let mut failures = Vec::new();
    for patience in [1, 3, 10] {
        let out = fit(&mut Worsening { epoch: 0 }, 100, patience).unwrap();
        if out.log.len() != patience + 1 || out.best != 1 || out.best_epoch != 1 || !out.stopped_early {
            failures.push(format!(
                "patience {patience}: stopped after {} epochs, best {}",
                out.log.len(),
                out.best
            ));
        }
    }
    Outcome {
        pass: failures.is_empty(),
        detail: if failures.is_empty() {
            "patience 1/3/10: stops at epoch patience+1 with the epoch-1 checkpoint".into()
        } else {
            failures.join("; ")
        },
    }
}

fn main() {
    let mut all = true;
    let mut record = |n: usize, name: &str, o: Outcome| {
        report(n, name, &o);
        all &= o.pass;
    };
    record(1, "metric oracles", criterion_metrics());
    record(2, "density conservation", criterion_conservation());
    record(3, "gradient checks", criterion_gradients());
    record(4, "blob/watershed correctness", criterion_blobs());

    let cfg = DeskConfig::default();
    let first = run_desk(&cfg).expect("desk-scale run");
    record(5, "desk-scale end-to-end", criterion_desk(&cfg, &first).expect("desk-scale report"));
    let second = run_desk(&cfg).expect("desk-scale rerun");
    let same = fingerprint(&first) == fingerprint(&second);
    record(
        6,
        "determinism",
        Outcome {
            pass: same,
            detail: format!(
                "second run of criterion 5 (seeds {:?}): logs and reports {}",
                cfg.seeds,
                if same { "bit-identical" } else { "DIFFER" }
            ),
        },
    );
    record(7, "early stopping", criterion_early_stopping());

    if !all {
        std::process::exit(1);
    }
}
