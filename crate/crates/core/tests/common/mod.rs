#![allow(dead_code)]

use cownter_core::lossfns::{lcfcn_structure, LcfcnStructure};
use cownter_core::tinyfcn::{backward_one, forward_one, ArchConfig, Head};
use cownter_core::Point;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;

/// Relative error with a small absolute floor so coordinates whose gradient
/// is numerically zero compare on an absolute scale.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

/// Max relative error of the network backward pass against central
/// differences of `sum(r * output)` over every parameter coordinate.
pub fn network_gradcheck(seed: u64, head: Head, h: usize, w: usize, stages: [usize; 3]) -> f64 {
    let mut r = rng(seed);
    let arch = ArchConfig {
        in_channels: if seed % 2 == 0 { 1 } else { 3 },
        stage_channels: stages,
        head,
    };
    let n = arch.param_count();
    let mut params = uniform_vec(&mut r, n, -0.6, 0.6);
    // positive biases keep most ReLUs away from their kink
    for s in arch.layout() {
        if s.is_bias() {
            for v in &mut params[s.range()] {
                *v = r.random_range(0.05..0.3);
            }
        }
    }
    let input = uniform_vec(&mut r, arch.in_channels * h * w, 0.0, 1.0);
    let weights = uniform_vec(&mut r, h * w, -1.0, 1.0);

    let objective = |p: &[f64]| -> f64 {
        let (out, _) = forward_one(&arch, p, &input, h, w).unwrap();
        out.iter().zip(&weights).map(|(o, r)| o * r).sum()
    };
    let (_, cache) = forward_one(&arch, &params, &input, h, w).unwrap();
    let mut grad = vec![0.0; n];
    backward_one(&arch, &params, &cache, &weights, &mut grad).unwrap();

    let mut worst = 0.0f64;
    for i in 0..n {
        let orig = params[i];
        params[i] = orig + FD_STEP;
        let up = objective(&params);
        params[i] = orig - FD_STEP;
        let down = objective(&params);
        params[i] = orig;
        let numeric = (up - down) / (2.0 * FD_STEP);
        worst = worst.max(rel_err(grad[i], numeric));
    }
    worst
}

pub fn same_structure(a: &LcfcnStructure, b: &LcfcnStructure) -> bool {
    a == b
}

/// Max relative error of the blob loss gradient over coordinates whose
/// perturbation leaves the blob structure unchanged; also returns how many
/// coordinates were compared.
pub fn lcfcn_gradcheck(prob: &[f64], w: usize, h: usize, points: &[Point]) -> (f64, usize) {
    let (_, grad) = cownter_core::lossfns::lcfcn_loss(prob, w, h, points).unwrap();
    let base = lcfcn_structure(prob, w, h, points).unwrap();
    let mut p = prob.to_vec();
    let mut worst = 0.0f64;
    let mut checked = 0;
    for i in 0..p.len() {
        let orig = p[i];
        p[i] = orig + FD_STEP;
        let s_up = lcfcn_structure(&p, w, h, points).unwrap();
        let up = cownter_core::lossfns::lcfcn_loss(&p, w, h, points).unwrap().0.total;
        p[i] = orig - FD_STEP;
        let s_down = lcfcn_structure(&p, w, h, points).unwrap();
        let down = cownter_core::lossfns::lcfcn_loss(&p, w, h, points).unwrap().0.total;
        p[i] = orig;
        if !same_structure(&s_up, &base) || !same_structure(&s_down, &base) {
            continue;
        }
        checked += 1;
        worst = worst.max(rel_err(grad[i], (up - down) / (2.0 * FD_STEP)));
    }
    (worst, checked)
}
