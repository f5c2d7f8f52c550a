//! A small FCN8-style network: three conv/pool stages, 1x1 score layers at
//! strides 4 and 8, fixed bilinear fusion back to input resolution.

mod io;
pub mod ops;

use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::Raster;
use crate::scalar::Scalar;

pub use io::{load_params, read_params, save_params, write_params, FORMAT_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    /// Logistic output: per-pixel foreground probability.
    Detection,
    /// Rectified output: per-pixel non-negative density.
    Density,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub in_channels: usize,
    pub stage_channels: [usize; 3],
    pub head: Head,
}

impl ArchConfig {
    pub fn new(in_channels: usize, head: Head) -> Self {
        Self {
            in_channels,
            stage_channels: [16, 32, 64],
            head,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels != 1 && self.in_channels != 3 {
            return Err(Error::UnsupportedChannels(self.in_channels));
        }
        if self.stage_channels.contains(&0) {
            return Err(Error::InvalidArgument("stage with zero channels".into()));
        }
        Ok(())
    }

    /// Named parameter slices in declaration order.
    pub fn layout(&self) -> Vec<ParamSlice> {
        let [c1, c2, c3] = self.stage_channels;
        let specs: [(&'static str, Vec<usize>); 10] = [
            ("conv1.weight", vec![c1, self.in_channels, 3, 3]),
            ("conv1.bias", vec![c1]),
            ("conv2.weight", vec![c2, c1, 3, 3]),
            ("conv2.bias", vec![c2]),
            ("conv3.weight", vec![c3, c2, 3, 3]),
            ("conv3.bias", vec![c3]),
            ("score4.weight", vec![1, c2]),
            ("score4.bias", vec![1]),
            ("score8.weight", vec![1, c3]),
            ("score8.bias", vec![1]),
        ];
        let mut offset = 0;
        specs
            .into_iter()
            .map(|(name, shape)| {
                let len = shape.iter().product();
                let s = ParamSlice {
                    name,
                    offset,
                    len,
                    shape,
                };
                offset += len;
                s
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layout().iter().map(|s| s.len).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSlice {
    pub name: &'static str,
    pub offset: usize,
    pub len: usize,
    pub shape: Vec<usize>,
}

impl ParamSlice {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len
    }

    pub fn is_bias(&self) -> bool {
        self.name.ends_with(".bias")
    }

    /// `(fan_in, fan_out)` of a weight tensor `[out, in, kh, kw]` or `[out, in]`.
    pub fn fans(&self) -> (usize, usize) {
        let receptive: usize = self.shape[2..].iter().product();
        (self.shape[1] * receptive, self.shape[0] * receptive)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub arch: ArchConfig,
    pub version: u32,
    pub values: Vec<f32>,
}

impl ModelParams {
    pub fn zeros(arch: ArchConfig) -> Self {
        Self {
            arch,
            version: FORMAT_VERSION,
            values: vec![0.0; arch.param_count()],
        }
    }

    /// Multiplies the score layers by `factor`, which scales the logits;
    /// for the density head (factor > 0) this scales the output map.
    pub fn scale_output(&mut self, factor: f32) {
        for s in self.arch.layout() {
            if s.name.starts_with("score") {
                self.values[s.range()].iter_mut().for_each(|v| *v *= factor);
            }
        }
    }

    pub fn slice(&self, name: &str) -> Option<&[f32]> {
        self.arch
            .layout()
            .into_iter()
            .find(|s| s.name == name)
            .map(|s| &self.values[s.range()])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    /// Uniform in `+-sqrt(6 / (fan_in + fan_out))`, zero biases.
    Xavier,
}

pub fn init_params(arch: ArchConfig, seed: u64, scheme: InitScheme) -> Result<ModelParams> {
    arch.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ModelParams::zeros(arch);
    for s in arch.layout() {
        if s.is_bias() {
            continue;
        }
        match scheme {
            InitScheme::Xavier => {
                let (fan_in, fan_out) = s.fans();
                let a = (6.0 / (fan_in + fan_out) as f64).sqrt() as f32;
                let dist = Uniform::new_inclusive(-a, a)
                    .map_err(|e| Error::InvalidArgument(e.to_string()))?;
                for v in &mut params.values[s.range()] {
                    *v = dist.sample(&mut rng);
                }
            }
        }
    }
    Ok(params)
}

/// Activations kept from a forward pass for the matching backward pass.
#[derive(Debug, Clone)]
pub struct Cache<T> {
    arch: ArchConfig,
    height: usize,
    width: usize,
    cols: [Vec<T>; 3],
    acts: [Vec<T>; 3],
    pool_idx: [Vec<u32>; 3],
    pooled2: Vec<T>,
    pooled3: Vec<T>,
    output: Vec<T>,
}

impl<T> Cache<T> {
    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }
}

fn check_input(arch: &ArchConfig, params_len: usize, input_len: usize, h: usize, w: usize) -> Result<()> {
    arch.validate()?;
    if params_len != arch.param_count() {
        return Err(Error::ShapeMismatch(format!(
            "{params_len} parameters, architecture needs {}",
            arch.param_count()
        )));
    }
    if h == 0 || w == 0 || h % 8 != 0 || w % 8 != 0 {
        return Err(Error::InvalidArgument(format!(
            "input {w}x{h} must have positive dimensions divisible by 8"
        )));
    }
    if input_len != arch.in_channels * h * w {
        return Err(Error::ShapeMismatch(format!(
            "input of {input_len} values for {} channels of {w}x{h}",
            arch.in_channels
        )));
    }
    Ok(())
}

/// Subtracted from every input value before the first convolution.
pub const INPUT_MEAN: f64 = 0.5;

/// Forward pass for one planar image (`[channel][row][col]`). Returns the
/// `h x w` output map and the activation cache.
pub fn forward_one<T: Scalar>(
    arch: &ArchConfig,
    params: &[T],
    input: &[T],
    h: usize,
    w: usize,
) -> Result<(Vec<T>, Cache<T>)> {
    check_input(arch, params.len(), input.len(), h, w)?;
    let layout = arch.layout();
    let p = |i: usize| &params[layout[i].range()];
    let [c1, c2, c3] = arch.stage_channels;

    let centered: Vec<T> = input.iter().map(|v| *v - T::of(INPUT_MEAN)).collect();
    let (cols1, a1) = ops::conv3_relu(&centered, arch.in_channels, c1, h, w, p(0), p(1));
    let (p1, i1) = ops::maxpool2(&a1, c1, h, w);
    let (h2, w2) = (h / 2, w / 2);
    let (cols2, a2) = ops::conv3_relu(&p1, c1, c2, h2, w2, p(2), p(3));
    let (p2, i2) = ops::maxpool2(&a2, c2, h2, w2);
    let (h4, w4) = (h / 4, w / 4);
    let (cols3, a3) = ops::conv3_relu(&p2, c2, c3, h4, w4, p(4), p(5));
    let (p3, i3) = ops::maxpool2(&a3, c3, h4, w4);
    let (h8, w8) = (h / 8, w / 8);

    let s4 = ops::score1x1(&p2, c2, h4 * w4, p(6), p(7)[0]);
    let s8 = ops::score1x1(&p3, c3, h8 * w8, p(8), p(9)[0]);
    let fused: Vec<T> = ops::upsample(&s8, h8, w8, 2)
        .into_iter()
        .zip(&s4)
        .map(|(a, b)| a + *b)
        .collect();
    let logits = ops::upsample(&fused, h4, w4, 4);
    let output: Vec<T> = match arch.head {
        Head::Detection => logits.iter().map(|z| sigmoid(*z)).collect(),
        Head::Density => logits.iter().map(|z| z.max(T::zero())).collect(),
    };
    let cache = Cache {
        arch: *arch,
        height: h,
        width: w,
        cols: [cols1, cols2, cols3],
        acts: [a1, a2, a3],
        pool_idx: [i1, i2, i3],
        pooled2: p2,
        pooled3: p3,
        output: output.clone(),
    };
    Ok((output, cache))
}

#[inline]
fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

/// Reverse pass: accumulates `d loss / d params` into `grad` given
/// `d loss / d output`.
pub fn backward_one<T: Scalar>(
    arch: &ArchConfig,
    params: &[T],
    cache: &Cache<T>,
    dout: &[T],
    grad: &mut [T],
) -> Result<()> {
    let (h, w) = (cache.height, cache.width);
    if cache.arch != *arch || params.len() != arch.param_count() || grad.len() != params.len() {
        return Err(Error::ShapeMismatch(
            "cache, parameters and gradient buffer disagree on architecture".into(),
        ));
    }
    if dout.len() != h * w {
        return Err(Error::ShapeMismatch(format!(
            "output gradient of {} values for a {w}x{h} cache",
            dout.len()
        )));
    }
    let layout = arch.layout();
    let [c1, c2, c3] = arch.stage_channels;
    let (h2, w2, h4, w4, h8, w8) = (h / 2, w / 2, h / 4, w / 4, h / 8, w / 8);

    let dlogits: Vec<T> = match arch.head {
        Head::Detection => cache
            .output
            .iter()
            .zip(dout)
            .map(|(p, d)| *d * *p * (T::one() - *p))
            .collect(),
        Head::Density => cache
            .output
            .iter()
            .zip(dout)
            .map(|(o, d)| if *o > T::zero() { *d } else { T::zero() })
            .collect(),
    };
    let dfused = ops::upsample_backward(&dlogits, h4, w4, 4);
    let ds8 = ops::upsample_backward(&dfused, h8, w8, 2);

    let mut dp2 = vec![T::zero(); c2 * h4 * w4];
    let mut dp3 = vec![T::zero(); c3 * h8 * w8];
    {
        let (head, tail) = grad.split_at_mut(layout[7].offset);
        let (dw4, db4) = (&mut head[layout[6].range()], &mut tail[0]);
        ops::score1x1_backward(
            &cache.pooled2,
            c2,
            h4 * w4,
            &params[layout[6].range()],
            &dfused,
            dw4,
            db4,
            &mut dp2,
        );
    }
    {
        let (head, tail) = grad.split_at_mut(layout[9].offset);
        let (dw8, db8) = (&mut head[layout[8].range()], &mut tail[0]);
        ops::score1x1_backward(
            &cache.pooled3,
            c3,
            h8 * w8,
            &params[layout[8].range()],
            &ds8,
            dw8,
            db8,
            &mut dp3,
        );
    }

    let da3 = ops::maxpool2_backward(&dp3, &cache.pool_idx[2], c3 * h4 * w4);
    let dfrom3 = conv_backward(arch, params, grad, cache, 2, &da3, c2, c3, h4, w4, true);
    for (a, b) in dp2.iter_mut().zip(dfrom3.expect("input gradient")) {
        *a = *a + b;
    }
    let da2 = ops::maxpool2_backward(&dp2, &cache.pool_idx[1], c2 * h2 * w2);
    let dp1 = conv_backward(arch, params, grad, cache, 1, &da2, c1, c2, h2, w2, true)
        .expect("input gradient");
    let da1 = ops::maxpool2_backward(&dp1, &cache.pool_idx[0], c1 * h * w);
    conv_backward(arch, params, grad, cache, 0, &da1, arch.in_channels, c1, h, w, false);
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn conv_backward<T: Scalar>(
    arch: &ArchConfig,
    params: &[T],
    grad: &mut [T],
    cache: &Cache<T>,
    stage: usize,
    dact: &[T],
    cin: usize,
    cout: usize,
    h: usize,
    w: usize,
    need_input: bool,
) -> Option<Vec<T>> {
    let layout = arch.layout();
    let (ws, bs) = (&layout[2 * stage], &layout[2 * stage + 1]);
    let (head, tail) = grad.split_at_mut(bs.offset);
    ops::conv3_relu_backward(
        &cache.cols[stage],
        &cache.acts[stage],
        dact,
        cin,
        cout,
        h,
        w,
        &params[ws.range()],
        &mut head[ws.range()],
        &mut tail[..bs.len],
        need_input,
    )
}

/// Output and cache for one batch item.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub output: Vec<f32>,
    pub cache: Cache<f32>,
}

/// Runs every raster of `batch` through the network (single precision).
pub fn forward(params: &ModelParams, batch: &[Raster]) -> Result<Vec<ForwardPass>> {
    batch
        .iter()
        .map(|r| {
            if r.channels() != params.arch.in_channels {
                return Err(Error::ShapeMismatch(format!(
                    "raster has {} channels, model expects {}",
                    r.channels(),
                    params.arch.in_channels
                )));
            }
            let (output, cache) =
                forward_one(&params.arch, &params.values, &r.to_planar(), r.height(), r.width())?;
            Ok(ForwardPass { output, cache })
        })
        .collect()
}

/// Sum over the batch of parameter gradients.
pub fn backward(params: &ModelParams, passes: &[ForwardPass], douts: &[Vec<f32>]) -> Result<Vec<f32>> {
    if passes.len() != douts.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} caches but {} output gradients",
            passes.len(),
            douts.len()
        )));
    }
    let mut grad = vec![0.0f32; params.values.len()];
    for (p, d) in passes.iter().zip(douts) {
        backward_one(&params.arch, &params.values, &p.cache, d, &mut grad)?;
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arch(head: Head) -> ArchConfig {
        ArchConfig::new(3, head)
    }

    #[test]
    fn default_parameter_count_is_pinned() {
        // 448 + 4640 + 18496 + 33 + 65
        assert_eq!(arch(Head::Detection).param_count(), 23_682);
        assert_eq!(ArchConfig::new(1, Head::Density).param_count(), 23_682 - 288);
    }

    #[test]
    fn xavier_init_is_deterministic_with_zero_biases() {
        let a = init_params(arch(Head::Detection), 11, InitScheme::Xavier).unwrap();
        let b = init_params(arch(Head::Detection), 11, InitScheme::Xavier).unwrap();
        assert_eq!(a, b);
        for s in a.arch.layout() {
            if s.is_bias() {
                assert!(a.values[s.range()].iter().all(|v| *v == 0.0), "{}", s.name);
            }
        }
        let c = init_params(arch(Head::Detection), 12, InitScheme::Xavier).unwrap();
        assert_ne!(a.values, c.values);
    }

    #[test]
    fn xavier_variance() {
        let p = init_params(arch(Head::Detection), 5, InitScheme::Xavier).unwrap();
        let k = p.slice("conv2.weight").unwrap();
        assert_eq!(k.len(), 3 * 3 * 16 * 32);
        let n = k.len() as f64;
        let mean = k.iter().map(|v| f64::from(*v)).sum::<f64>() / n;
        let var = k.iter().map(|v| (f64::from(*v) - mean).powi(2)).sum::<f64>() / n;
        let expect = 2.0 / (16.0 * 9.0 + 32.0 * 9.0);
        assert!((var / expect - 1.0).abs() < 0.1, "{var} vs {expect}");
    }

    #[test]
    fn zero_network_is_constant() {
        for (head, value) in [(Head::Detection, 0.5f32), (Head::Density, 0.0)] {
            let p = ModelParams::zeros(arch(head));
            let img = Raster::new(16, 24, 3, (0..16 * 24 * 3).map(|i| (i % 7) as f32 / 7.0).collect())
                .unwrap();
            let out = forward(&p, &[img]).unwrap();
            assert!(out[0].output.iter().all(|v| *v == value));
        }
    }

    #[test]
    fn output_shape_matches_input() {
        let p = init_params(arch(Head::Density), 1, InitScheme::Xavier).unwrap();
        for s in [128usize, 504] {
            let img = Raster::zeros(s, s, 3).unwrap();
            let out = forward(&p, &[img]).unwrap();
            assert_eq!(out[0].output.len(), s * s);
            assert_eq!(out[0].cache.dims(), (s, s));
        }
        let bad = Raster::zeros(500, 500, 3).unwrap();
        assert!(forward(&p, &[bad]).is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let p = init_params(arch(Head::Detection), 3, InitScheme::Xavier).unwrap();
        let img = Raster::new(16, 16, 3, (0..768).map(|i| (i % 13) as f32 / 13.0).collect()).unwrap();
        let passes = forward(&p, &[img]).unwrap();
        let g = backward(&p, &passes, &[vec![0.0; 256]]).unwrap();
        assert!(g.iter().all(|v| *v == 0.0));
        assert!(backward(&p, &passes, &[vec![0.0; 255]]).is_err());
    }
}
