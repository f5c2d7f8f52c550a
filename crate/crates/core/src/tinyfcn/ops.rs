//! Planar (`[channel][row][col]`) layer primitives with their adjoints.

use crate::scalar::{matmul, Scalar};

/// Unfolds a zero-padded 3x3 neighborhood: `cols[(c*9 + ky*3 + kx), y*w + x]`.
pub fn im2col3<T: Scalar>(input: &[T], channels: usize, h: usize, w: usize) -> Vec<T> {
    let plane = h * w;
    let mut cols = vec![T::zero(); channels * 9 * plane];
    for c in 0..channels {
        let src = &input[c * plane..(c + 1) * plane];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut cols[(c * 9 + ky * 3 + kx) * plane..][..plane];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let sy = sy as usize;
                    let (x0, x1) = match kx {
                        0 => (1, w),
                        1 => (0, w),
                        _ => (0, w - 1),
                    };
                    let dst = &mut row[y * w + x0..y * w + x1];
                    let sx0 = (x0 as isize + kx as isize - 1) as usize;
                    dst.copy_from_slice(&src[sy * w + sx0..sy * w + sx0 + (x1 - x0)]);
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col3`]: folds column gradients back onto the input.
pub fn col2im3<T: Scalar>(cols: &[T], channels: usize, h: usize, w: usize) -> Vec<T> {
    let plane = h * w;
    let mut out = vec![T::zero(); channels * plane];
    for c in 0..channels {
        let dst = &mut out[c * plane..(c + 1) * plane];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &cols[(c * 9 + ky * 3 + kx) * plane..][..plane];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let sy = sy as usize;
                    let (x0, x1) = match kx {
                        0 => (1, w),
                        1 => (0, w),
                        _ => (0, w - 1),
                    };
                    let sx0 = (x0 as isize + kx as isize - 1) as usize;
                    for (d, s) in dst[sy * w + sx0..sy * w + sx0 + (x1 - x0)]
                        .iter_mut()
                        .zip(&row[y * w + x0..y * w + x1])
                    {
                        *d = *d + *s;
                    }
                }
            }
        }
    }
    out
}

/// 3x3 same-padding convolution followed by ReLU. Returns the unfolded input
/// (kept for the backward pass) and the activation.
pub fn conv3_relu<T: Scalar>(
    input: &[T],
    cin: usize,
    cout: usize,
    h: usize,
    w: usize,
    weight: &[T],
    bias: &[T],
) -> (Vec<T>, Vec<T>) {
    let plane = h * w;
    let cols = im2col3(input, cin, h, w);
    let mut out = vec![T::zero(); cout * plane];
    for (o, b) in bias.iter().enumerate() {
        out[o * plane..(o + 1) * plane].fill(*b);
    }
    matmul(false, false, cout, cin * 9, plane, weight, &cols, &mut out, true);
    for v in out.iter_mut() {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
    (cols, out)
}

/// Backward of [`conv3_relu`]. `dact` is the gradient w.r.t. the activation;
/// weight and bias gradients are accumulated. Returns the input gradient when
/// `need_input` is set.
#[allow(clippy::too_many_arguments)]
pub fn conv3_relu_backward<T: Scalar>(
    cols: &[T],
    act: &[T],
    dact: &[T],
    cin: usize,
    cout: usize,
    h: usize,
    w: usize,
    weight: &[T],
    dweight: &mut [T],
    dbias: &mut [T],
    need_input: bool,
) -> Option<Vec<T>> {
    let plane = h * w;
    let dz: Vec<T> = act
        .iter()
        .zip(dact)
        .map(|(a, d)| if *a > T::zero() { *d } else { T::zero() })
        .collect();
    for (o, db) in dbias.iter_mut().enumerate() {
        *db = *db + dz[o * plane..(o + 1) * plane].iter().copied().sum::<T>();
    }
    matmul(false, true, cout, plane, cin * 9, &dz, cols, dweight, true);
    need_input.then(|| {
        let mut dcols = vec![T::zero(); cin * 9 * plane];
        matmul(true, false, cin * 9, cout, plane, weight, &dz, &mut dcols, false);
        col2im3(&dcols, cin, h, w)
    })
}

/// 2x2 stride-2 max pooling. Returns pooled values and, per output, the
/// input index of the winner (first maximum in window order).
pub fn maxpool2<T: Scalar>(input: &[T], channels: usize, h: usize, w: usize) -> (Vec<T>, Vec<u32>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(channels * oh * ow);
    let mut idx = Vec::with_capacity(channels * oh * ow);
    for c in 0..channels {
        let base = c * h * w;
        for y in 0..oh {
            for x in 0..ow {
                let i0 = base + 2 * y * w + 2 * x;
                let mut best = i0;
                for i in [i0 + 1, i0 + w, i0 + w + 1] {
                    if input[i] > input[best] {
                        best = i;
                    }
                }
                out.push(input[best]);
                idx.push(best as u32);
            }
        }
    }
    (out, idx)
}

pub fn maxpool2_backward<T: Scalar>(dout: &[T], idx: &[u32], input_len: usize) -> Vec<T> {
    let mut din = vec![T::zero(); input_len];
    for (d, i) in dout.iter().zip(idx) {
        din[*i as usize] = din[*i as usize] + *d;
    }
    din
}

/// 1x1 convolution to a single output channel.
pub fn score1x1<T: Scalar>(input: &[T], channels: usize, plane: usize, weight: &[T], bias: T) -> Vec<T> {
    let mut out = vec![bias; plane];
    for c in 0..channels {
        let wc = weight[c];
        for (o, v) in out.iter_mut().zip(&input[c * plane..(c + 1) * plane]) {
            *o = *o + wc * *v;
        }
    }
    out
}

/// Backward of [`score1x1`]; accumulates parameter gradients into
/// `dweight`/`dbias` and the input gradient into `dinput`.
pub fn score1x1_backward<T: Scalar>(
    input: &[T],
    channels: usize,
    plane: usize,
    weight: &[T],
    dout: &[T],
    dweight: &mut [T],
    dbias: &mut T,
    dinput: &mut [T],
) {
    *dbias = *dbias + dout.iter().copied().sum::<T>();
    for c in 0..channels {
        let src = &input[c * plane..(c + 1) * plane];
        let mut acc = T::zero();
        for (d, v) in dout.iter().zip(src) {
            acc = acc + *d * *v;
        }
        dweight[c] = dweight[c] + acc;
        let wc = weight[c];
        for (di, d) in dinput[c * plane..(c + 1) * plane].iter_mut().zip(dout) {
            *di = *di + wc * *d;
        }
    }
}

/// Half-pixel-centered linear interpolation taps for upsampling an axis of
/// length `n` by `factor`: `(i0, i1, w0, w1)` per output sample.
fn taps<T: Scalar>(n: usize, factor: usize) -> Vec<(usize, usize, T, T)> {
    (0..n * factor)
        .map(|o| {
            let src = ((o as f64 + 0.5) / factor as f64 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(n - 1);
            let i1 = (i0 + 1).min(n - 1);
            let frac = src - i0 as f64;
            (i0, i1, T::of(1.0 - frac), T::of(frac))
        })
        .collect()
}

/// Fixed bilinear upsampling of a single-channel `h x w` map.
pub fn upsample<T: Scalar>(input: &[T], h: usize, w: usize, factor: usize) -> Vec<T> {
    let tx = taps::<T>(w, factor);
    let ty = taps::<T>(h, factor);
    let ow = w * factor;
    let mut rows = vec![T::zero(); h * ow];
    for y in 0..h {
        let src = &input[y * w..(y + 1) * w];
        for (x, (i0, i1, w0, w1)) in tx.iter().enumerate() {
            rows[y * ow + x] = *w0 * src[*i0] + *w1 * src[*i1];
        }
    }
    let mut out = vec![T::zero(); h * factor * ow];
    for (y, (i0, i1, w0, w1)) in ty.iter().enumerate() {
        for x in 0..ow {
            out[y * ow + x] = *w0 * rows[i0 * ow + x] + *w1 * rows[i1 * ow + x];
        }
    }
    out
}

/// Adjoint of [`upsample`].
pub fn upsample_backward<T: Scalar>(dout: &[T], h: usize, w: usize, factor: usize) -> Vec<T> {
    let tx = taps::<T>(w, factor);
    let ty = taps::<T>(h, factor);
    let ow = w * factor;
    let mut drows = vec![T::zero(); h * ow];
    for (y, (i0, i1, w0, w1)) in ty.iter().enumerate() {
        for x in 0..ow {
            let d = dout[y * ow + x];
            drows[i0 * ow + x] = drows[i0 * ow + x] + *w0 * d;
            drows[i1 * ow + x] = drows[i1 * ow + x] + *w1 * d;
        }
    }
    let mut din = vec![T::zero(); h * w];
    for y in 0..h {
        for (x, (i0, i1, w0, w1)) in tx.iter().enumerate() {
            let d = drows[y * ow + x];
            din[y * w + i0] = din[y * w + i0] + *w0 * d;
            din[y * w + i1] = din[y * w + i1] + *w1 * d;
        }
    }
    din
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lcg(n: usize, seed: u64) -> Vec<f64> {
        let mut s = seed;
        (0..n)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
            })
            .collect()
    }

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn im2col_matches_direct_indexing() {
        let (c, h, w) = (2, 4, 5);
        let x = lcg(c * h * w, 1);
        let cols = im2col3(&x, c, h, w);
        for ch in 0..c {
            for ky in 0..3 {
                for kx in 0..3 {
                    for y in 0..h {
                        for xx in 0..w {
                            let (sy, sx) = (y as isize + ky as isize - 1, xx as isize + kx as isize - 1);
                            let expect = if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                0.0
                            } else {
                                x[ch * h * w + sy as usize * w + sx as usize]
                            };
                            assert_eq!(cols[(ch * 9 + ky * 3 + kx) * h * w + y * w + xx], expect);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn adjoint_identities() {
        let (c, h, w) = (3, 6, 4);
        let x = lcg(c * h * w, 2);
        let g = lcg(c * 9 * h * w, 3);
        assert!((dot(&im2col3(&x, c, h, w), &g) - dot(&x, &col2im3(&g, c, h, w))).abs() < 1e-10);

        for factor in [2, 4] {
            let x = lcg(h * w, 4);
            let g = lcg(h * w * factor * factor, 5);
            let lhs = dot(&upsample(&x, h, w, factor), &g);
            let rhs = dot(&x, &upsample_backward(&g, h, w, factor));
            assert!((lhs - rhs).abs() < 1e-10);
        }
    }

    #[test]
    fn upsampling_preserves_constants() {
        let x = vec![0.75f64; 12];
        assert!(upsample(&x, 3, 4, 4).iter().all(|v| (v - 0.75).abs() < 1e-15));
    }

    #[test]
    fn pool_routes_to_first_max() {
        let x = [1.0f64, 3.0, 3.0, 2.0];
        let (p, idx) = maxpool2(&x, 1, 2, 2);
        assert_eq!(p, vec![3.0]);
        assert_eq!(idx, vec![1]);
        assert_eq!(maxpool2_backward(&[2.0], &idx, 4), vec![0.0, 2.0, 0.0, 0.0]);
    }
}
