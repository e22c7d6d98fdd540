//! Independent reference implementations and fixtures shared by the
//! integration tests. The oracles never call into the library's kernels.

#![allow(dead_code)]

use lcdnet::groundtruth::DotMap;
use lcdnet::numerics::{ConvSpec, Padding, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0)).unwrap()
}

/// Direct cross-correlation: loops over batch, output channel, output pixel,
/// input channel and kernel taps.
pub fn conv_oracle(input: &Tensor, weights: &Tensor, bias: Option<&Tensor>, spec: &ConvSpec) -> Tensor {
    let s = input.shape();
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    let (o, kh, kw) = (spec.out_channels, spec.kernel_h, spec.kernel_w);
    let p = spec.padding;
    let oh = (h + p.top + p.bottom - kh) / spec.stride + 1;
    let ow = (w + p.left + p.right - kw) / spec.stride + 1;
    let x = input.data();
    let wt = weights.data();
    let mut out = vec![0.0; n * o * oh * ow];
    for b in 0..n {
        for oc in 0..o {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bias.map_or(0.0, |t| t.data()[oc]);
                    for ic in 0..c {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * spec.stride + ky) as isize - p.top as isize;
                                let ix = (ox * spec.stride + kx) as isize - p.left as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                let xv = x[((b * c + ic) * h + iy as usize) * w + ix as usize];
                                let wv = wt[((oc * c + ic) * kh + ky) * kw + kx];
                                acc += xv * wv;
                            }
                        }
                    }
                    out[((b * o + oc) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    Tensor::new(vec![n, o, oh, ow], out).unwrap()
}

/// Brute-force 2x2 window maximum with replicate clamping at odd borders.
pub fn maxpool_oracle(input: &Tensor) -> Tensor {
    let s = input.shape();
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
    let mut out = Vec::with_capacity(n * c * oh * ow);
    for plane in input.data().chunks(h * w) {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut m = f64::NEG_INFINITY;
                for dy in 0..2 {
                    for dx in 0..2 {
                        let y = (2 * oy + dy).min(h - 1);
                        let x = (2 * ox + dx).min(w - 1);
                        m = m.max(plane[y * w + x]);
                    }
                }
                out.push(m);
            }
        }
    }
    Tensor::new(vec![n, c, oh, ow], out).unwrap()
}

/// Max absolute difference between two equally shaped tensors.
pub fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Central finite difference of `f` with respect to every element of `x`.
pub fn numeric_gradient(x: &Tensor, h: f64, mut f: impl FnMut(&Tensor) -> f64) -> Vec<f64> {
    let mut probe = x.clone();
    (0..x.len())
        .map(|i| {
            let orig = probe.data()[i];
            probe.data_mut()[i] = orig + h;
            let up = f(&probe);
            probe.data_mut()[i] = orig - h;
            let dn = f(&probe);
            probe.data_mut()[i] = orig;
            (up - dn) / (2.0 * h)
        })
        .collect()
}

/// Largest relative error between two gradient vectors, with an absolute
/// floor for near-zero entries.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    analytic.iter().zip(numeric).map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor)).fold(0.0, f64::max)
}

/// `sum(out * r)` for a fixed random `r`: a scalar loss whose gradient with
/// respect to `out` is `r`.
pub fn dot(out: &Tensor, r: &Tensor) -> f64 {
    out.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
}

/// A random small convolution case: input, weights, optional bias and spec.
pub struct ConvCase {
    pub input: Tensor,
    pub weights: Tensor,
    pub bias: Option<Tensor>,
    pub spec: ConvSpec,
}

pub fn random_conv_case(rng: &mut ChaCha8Rng) -> ConvCase {
    const KERNELS: [(usize, usize); 6] = [(1, 1), (1, 3), (3, 1), (3, 3), (5, 5), (2, 3)];
    let (kh, kw) = KERNELS[rng.random_range(0..KERNELS.len())];
    let padding = if rng.random_bool(0.5) {
        Padding::same(kh, kw)
    } else {
        Padding {
            top: rng.random_range(0..=2),
            bottom: rng.random_range(0..=2),
            left: rng.random_range(0..=2),
            right: rng.random_range(0..=2),
        }
    };
    let h = rng.random_range(kh.saturating_sub(padding.top + padding.bottom).max(1)..=8);
    let w = rng.random_range(kw.saturating_sub(padding.left + padding.right).max(1)..=8);
    let (n, c, o) = (rng.random_range(1..=2), rng.random_range(1..=4), rng.random_range(1..=4));
    let spec = ConvSpec {
        out_channels: o,
        kernel_h: kh,
        kernel_w: kw,
        stride: rng.random_range(1..=2),
        padding,
        bias: rng.random_bool(0.5),
    };
    ConvCase {
        input: random_tensor(&[n, c, h, w], rng),
        weights: random_tensor(&spec.weight_shape(c), rng),
        bias: spec.bias.then(|| random_tensor(&[o], rng)),
        spec,
    }
}

pub fn random_map(h: usize, w: usize, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(vec![1, 1, h, w], |_| rng.random_range(0.0..1.0)).unwrap()
}

/// Assigns each pixel to its patch by scanning for the enclosing boundary
/// pair, accumulates per-patch sums, then adds absolute differences.
pub fn game_oracle(pred: &Tensor, gt: &Tensor, rows: usize, cols: usize) -> f64 {
    let (h, w) = (pred.shape()[2], pred.shape()[3]);
    let patch_of = |v: usize, n: usize, parts: usize| (0..parts).find(|&i| v < (i + 1) * n / parts).unwrap();
    let mut sums = vec![(0.0, 0.0); rows * cols];
    for y in 0..h {
        for x in 0..w {
            let k = patch_of(y, h, rows) * cols + patch_of(x, w, cols);
            sums[k].0 += pred.data()[y * w + x];
            sums[k].1 += gt.data()[y * w + x];
        }
    }
    sums.iter().map(|(p, g)| (p - g).abs()).sum()
}

/// A random DotMap with up to `max_points` points on an image of at most 40x40.
pub fn random_dotmap(rng: &mut ChaCha8Rng, max_points: usize) -> DotMap {
    let w = rng.random_range(1..=40);
    let h = rng.random_range(1..=40);
    let n = rng.random_range(0..=max_points);
    let points = (0..n).map(|_| (rng.random_range(0.0..w as f64), rng.random_range(0.0..h as f64))).collect();
    DotMap::new(w, h, points)
}

/// Worst relative error of the library's conv backward against central
/// differences of `sum(conv(x) * r)`.
pub fn conv_grad_errors(case: &ConvCase, rng: &mut ChaCha8Rng) -> f64 {
    let ConvCase { input, weights, bias, spec } = case;
    let out = lcdnet::numerics::conv2d_forward(input, weights, bias.as_ref(), spec).unwrap();
    let r = random_tensor(out.shape(), rng);
    let grads = lcdnet::numerics::conv2d_backward(&r, input, weights, spec).unwrap();
    let loss =
        |x: &Tensor, w: &Tensor, b: Option<&Tensor>| dot(&lcdnet::numerics::conv2d_forward(x, w, b, spec).unwrap(), &r);

    let gx = numeric_gradient(input, 1e-5, |x| loss(x, weights, bias.as_ref()));
    let gw = numeric_gradient(weights, 1e-5, |w| loss(input, w, bias.as_ref()));
    let mut worst = max_rel_err(grads.input.as_ref().unwrap().data(), &gx, 1e-6);
    worst = worst.max(max_rel_err(grads.weights.data(), &gw, 1e-6));
    if let Some(b) = bias {
        let gb = numeric_gradient(b, 1e-5, |b| loss(input, weights, Some(b)));
        worst = worst.max(max_rel_err(grads.bias.as_ref().unwrap().data(), &gb, 1e-6));
    }
    worst
}
