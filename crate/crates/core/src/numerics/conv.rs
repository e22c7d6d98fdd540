//! 2-D cross-correlation over NCHW tensors.
//!
//! The forward pass lowers each image to a column matrix (im2col) and runs a
//! single GEMM against the `(out_ch, in_ch * kh * kw)` weight matrix. The
//! backward pass reuses the same lowering for the weight gradient and scatters
//! the column gradient back with col2im.

use super::tensor::{debug_check_finite, gemm, MatRef, Scalar, Tensor};
use crate::error::{Error, Result};

/// Explicit per-side zero padding in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Padding {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
}

impl Padding {
    pub fn uniform(p: usize) -> Self {
        Self { top: p, bottom: p, left: p, right: p }
    }

    /// `floor(k / 2)` on every side of the matching dimension.
    pub fn same(kernel_h: usize, kernel_w: usize) -> Self {
        Self { top: kernel_h / 2, bottom: kernel_h / 2, left: kernel_w / 2, right: kernel_w / 2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: Padding,
    pub bias: bool,
}

impl ConvSpec {
    /// Stride 1, same padding, with bias.
    pub fn same(out_channels: usize, kernel_h: usize, kernel_w: usize) -> Self {
        Self { out_channels, kernel_h, kernel_w, stride: 1, padding: Padding::same(kernel_h, kernel_w), bias: true }
    }

    pub fn validate(&self) -> Result<()> {
        if self.out_channels == 0 {
            return Err(Error::config("convolution needs at least one output channel"));
        }
        if self.kernel_h == 0 || self.kernel_w == 0 {
            return Err(Error::config(format!("kernel extents must be >= 1, got {}x{}", self.kernel_h, self.kernel_w)));
        }
        if self.stride == 0 {
            return Err(Error::config("stride must be >= 1"));
        }
        Ok(())
    }

    /// Output `(height, width)` for an input of `(h, w)`.
    pub fn output_extent(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        self.validate()?;
        let ph = h + self.padding.top + self.padding.bottom;
        let pw = w + self.padding.left + self.padding.right;
        if ph < self.kernel_h || pw < self.kernel_w {
            return Err(Error::config(format!(
                "{}x{} kernel does not fit a padded {ph}x{pw} input; output would be empty",
                self.kernel_h, self.kernel_w
            )));
        }
        Ok(((ph - self.kernel_h) / self.stride + 1, (pw - self.kernel_w) / self.stride + 1))
    }

    pub fn weight_shape(&self, in_channels: usize) -> [usize; 4] {
        [self.out_channels, in_channels, self.kernel_h, self.kernel_w]
    }

    fn is_pointwise(&self) -> bool {
        self.kernel_h == 1 && self.kernel_w == 1 && self.stride == 1 && self.padding == Padding::default()
    }
}

/// Geometry of one lowered convolution.
#[derive(Debug, Clone, Copy)]
struct Geometry {
    batch: usize,
    in_ch: usize,
    h: usize,
    w: usize,
    out_h: usize,
    out_w: usize,
}

impl Geometry {
    fn rows(&self, spec: &ConvSpec) -> usize {
        self.in_ch * spec.kernel_h * spec.kernel_w
    }

    fn cols(&self) -> usize {
        self.out_h * self.out_w
    }
}

fn check_shapes<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: &ConvSpec,
) -> Result<Geometry> {
    spec.validate()?;
    let (batch, in_ch, h, w) = input.dims4()?;
    let expected = spec.weight_shape(in_ch);
    if weights.shape() != expected {
        return Err(Error::dim(format!(
            "weights have shape {:?}, expected {expected:?} for {in_ch} input channels",
            weights.shape()
        )));
    }
    match (spec.bias, bias) {
        (true, Some(b)) if b.shape() != [spec.out_channels] => {
            return Err(Error::dim(format!("bias has shape {:?}, expected [{}]", b.shape(), spec.out_channels)))
        }
        (false, Some(_)) => return Err(Error::config("bias supplied to a convolution declared without bias")),
        _ => {}
    }
    let (out_h, out_w) = spec.output_extent(h, w)?;
    Ok(Geometry { batch, in_ch, h, w, out_h, out_w })
}

/// Range of output columns `ox` for which `ox * stride + offset` lands inside
/// `[0, extent)`, where `offset = k - pad`.
fn valid_range(out: usize, stride: usize, k: usize, pad: usize, extent: usize) -> (usize, usize) {
    // smallest ox with ox*stride + k >= pad
    let lo = if k >= pad { 0 } else { (pad - k).div_ceil(stride) };
    // largest ox with ox*stride + k - pad <= extent - 1
    let limit = extent + pad - 1;
    let hi = if k > limit { 0 } else { ((limit - k) / stride + 1).min(out) };
    (lo.min(hi), hi)
}

fn im2col<T: Scalar>(image: &[T], g: &Geometry, spec: &ConvSpec, col: &mut [T]) {
    let (kh, kw, s) = (spec.kernel_h, spec.kernel_w, spec.stride);
    let p = spec.padding;
    let ncols = g.cols();
    for c in 0..g.in_ch {
        let plane = &image[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (c * kh + ki) * kw + kj;
                let dst = &mut col[row * ncols..(row + 1) * ncols];
                let (x_lo, x_hi) = valid_range(g.out_w, s, kj, p.left, g.w);
                for oy in 0..g.out_h {
                    let out_row = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    let iy = (oy * s + ki) as isize - p.top as isize;
                    if iy < 0 || iy >= g.h as isize {
                        out_row.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    out_row[..x_lo].fill(T::zero());
                    out_row[x_hi..].fill(T::zero());
                    if x_lo == x_hi {
                        continue;
                    }
                    if s == 1 {
                        let start = x_lo + kj - p.left;
                        out_row[x_lo..x_hi].copy_from_slice(&src[start..start + (x_hi - x_lo)]);
                    } else {
                        for ox in x_lo..x_hi {
                            out_row[ox] = src[ox * s + kj - p.left];
                        }
                    }
                }
            }
        }
    }
}

fn col2im<T: Scalar>(col: &[T], g: &Geometry, spec: &ConvSpec, image: &mut [T]) {
    let (kh, kw, s) = (spec.kernel_h, spec.kernel_w, spec.stride);
    let p = spec.padding;
    let ncols = g.cols();
    for c in 0..g.in_ch {
        let plane = &mut image[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (c * kh + ki) * kw + kj;
                let src = &col[row * ncols..(row + 1) * ncols];
                let (x_lo, x_hi) = valid_range(g.out_w, s, kj, p.left, g.w);
                for oy in 0..g.out_h {
                    let iy = (oy * s + ki) as isize - p.top as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let in_row = &src[oy * g.out_w..(oy + 1) * g.out_w];
                    for ox in x_lo..x_hi {
                        let ix = ox * s + kj - p.left;
                        dst[ix] = dst[ix] + in_row[ox];
                    }
                }
            }
        }
    }
}

/// Cross-correlation of `input (N, C, H, W)` with `weights (O, C, kh, kw)`,
/// plus an optional per-output-channel bias. No kernel flip.
pub fn conv2d_forward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    let g = check_shapes(input, weights, bias, spec)?;
    let oc = spec.out_channels;
    let (k, ncols) = (g.rows(spec), g.cols());
    let in_plane = g.in_ch * g.h * g.w;
    let out_plane = oc * ncols;
    let mut out = vec![T::zero(); g.batch * out_plane];
    let mut col = if spec.is_pointwise() { Vec::new() } else { vec![T::zero(); k * ncols] };

    for n in 0..g.batch {
        let image = &input.data()[n * in_plane..(n + 1) * in_plane];
        let dst = &mut out[n * out_plane..(n + 1) * out_plane];
        let beta = match bias {
            Some(b) => {
                for (o, &bv) in b.data().iter().enumerate() {
                    dst[o * ncols..(o + 1) * ncols].fill(bv);
                }
                T::one()
            }
            None => T::zero(),
        };
        let cols = if spec.is_pointwise() {
            image
        } else {
            im2col(image, &g, spec, &mut col);
            &col[..]
        };
        gemm(MatRef::new(weights.data(), oc, k), MatRef::new(cols, k, ncols), beta, dst);
    }

    let out = Tensor::from_parts(vec![g.batch, oc, g.out_h, g.out_w], out);
    debug_check_finite("conv2d_forward", &[input, weights], &out)?;
    Ok(out)
}

/// Gradients of a convolution with respect to its input, weights and bias.
#[derive(Debug, Clone)]
pub struct ConvGrads {
    /// `None` when the caller asked for parameter gradients only.
    pub input: Option<Tensor>,
    pub weights: Tensor,
    pub bias: Option<Tensor>,
}

/// Full backward pass of [`conv2d_forward`].
pub fn conv2d_backward(
    grad_out: &Tensor,
    saved_input: &Tensor,
    weights: &Tensor,
    spec: &ConvSpec,
) -> Result<ConvGrads> {
    conv2d_backward_impl(grad_out, saved_input, weights, spec, true)
}

/// Backward pass that skips the input gradient (first layer of a network).
pub fn conv2d_backward_params(
    grad_out: &Tensor,
    saved_input: &Tensor,
    weights: &Tensor,
    spec: &ConvSpec,
) -> Result<ConvGrads> {
    conv2d_backward_impl(grad_out, saved_input, weights, spec, false)
}

fn conv2d_backward_impl(
    grad_out: &Tensor,
    saved_input: &Tensor,
    weights: &Tensor,
    spec: &ConvSpec,
    need_input: bool,
) -> Result<ConvGrads> {
    let g = check_shapes(saved_input, weights, None, spec)?;
    let oc = spec.out_channels;
    let expected = [g.batch, oc, g.out_h, g.out_w];
    if grad_out.shape() != expected {
        return Err(Error::dim(format!("grad_out has shape {:?}, forward output was {expected:?}", grad_out.shape())));
    }
    let (k, ncols) = (g.rows(spec), g.cols());
    let in_plane = g.in_ch * g.h * g.w;
    let out_plane = oc * ncols;
    let pointwise = spec.is_pointwise();

    let mut grad_w = vec![0.0; oc * k];
    let mut grad_in = if need_input { vec![0.0; g.batch * in_plane] } else { Vec::new() };
    let mut col = if pointwise { Vec::new() } else { vec![0.0; k * ncols] };
    let mut grad_col = if need_input && !pointwise { vec![0.0; k * ncols] } else { Vec::new() };

    for n in 0..g.batch {
        let image = &saved_input.data()[n * in_plane..(n + 1) * in_plane];
        let go = &grad_out.data()[n * out_plane..(n + 1) * out_plane];
        let cols = if pointwise {
            image
        } else {
            im2col(image, &g, spec, &mut col);
            &col[..]
        };
        // dW += dY (oc x P) * col^T (P x K)
        gemm(MatRef::new(go, oc, ncols), MatRef::new(cols, k, ncols).t(), 1.0, &mut grad_w);
        if need_input {
            let dst = &mut grad_in[n * in_plane..(n + 1) * in_plane];
            if pointwise {
                // dX (C x P) = W^T (C x oc) * dY (oc x P)
                gemm(MatRef::new(weights.data(), oc, k).t(), MatRef::new(go, oc, ncols), 0.0, dst);
            } else {
                gemm(MatRef::new(weights.data(), oc, k).t(), MatRef::new(go, oc, ncols), 0.0, &mut grad_col);
                col2im(&grad_col, &g, spec, dst);
            }
        }
    }

    let grad_bias = spec.bias.then(|| {
        let mut gb = vec![0.0; oc];
        for n in 0..g.batch {
            for (o, acc) in gb.iter_mut().enumerate() {
                let start = n * out_plane + o * ncols;
                *acc += grad_out.data()[start..start + ncols].iter().sum::<f64>();
            }
        }
        Tensor::from_parts(vec![oc], gb)
    });

    let grads = ConvGrads {
        input: need_input.then(|| Tensor::from_parts(saved_input.shape().to_vec(), grad_in)),
        weights: Tensor::from_parts(weights.shape().to_vec(), grad_w),
        bias: grad_bias,
    };
    if let Some(gi) = &grads.input {
        debug_check_finite("conv2d_backward", &[grad_out, saved_input, weights], gi)?;
    }
    debug_check_finite("conv2d_backward", &[grad_out, saved_input, weights], &grads.weights)?;
    Ok(grads)
}
