use super::tensor::{debug_check_finite, Scalar, Tensor};
use crate::error::{Error, Result};

pub fn relu<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// In-place ReLU, used on freshly produced activations.
pub fn relu_inplace<T: Scalar>(t: &mut Tensor<T>) {
    for v in t.data_mut() {
        if !(*v > T::zero()) {
            *v = T::zero();
        }
    }
}

/// Gradient of ReLU given the forward *output* (or input; the mask is the
/// same): passes `grad_out` where the activation was positive.
pub fn relu_backward(grad_out: &Tensor, activation: &Tensor) -> Result<Tensor> {
    grad_out.zip_map(activation, |g, a| if a > 0.0 { g } else { 0.0 })
}

/// Concatenates two NCHW tensors along the channel axis, `a` first.
pub fn concat_channels<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (na, ca, ha, wa) = a.dims4()?;
    let (nb, cb, hb, wb) = b.dims4()?;
    if (na, ha, wa) != (nb, hb, wb) {
        return Err(Error::dim(format!(
            "cannot concatenate {:?} and {:?}: batch/height/width differ",
            a.shape(),
            b.shape()
        )));
    }
    let plane = ha * wa;
    let mut data = Vec::with_capacity(a.len() + b.len());
    for n in 0..na {
        data.extend_from_slice(&a.data()[n * ca * plane..(n + 1) * ca * plane]);
        data.extend_from_slice(&b.data()[n * cb * plane..(n + 1) * cb * plane]);
    }
    let out = Tensor::from_parts(vec![na, ca + cb, ha, wa], data);
    debug_check_finite("concat_channels", &[a, b], &out)?;
    Ok(out)
}

/// Inverse routing of [`concat_channels`]: the first `channels_a` channels go
/// to `a`, the rest to `b`.
pub fn split_channels(grad: &Tensor, channels_a: usize) -> Result<(Tensor, Tensor)> {
    let (n, c, h, w) = grad.dims4()?;
    if channels_a == 0 || channels_a >= c {
        return Err(Error::dim(format!("cannot split {c} channels at {channels_a}")));
    }
    let cb = c - channels_a;
    let plane = h * w;
    let mut ga = Vec::with_capacity(n * channels_a * plane);
    let mut gb = Vec::with_capacity(n * cb * plane);
    for i in 0..n {
        let base = i * c * plane;
        ga.extend_from_slice(&grad.data()[base..base + channels_a * plane]);
        gb.extend_from_slice(&grad.data()[base + channels_a * plane..base + c * plane]);
    }
    Ok((Tensor::from_parts(vec![n, channels_a, h, w], ga), Tensor::from_parts(vec![n, cb, h, w], gb)))
}
