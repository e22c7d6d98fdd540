use super::tensor::{debug_check_finite, Scalar, Tensor};
use crate::error::{Error, Result};

/// Argmax routing recorded by [`maxpool2x2`]: for every output element the
/// flat index of the input element that won its window.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoolIndices {
    input_shape: Vec<usize>,
    argmax: Vec<usize>,
}

impl PoolIndices {
    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn argmax(&self) -> &[usize] {
        &self.argmax
    }
}

/// 2x2 max pooling with stride 2.
///
/// Odd heights or widths are handled by replicating the last row/column, so
/// the output is `ceil(H/2) x ceil(W/2)`. Ties go to the first element in
/// row-major window order.
pub fn maxpool2x2<T: Scalar>(input: &Tensor<T>) -> Result<(Tensor<T>, PoolIndices)> {
    let (n, c, h, w) = input.dims4()?;
    let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
    let src = input.data();
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut argmax = Vec::with_capacity(n * c * oh * ow);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            let rows = [2 * oy, (2 * oy + 1).min(h - 1)];
            for ox in 0..ow {
                let cols = [2 * ox, (2 * ox + 1).min(w - 1)];
                let mut best = base + rows[0] * w + cols[0];
                for &y in &rows {
                    for &x in &cols {
                        let idx = base + y * w + x;
                        if src[idx] > src[best] {
                            best = idx;
                        }
                    }
                }
                out.push(src[best]);
                argmax.push(best);
            }
        }
    }
    let out = Tensor::from_parts(vec![n, c, oh, ow], out);
    debug_check_finite("maxpool2x2", &[input], &out)?;
    Ok((out, PoolIndices { input_shape: input.shape().to_vec(), argmax }))
}

/// Routes each output gradient to the input element that won its window.
pub fn maxpool2x2_backward(grad_out: &Tensor, indices: &PoolIndices) -> Result<Tensor> {
    if grad_out.len() != indices.argmax.len() {
        return Err(Error::dim(format!(
            "pool gradient has {} elements, forward produced {}",
            grad_out.len(),
            indices.argmax.len()
        )));
    }
    let mut grad_in = vec![0.0; indices.input_shape.iter().product()];
    for (&idx, &g) in indices.argmax.iter().zip(grad_out.data()) {
        grad_in[idx] += g;
    }
    Ok(Tensor::from_parts(indices.input_shape.clone(), grad_in))
}

/// 2x2 sum pooling with stride 2. Odd extents are zero-padded so the total
/// is preserved. Each output is `((a + b) + c) + d` in row-major window order.
pub fn sumpool2x2(input: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = input.dims4()?;
    let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
    let src = input.data();
    let mut out = Vec::with_capacity(n * c * oh * ow);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0;
                for y in 2 * oy..(2 * oy + 2).min(h) {
                    for x in 2 * ox..(2 * ox + 2).min(w) {
                        acc += src[base + y * w + x];
                    }
                }
                out.push(acc);
            }
        }
    }
    Ok(Tensor::from_parts(vec![n, c, oh, ow], out))
}
