//! Bias-corrected Adam.

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// An ordered, named collection of parameter tensors.
///
/// Gradients are carried in the same type so that parameters and gradients
/// line up position by position.
pub trait ParamSet {
    fn tensors(&self) -> Vec<(String, &Tensor)>;
    fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)>;
}

impl ParamSet for Vec<(String, Tensor)> {
    fn tensors(&self) -> Vec<(String, &Tensor)> {
        self.iter().map(|(n, t)| (n.clone(), t)).collect()
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        self.iter_mut().map(|(n, t)| (n.clone(), t)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-4, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

#[derive(Debug, Clone)]
pub struct AdamState {
    step: u64,
    first_moment: Vec<Tensor>,
    second_moment: Vec<Tensor>,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    /// Zero moments shaped like `params`.
    pub fn new(params: &impl ParamSet, config: AdamConfig) -> Self {
        let zeros: Vec<Tensor> = params
            .tensors()
            .into_iter()
            .map(|(_, t)| Tensor::from_parts(t.shape().to_vec(), vec![0.0; t.len()]))
            .collect();
        Self {
            step: 0,
            first_moment: zeros.clone(),
            second_moment: zeros,
            lr: config.lr,
            beta1: config.beta1,
            beta2: config.beta2,
            epsilon: config.epsilon,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self) -> &[Tensor] {
        &self.first_moment
    }

    pub fn second_moment(&self) -> &[Tensor] {
        &self.second_moment
    }
}

/// One Adam update of `params` in place.
///
/// Gradients are validated before anything is written, so a non-finite
/// gradient leaves both parameters and state untouched.
pub fn adam_step<P: ParamSet>(params: &mut P, grads: &P, state: &mut AdamState) -> Result<()> {
    let grads = grads.tensors();
    let mut params = params.tensors_mut();
    if params.len() != grads.len() || params.len() != state.first_moment.len() {
        return Err(Error::dim(format!(
            "adam: {} parameter tensors, {} gradients, {} moment slots",
            params.len(),
            grads.len(),
            state.first_moment.len()
        )));
    }
    for (((name, p), (_, g)), m) in params.iter().zip(&grads).zip(&state.first_moment) {
        if p.shape() != g.shape() || p.shape() != m.shape() {
            return Err(Error::dim(format!(
                "adam: `{name}` has shape {:?}, gradient {:?}, moments {:?}",
                p.shape(),
                g.shape(),
                m.shape()
            )));
        }
        if !g.is_finite() {
            return Err(Error::Training(format!("non-finite gradient in `{name}`")));
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let bias1 = 1.0 - b1.powi(t);
    let bias2 = 1.0 - b2.powi(t);
    for (i, (_, p)) in params.iter_mut().enumerate() {
        let g = grads[i].1.data();
        let m = state.first_moment[i].data_mut();
        let v = state.second_moment[i].data_mut();
        for (((pv, &gv), mv), vv) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mv = b1 * *mv + (1.0 - b1) * gv;
            *vv = b2 * *vv + (1.0 - b2) * gv * gv;
            let m_hat = *mv / bias1;
            let v_hat = *vv / bias2;
            *pv -= state.lr * m_hat / (v_hat.sqrt() + state.epsilon);
        }
    }
    Ok(())
}
