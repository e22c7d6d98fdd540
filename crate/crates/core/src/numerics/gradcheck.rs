//! Central finite-difference gradient checking.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adam::ParamSet;
use crate::error::Result;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    /// Number of parameter coordinates probed (all of them if there are fewer).
    pub samples: usize,
    pub step: f64,
    pub seed: u64,
    /// Denominator floor for the relative error, so coordinates whose true
    /// gradient is zero are compared absolutely.
    pub abs_floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { samples: 200, step: 1e-5, seed: 0, abs_floor: 1e-8 }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Tensor name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
    pub coordinates_checked: usize,
}

impl GradCheckReport {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.max_relative_error < tolerance
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares `analytic` against central differences of `loss` around `params`.
pub fn check_gradients<P, F>(params: &P, analytic: &P, loss: F, opts: GradCheckOptions) -> Result<GradCheckReport>
where
    P: ParamSet + Clone,
    F: Fn(&P) -> Result<f64>,
{
    let sizes: Vec<(String, usize)> = params.tensors().into_iter().map(|(n, t)| (n, t.len())).collect();
    let total: usize = sizes.iter().map(|(_, s)| s).sum();
    let picks: Vec<usize> = if total <= opts.samples {
        (0..total).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let mut v = rand::seq::index::sample(&mut rng, total, opts.samples).into_vec();
        v.sort_unstable();
        v
    };

    let grads: Vec<Vec<f64>> = analytic.tensors().into_iter().map(|(_, t)| t.data().to_vec()).collect();
    let mut probe = params.clone();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: None,
        analytic_at_worst: 0.0,
        numeric_at_worst: 0.0,
        coordinates_checked: picks.len(),
    };

    for flat in picks {
        let (tensor_idx, offset) = locate(&sizes, flat);
        let original = probe.tensors()[tensor_idx].1.data()[offset];
        let set = |p: &mut P, v: f64| p.tensors_mut()[tensor_idx].1.data_mut()[offset] = v;

        set(&mut probe, original + opts.step);
        let plus = loss(&probe)?;
        set(&mut probe, original - opts.step);
        let minus = loss(&probe)?;
        set(&mut probe, original);

        let numeric = (plus - minus) / (2.0 * opts.step);
        let a = grads[tensor_idx][offset];
        let err = relative_error(a, numeric, opts.abs_floor);
        if report.worst.is_none() || err > report.max_relative_error {
            report.max_relative_error = err;
            report.worst = Some((sizes[tensor_idx].0.clone(), offset));
            report.analytic_at_worst = a;
            report.numeric_at_worst = numeric;
        }
    }
    Ok(report)
}

fn locate(sizes: &[(String, usize)], mut flat: usize) -> (usize, usize) {
    for (i, (_, s)) in sizes.iter().enumerate() {
        if flat < *s {
            return (i, flat);
        }
        flat -= s;
    }
    unreachable!("coordinate beyond parameter count")
}
