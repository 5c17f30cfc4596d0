//! Central finite-difference verification of the analytic gradient.

use rand::Rng;
use serde::Serialize;

use super::scorer::{Batch, Scorer};

/// Denominator floor for the relative error, so that coordinates whose true
/// gradient is essentially zero are compared in absolute terms.
pub const REL_FLOOR: f64 = 1e-6;
pub const FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coords {
    /// Every parameter.
    All,
    /// This many randomly chosen coordinates per tensor (all of a tensor
    /// when it is smaller).
    PerTensor(usize),
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_tensor: String,
    pub worst_index: usize,
    pub checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares analytic and central-difference gradients of the mean BCE loss
/// over `batch` at double precision.
pub fn gradient_check<R: Rng + ?Sized>(
    model: &Scorer<f64>,
    batch: &Batch<f64>,
    labels: &[f64],
    coords: Coords,
    rng: &mut R,
) -> GradCheckReport {
    let mut grad = vec![0.0; model.param_count()];
    model.loss_and_grad(batch, labels, &mut grad);
    let layout = model.layout().clone();
    let mut probe = model.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_tensor: String::new(),
        worst_index: 0,
        checked: 0,
    };
    for t in 0..layout.tensor_count() {
        let range = layout.range(t);
        let picks: Vec<usize> = match coords {
            Coords::All => range.clone().collect(),
            Coords::PerTensor(k) if k >= range.len() => range.clone().collect(),
            Coords::PerTensor(k) => (0..k).map(|_| rng.random_range(range.clone())).collect(),
        };
        for i in picks {
            let orig = probe.params()[i];
            probe.params_mut()[i] = orig + FD_STEP;
            let up = probe.loss(batch, labels);
            probe.params_mut()[i] = orig - FD_STEP;
            let down = probe.loss(batch, labels);
            probe.params_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let err = relative_error(grad[i], numeric);
            report.checked += 1;
            if report.checked == 1 || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst_tensor = layout.name(t).to_string();
                report.worst_index = i - range.start;
            }
        }
    }
    report
}
