//! Central finite-difference verification of tape gradients (64-bit only).

use super::{Tape, Tensor, Var};
use crate::error::Result;

pub const DEFAULT_FD_STEP: f64 = 1e-5;

/// Errors above this trigger a retry with smaller steps before a coordinate
/// is scored. Piecewise-linear ops (ReLU) put kinks within reach of a
/// finite step; a wrong backward rule disagrees at every step size.
const REFINE_ABOVE: f64 = 1e-7;
const REFINEMENTS: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// max over coordinates of |analytic − numeric| / max(1, |numeric|).
    pub max_rel_error: f64,
    pub worst_coordinate: Option<usize>,
    pub coordinates: usize,
    /// Coordinates whose first step disagreed and were re-measured.
    pub refined: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }

    pub fn merge(&mut self, other: &GradCheckReport) {
        if other.max_rel_error > self.max_rel_error || other.max_rel_error.is_nan() {
            self.max_rel_error = other.max_rel_error;
            self.worst_coordinate = other.worst_coordinate;
        }
        self.coordinates += other.coordinates;
        self.refined += other.refined;
    }

    pub fn empty() -> Self {
        Self {
            max_rel_error: 0.0,
            worst_coordinate: None,
            coordinates: 0,
            refined: 0,
        }
    }
}

fn rel_error(analytic: f64, numeric: f64) -> f64 {
    let e = (analytic - numeric).abs() / numeric.abs().max(1.0);
    if e.is_nan() {
        f64::INFINITY
    } else {
        e
    }
}

/// Compares a supplied gradient of `eval` at `x` with central differences
/// over the listed coordinates.
pub fn compare_gradients(
    x: &Tensor<f64>,
    analytic: &Tensor<f64>,
    eps: f64,
    coordinates: impl IntoIterator<Item = usize>,
    mut eval: impl FnMut(&Tensor<f64>) -> Result<f64>,
) -> Result<GradCheckReport> {
    let mut report = GradCheckReport::empty();
    let mut probe = x.clone();
    for k in coordinates {
        let base = x.data()[k];
        let mut central = |step: f64| -> Result<f64> {
            probe.data_mut()[k] = base + step;
            let up = eval(&probe)?;
            probe.data_mut()[k] = base - step;
            let down = eval(&probe)?;
            probe.data_mut()[k] = base;
            Ok((up - down) / (2.0 * step))
        };
        let a = analytic.data()[k];
        let mut err = rel_error(a, central(eps)?);
        if err > REFINE_ABOVE {
            report.refined += 1;
            let mut step = eps;
            for _ in 0..REFINEMENTS {
                step /= 10.0;
                err = err.min(rel_error(a, central(step)?));
            }
        }
        report.coordinates += 1;
        if err > report.max_rel_error || err.is_nan() {
            report.max_rel_error = err;
            report.worst_coordinate = Some(k);
        }
    }
    Ok(report)
}

/// Checks the tape gradient of a tensor-to-scalar function against central
/// differences over every coordinate of `x`.
///
/// `f` receives a fresh tape with `x` recorded as a leaf and must return a
/// scalar on that tape.
pub fn finite_diff_check<F>(x: &Tensor<f64>, eps: f64, mut f: F) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape<f64>, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let leaf = tape.leaf(x.clone(), true);
    let out = f(&mut tape, leaf)?;
    tape.backward(out)?;
    let analytic = tape.grad(leaf).unwrap_or_else(|| Tensor::zeros(x.shape()));
    compare_gradients(x, &analytic, eps, 0..x.len(), |probe| {
        let mut tape = Tape::new();
        let leaf = tape.leaf(probe.clone(), false);
        let out = f(&mut tape, leaf)?;
        Ok(tape.value(out).data()[0])
    })
}
