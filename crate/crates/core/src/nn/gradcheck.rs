//! Central finite-difference verification of analytic gradients.

use super::params::{Gradients, ParamStore};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub eps: f64,
    pub tolerance: f64,
    /// Denominator floor of the relative error, so that near-zero gradients
    /// are compared absolutely.
    pub abs_floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            eps: 1e-6,
            tolerance: 1e-4,
            abs_floor: 1e-5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ParamReport {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub params: Vec<ParamReport>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error() < self.tolerance
    }

    pub fn worst(&self) -> Option<&ParamReport> {
        self.params
            .iter()
            .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares `analytic` against `(f(x+eps) - f(x-eps)) / 2eps` for every
/// element of every parameter in `store`.
pub fn grad_check<F>(store: &ParamStore, analytic: &Gradients, opts: GradCheckOptions, mut loss: F) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore) -> Result<f64>,
{
    if !(opts.eps > 0.0) {
        return Err(Error::invalid(format!("grad_check eps must be positive, got {}", opts.eps)));
    }
    if analytic.len() != store.len() {
        return Err(Error::DimensionMismatch {
            context: "grad_check gradients",
            expected: store.len(),
            actual: analytic.len(),
        });
    }
    let base = loss(store)?;
    if !base.is_finite() {
        return Err(Error::NonFinite("grad_check loss".into()));
    }
    let mut work = store.clone();
    let mut params = Vec::with_capacity(store.len());
    for (t, grad) in analytic.iter().enumerate() {
        let mut report = ParamReport {
            name: store.tensors()[t].name.clone(),
            checked: 0,
            max_rel_error: 0.0,
            worst_index: 0,
            worst_analytic: 0.0,
            worst_numeric: 0.0,
        };
        for (k, &a) in grad.iter().enumerate() {
            let orig = work.tensors()[t].values[k];
            work.tensors_mut()[t].values[k] = orig + opts.eps;
            let plus = loss(&work)?;
            work.tensors_mut()[t].values[k] = orig - opts.eps;
            let minus = loss(&work)?;
            work.tensors_mut()[t].values[k] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::NonFinite(format!("grad_check loss at {}[{k}]", report.name)));
            }
            let numeric = (plus - minus) / (2.0 * opts.eps);
            let err = relative_error(a, numeric, opts.abs_floor);
            report.checked += 1;
            if err >= report.max_rel_error {
                report.max_rel_error = err;
                report.worst_index = k;
                report.worst_analytic = a;
                report.worst_numeric = numeric;
            }
        }
        params.push(report);
    }
    Ok(GradCheckReport {
        params,
        tolerance: opts.tolerance,
    })
}
