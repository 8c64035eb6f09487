//! Central finite-difference verification of analytic gradients.

use super::Parameterized;
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    /// Finite-difference step `h`.
    pub step: f64,
    /// Maximum allowed relative error per parameter.
    pub tolerance: f64,
    /// Lower bound of the relative-error denominator. Gradients smaller than
    /// this are compared in absolute terms scaled by it.
    pub floor: f64,
    /// Adds a fixed error to the analytic gradient at this flat index.
    pub inject_fault: Option<usize>,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            step: 1e-5,
            tolerance: 1e-4,
            floor: 1e-4,
            inject_fault: None,
        }
    }
}

/// Comparison for a single scalar parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub worst: Option<ParamCheck>,
    pub failures: usize,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }

    pub fn max_rel_error(&self) -> f64 {
        self.worst.as_ref().map_or(0.0, |w| w.rel_error)
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Checks every parameter of `model`.
///
/// `loss` must evaluate the loss at the current parameters and write its
/// analytic gradient into the model's gradient buffers. It is called once
/// for the analytic gradient and twice per parameter afterwards.
pub fn check_gradients<M, F>(model: &mut M, cfg: &GradCheckConfig, mut loss: F) -> Result<GradCheckReport>
where
    M: Parameterized + ?Sized,
    F: FnMut(&mut M) -> Result<f64>,
{
    model.zero_grad();
    loss(model)?;
    let mut analytic = model.grad_vector();
    if let Some(i) = cfg.inject_fault {
        if let Some(g) = analytic.get_mut(i) {
            *g += 1e-2 + g.abs() * 0.1;
        }
    }

    let layout: Vec<(String, usize)> = model
        .params_mut()
        .into_iter()
        .map(|s| (s.name, s.values.len()))
        .collect();

    let mut report = GradCheckReport {
        checked: 0,
        worst: None,
        failures: 0,
    };
    let mut flat = 0;
    for (slot_idx, (name, len)) in layout.iter().enumerate() {
        for j in 0..*len {
            let original = model.params_mut()[slot_idx].values[j];
            model.params_mut()[slot_idx].values[j] = original + cfg.step;
            let plus = loss(model)?;
            model.params_mut()[slot_idx].values[j] = original - cfg.step;
            let minus = loss(model)?;
            model.params_mut()[slot_idx].values[j] = original;

            let numeric = (plus - minus) / (2.0 * cfg.step);
            let a = analytic[flat];
            let rel = relative_error(a, numeric, cfg.floor);
            if !(rel <= cfg.tolerance) {
                report.failures += 1;
            }
            if report.worst.as_ref().is_none_or(|w| rel > w.rel_error || rel.is_nan()) {
                report.worst = Some(ParamCheck {
                    name: name.clone(),
                    index: j,
                    analytic: a,
                    numeric,
                    rel_error: rel,
                });
            }
            report.checked += 1;
            flat += 1;
        }
    }
    // leave the analytic gradient at the unperturbed point in the buffers
    model.zero_grad();
    loss(model)?;
    Ok(report)
}
