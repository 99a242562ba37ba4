//! Central finite-difference verification of analytic gradients.

use super::{Graph, ParamStore};
use crate::error::Result;
use crate::tensor::Tensor4;

/// Worst element-wise discrepancy for one parameter.
#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub name: String,
    pub elements: usize,
    /// `max_i |analytic_i - numeric_i| / max(|analytic_i|, |numeric_i|, floor)`.
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub passed: bool,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub step: f64,
    pub tolerance: f64,
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.passed)
    }

    pub fn worst(&self) -> f64 {
        self.params.iter().fold(0.0, |m, p| m.max(p.max_rel_error))
    }

    pub fn failures(&self) -> impl Iterator<Item = &ParamCheck> {
        self.params.iter().filter(|p| !p.passed)
    }
}

/// Denominator floor for the relative error: gradients smaller than this
/// are compared in absolute terms.
const REL_FLOOR: f64 = 1e-6;

/// Compare `backward` against central differences with step `step` for every
/// element of every trainable parameter the graph reads. Frozen parameters
/// are left out of the report.
pub fn grad_check(
    graph: &Graph,
    params: &ParamStore,
    inputs: &[(&str, &Tensor4)],
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport> {
    let analytic = graph.forward(params, inputs)?.backward()?;
    let mut work = params.clone();
    let mut report = GradCheckReport {
        step,
        tolerance,
        params: Vec::new(),
    };

    for name in graph.parameter_names() {
        let Some(grad) = analytic.get(name) else {
            continue;
        };
        let n = grad.len();
        let mut max_rel: f64 = 0.0;
        let mut max_abs: f64 = 0.0;
        for idx in 0..n {
            let original = work.tensor(name)?.data()[idx];
            work.tensor_mut(name)?.data_mut()[idx] = original + step;
            let plus = graph.forward(&work, inputs)?.scalar()?;
            work.tensor_mut(name)?.data_mut()[idx] = original - step;
            let minus = graph.forward(&work, inputs)?.scalar()?;
            work.tensor_mut(name)?.data_mut()[idx] = original;

            let numeric = (plus - minus) / (2.0 * step);
            let a = grad.data()[idx];
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(REL_FLOOR);
            max_abs = max_abs.max(abs);
            max_rel = max_rel.max(rel);
        }
        report.params.push(ParamCheck {
            name: name.to_string(),
            elements: n,
            max_rel_error: max_rel,
            max_abs_error: max_abs,
            passed: max_rel <= tolerance,
        });
    }
    Ok(report)
}
