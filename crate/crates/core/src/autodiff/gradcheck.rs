//! Central finite-difference verification of backward gradients.

use super::params::ParameterSet;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Compare analytic gradients against central finite differences.
///
/// `f` must rebuild the computation from the current parameter values,
/// run backward, write gradients into the set via `set_grad` /
/// `accumulate_grad`, and return the scalar loss. It must be
/// deterministic (dropout disabled).
///
/// Returns the maximum over all coordinates of
/// |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
pub fn grad_check<F>(params: &mut ParameterSet, epsilon: f64, mut f: F) -> Result<f64>
where
    F: FnMut(&mut ParameterSet) -> Result<f64>,
{
    assert!(epsilon > 0.0);
    let base = f(params)?;
    if !base.is_finite() {
        return Err(Error::NonFinite(format!("loss value {base}")));
    }
    let names: Vec<String> = params.names().to_vec();
    let analytic: Vec<Tensor> = names.iter().map(|n| params.grad(n).clone()).collect();

    let mut max_rel = 0.0f64;
    for (name, grad) in names.iter().zip(&analytic) {
        for i in 0..grad.len() {
            let orig = params.value(name).data()[i];
            params.value_mut(name).data_mut()[i] = orig + epsilon;
            let plus = f(params)?;
            params.value_mut(name).data_mut()[i] = orig - epsilon;
            let minus = f(params)?;
            params.value_mut(name).data_mut()[i] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::NonFinite(format!(
                    "finite-difference probe of {name}[{i}]"
                )));
            }
            let numeric = (plus - minus) / (2.0 * epsilon);
            let a = grad.data()[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            if rel > max_rel {
                max_rel = rel;
            }
        }
    }
    Ok(max_rel)
}
