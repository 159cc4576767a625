//! Central-finite-difference verification of analytic gradients.

use std::collections::BTreeMap;

use crate::params::ParamSet;
use crate::tensor::{Tensor, TensorError};

/// Compare analytic gradients against central differences of `f`.
///
/// `f` evaluates the scalar loss at a parameter set; `analytic` produces the
/// gradients at the base point (typically one tape backward pass). Returns
/// the max over all parameter elements of
/// |analytic - numeric| / max(|analytic|, |numeric|, 1e-12).
pub fn gradient_check<F, G>(
    f: F,
    analytic: G,
    params: &ParamSet,
    epsilon: f64,
) -> Result<f64, TensorError>
where
    F: Fn(&ParamSet) -> Result<f64, TensorError>,
    G: Fn(&ParamSet) -> Result<BTreeMap<String, Tensor>, TensorError>,
{
    let grads = analytic(params)?;
    let mut max_rel = 0.0_f64;
    for (name, base) in params.iter() {
        let grad = grads
            .get(name)
            .ok_or_else(|| TensorError::Contract(format!("no analytic gradient for {name:?}")))?;
        for i in 0..base.numel() {
            let perturb = |delta: f64| -> Result<f64, TensorError> {
                let mut data = base.data().to_vec();
                data[i] += delta;
                let mut probe = params.clone();
                probe.set(name, Tensor::new(base.shape().to_vec(), data)?)?;
                let v = f(&probe)?;
                if !v.is_finite() {
                    return Err(TensorError::NonFinite {
                        context: format!("gradient_check at {name:?}[{i}]"),
                        index: i,
                    });
                }
                Ok(v)
            };
            let plus = perturb(epsilon)?;
            let minus = perturb(-epsilon)?;
            let numeric = (plus - minus) / (2.0 * epsilon);
            let a = grad.data()[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-12);
            if rel > max_rel {
                max_rel = rel;
            }
        }
    }
    Ok(max_rel)
}
