use super::{GradientMap, ParamStore};
use crate::error::{Error, Result};

/// Central-difference estimate of the gradient of `f` at `params`.
///
/// Each coordinate is perturbed by `±step` on a private copy of the store;
/// `params` itself is never modified.
pub fn finite_difference_gradient<F>(
    mut f: F,
    params: &ParamStore,
    step: f64,
) -> Result<GradientMap>
where
    F: FnMut(&ParamStore) -> Result<f64>,
{
    if step.is_nan() || step <= 0.0 {
        return Err(Error::contract(format!(
            "step must be positive, got {step}"
        )));
    }
    let mut grads = GradientMap::zeros_like(params);
    let mut work = params.clone();
    for id in params.ids() {
        for i in 0..params.get(id).len() {
            let orig = params.get(id).data()[i];
            work.get_mut(id).data_mut()[i] = orig + step;
            let plus = f(&work)?;
            work.get_mut(id).data_mut()[i] = orig - step;
            let minus = f(&work)?;
            work.get_mut(id).data_mut()[i] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::numerical(
                    format!("finite difference on {}[{i}]", params.name(id)),
                    "objective returned a non-finite value",
                ));
            }
            grads.get_mut(id).data_mut()[i] = (plus - minus) / (2.0 * step);
        }
    }
    Ok(grads)
}
