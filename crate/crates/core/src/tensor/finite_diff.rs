use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Central-difference gradient `(f(p + h·e_i) − f(p − h·e_i)) / 2h` for every
/// coordinate of `params`.
pub fn finite_diff_gradient<T, F>(mut f: F, params: &Tensor<T>, step: f64) -> Result<Tensor<T>>
where
    T: Scalar,
    F: FnMut(&Tensor<T>) -> Result<f64>,
{
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::invalid(format!("finite-difference step must be > 0, got {step}")));
    }
    let mut probe = params.clone();
    let mut grad = Tensor::zeros(params.shape());
    for i in 0..params.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + T::of(step);
        let up = f(&probe)?;
        probe.data_mut()[i] = orig - T::of(step);
        let down = f(&probe)?;
        probe.data_mut()[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite(format!(
                "objective evaluated at coordinate {i}"
            )));
        }
        grad.data_mut()[i] = T::of((up - down) / (2.0 * step));
    }
    Ok(grad)
}
