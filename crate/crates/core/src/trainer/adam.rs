use super::TrainingConfig;
use crate::error::{Error, Result};
use crate::network::{NetworkParams, ParamGrads};
use crate::tensor::{Scalar, Tensor};

/// First and second moment estimates for every trainable tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub first_moment: Vec<Tensor<T>>,
    pub second_moment: Vec<Tensor<T>>,
    pub step_count: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn for_shapes<'a>(tensors: impl IntoIterator<Item = &'a Tensor<T>>) -> Self {
        let first_moment: Vec<_> = tensors.into_iter().map(|t| Tensor::zeros(t.shape())).collect();
        AdamState {
            second_moment: first_moment.clone(),
            first_moment,
            step_count: 0,
        }
    }

    pub fn new(params: &NetworkParams<T>) -> Self {
        Self::for_shapes(params.trainable())
    }
}

/// Adam update on an arbitrary list of tensors. `names` label the tensors
/// in error messages. Nothing is modified if any gradient is non-finite.
pub fn adam_update<T: Scalar>(
    params: &mut [&mut Tensor<T>],
    grads: &[Tensor<T>],
    names: &[String],
    state: &mut AdamState<T>,
    config: &TrainingConfig,
) -> Result<()> {
    if grads.len() != params.len() || state.first_moment.len() != params.len() {
        return Err(Error::shape("adam tensor count", params.len(), grads.len()));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        p.check_same_shape(g, "adam gradient")?;
        if !g.all_finite() {
            let name = names.get(i).cloned().unwrap_or_else(|| format!("tensor {i}"));
            return Err(Error::NonFinite(format!("gradient of {name}")));
        }
    }
    state.step_count += 1;
    let t = state.step_count as i32;
    let (b1, b2) = (config.adam_beta1, config.adam_beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let (tb1, tb2) = (T::of(b1), T::of(b2));
    let (ob1, ob2) = (T::of(1.0 - b1), T::of(1.0 - b2));
    let (lr, eps) = (T::of(config.learning_rate), T::of(config.adam_epsilon));
    let (c1, c2) = (T::of(c1), T::of(c2));
    for (((p, g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(&mut state.first_moment)
        .zip(&mut state.second_moment)
    {
        for (((pi, &gi), mi), vi) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *mi = tb1 * *mi + ob1 * gi;
            *vi = tb2 * *vi + ob2 * gi * gi;
            let m_hat = *mi / c1;
            let v_hat = *vi / c2;
            *pi = *pi - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// One Adam step on every trainable tensor of `params`.
pub fn adam_step<T: Scalar>(
    params: &mut NetworkParams<T>,
    grads: &ParamGrads<T>,
    state: &mut AdamState<T>,
    config: &TrainingConfig,
) -> Result<()> {
    let names = params.trainable_names();
    let mut tensors = params.trainable_mut();
    adam_update(&mut tensors, &grads.0, &names, state, config)
}
