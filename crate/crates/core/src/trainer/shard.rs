use rayon::prelude::*;

use super::loss::loss_and_grad;
use crate::error::{Error, Result};
use crate::network::{backward, forward_train, NetworkParams, ParamGrads};
use crate::tensor::{BatchNormState, BnMode, Scalar, Tensor};

/// Result of one sharded gradient evaluation.
#[derive(Debug, Clone)]
pub struct ShardOutcome<T> {
    /// Mean of the per-shard gradients.
    pub grads: ParamGrads<T>,
    /// Mean of the per-shard losses.
    pub loss: f64,
    /// Per-layer batch-norm states with running statistics averaged over
    /// shards; `None` entries for layers without batch norm. Empty when
    /// `mode` is [`BnMode::Infer`].
    pub bn_states: Vec<Option<BatchNormState<T>>>,
}

fn rows<T: Scalar>(t: &Tensor<T>, start: usize, count: usize) -> Result<Tensor<T>> {
    let per = t.len() / t.shape()[0];
    let mut shape = t.shape().to_vec();
    shape[0] = count;
    Tensor::new(shape, t.data()[start * per..(start + count) * per].to_vec())
}

/// Splits the batch into `shards` contiguous equal sub-batches, computes
/// each shard's loss gradient with its own `N/K` normalization, and averages
/// the results in shard order.
///
/// `inputs` and `targets` are network-shaped: `(N, input...)` and
/// `(N, output...)`.
pub fn shard_gradients<T: Scalar>(
    params: &NetworkParams<T>,
    inputs: &Tensor<T>,
    targets: &Tensor<T>,
    shards: usize,
    mode: BnMode,
) -> Result<ShardOutcome<T>> {
    let n = inputs.shape().first().copied().unwrap_or(0);
    if n == 0 {
        return Err(Error::invalid("empty batch"));
    }
    if targets.shape().first() != Some(&n) {
        return Err(Error::shape("target batch", n, targets.shape().first().copied().unwrap_or(0)));
    }
    if shards == 0 || n % shards != 0 {
        return Err(Error::invalid(format!("batch of {n} does not split into {shards} equal shards")));
    }
    let m = n / shards;
    let parts: Vec<(f64, ParamGrads<T>, Vec<Option<BatchNormState<T>>>)> = (0..shards)
        .into_par_iter()
        .map(|k| {
            let x = rows(inputs, k * m, m)?;
            let v = rows(targets, k * m, m)?;
            let (out, tape) = forward_train(params, &x, mode)?;
            let (l, g) = loss_and_grad(&out, &v)?;
            let grads = backward(params, &tape, &g, mode)?;
            Ok((l, grads, tape.bn_next))
        })
        .collect::<Result<_>>()?;

    let inv = T::of(1.0 / shards as f64);
    let mut iter = parts.into_iter();
    let (mut loss, mut grads, mut bn) = iter.next().expect("at least one shard");
    for (l, g, b) in iter {
        loss += l;
        grads.add_assign(&g)?;
        for (acc, s) in bn.iter_mut().zip(b) {
            if let (Some(acc), Some(s)) = (acc.as_mut(), s) {
                acc.running_mean.add_assign(&s.running_mean)?;
                acc.running_var.add_assign(&s.running_var)?;
            }
        }
    }
    grads.scale(inv);
    for st in bn.iter_mut().flatten() {
        st.running_mean = st.running_mean.scale(inv);
        st.running_var = st.running_var.scale(inv);
    }
    if mode == BnMode::Infer {
        bn.clear();
    }
    Ok(ShardOutcome {
        grads,
        loss: loss / shards as f64,
        bn_states: bn,
    })
}
