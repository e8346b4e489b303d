use super::{NetworkParams, ParamGrads};
use crate::error::{Error, Result};
use crate::tensor::{
    batchnorm_backward, batchnorm_forward, conv_backward_batch, conv_forward_batch, relu_backward,
    relu_forward, BatchNormState, BnMode, Scalar, Tensor,
};

/// Activations retained by [`forward_train`] for the backward pass.
#[derive(Debug, Clone)]
pub struct Tape<T> {
    /// `acts[l]` is the input of layer `l`; `acts[depth]` is the network output.
    acts: Vec<Tensor<T>>,
    /// Convolution output of batch-normalized layers (the BN input).
    pre_bn: Vec<Option<Tensor<T>>>,
    /// Batch-norm states after the running-statistics update.
    pub bn_next: Vec<Option<BatchNormState<T>>>,
}

impl<T: Scalar> Tape<T> {
    pub fn output(&self) -> &Tensor<T> {
        self.acts.last().expect("non-empty tape")
    }
}

fn check_batch_input<T: Scalar>(params: &NetworkParams<T>, input: &Tensor<T>) -> Result<()> {
    let v = &params.variant;
    let per_sample = v.input_shape(1, 1);
    let want_rank = per_sample.len() + 1;
    if input.rank() != want_rank {
        return Err(Error::shape(
            format!("{} network input rank", v.label()),
            want_rank,
            input.rank(),
        ));
    }
    // leading non-spatial axes after the batch axis: channels (and window for 3D)
    let fixed = per_sample.len() - 2;
    for axis in 0..fixed {
        if input.shape()[1 + axis] != per_sample[axis] {
            return Err(Error::shape(
                format!("{} network input axis {}", v.label(), 1 + axis),
                per_sample[axis],
                input.shape()[1 + axis],
            ));
        }
    }
    Ok(())
}

fn run<T: Scalar>(
    params: &NetworkParams<T>,
    input: &Tensor<T>,
    mode: BnMode,
    mut keep: Option<&mut Tape<T>>,
) -> Result<Tensor<T>> {
    check_batch_input(params, input)?;
    let mut x = input.clone();
    for layer in &params.layers {
        let mut z = conv_forward_batch(&x, &layer.conv)?;
        let mut next_bn = None;
        if let Some(bn) = &layer.bn {
            let (y, next) = batchnorm_forward(&z, &bn.clone().with_mode(mode))?;
            next_bn = Some(BatchNormState { mode: bn.mode, ..next });
            if let Some(t) = keep.as_deref_mut() {
                t.pre_bn.push(Some(z));
            }
            z = y;
        } else if let Some(t) = keep.as_deref_mut() {
            t.pre_bn.push(None);
        }
        if layer.relu {
            z = relu_forward(&z);
        }
        if let Some(t) = keep.as_deref_mut() {
            t.acts.push(std::mem::replace(&mut x, z));
            t.bn_next.push(next_bn);
        } else {
            x = z;
        }
    }
    if let Some(t) = keep {
        t.acts.push(x.clone());
    }
    Ok(x)
}

/// Batched forward pass `(N, input...) -> (N, residual...)`.
///
/// `mode` selects batch statistics (`Train`) or running statistics
/// (`Infer`) for every batch-norm layer; running statistics are not updated.
pub fn forward_batch<T: Scalar>(
    params: &NetworkParams<T>,
    input: &Tensor<T>,
    mode: BnMode,
) -> Result<Tensor<T>> {
    run(params, input, mode, None)
}

/// Residual estimate R(y; θ) for one sample.
pub fn forward<T: Scalar>(
    params: &NetworkParams<T>,
    input: &Tensor<T>,
    mode: BnMode,
) -> Result<Tensor<T>> {
    let mut shape = vec![1];
    shape.extend_from_slice(input.shape());
    let batched = input.clone().reshape(&shape)?;
    let out = forward_batch(params, &batched, mode)?;
    let out_shape = out.shape()[1..].to_vec();
    out.reshape(&out_shape)
}

/// Forward pass that records what [`backward`] needs.
pub fn forward_train<T: Scalar>(
    params: &NetworkParams<T>,
    input: &Tensor<T>,
    mode: BnMode,
) -> Result<(Tensor<T>, Tape<T>)> {
    let mut tape = Tape {
        acts: Vec::with_capacity(params.depth() + 1),
        pre_bn: Vec::with_capacity(params.depth()),
        bn_next: Vec::with_capacity(params.depth()),
    };
    let out = run(params, input, mode, Some(&mut tape))?;
    Ok((out, tape))
}

/// Gradients of `Σ grad_output ⊙ output` with respect to every trainable
/// tensor. `mode` must be the one used to record `tape`.
pub fn backward<T: Scalar>(
    params: &NetworkParams<T>,
    tape: &Tape<T>,
    grad_output: &Tensor<T>,
    mode: BnMode,
) -> Result<ParamGrads<T>> {
    tape.output().check_same_shape(grad_output, "output gradient")?;
    let mut per_layer = Vec::with_capacity(params.depth());
    let mut g = grad_output.clone();
    for (l, layer) in params.layers.iter().enumerate().rev() {
        if layer.relu {
            // relu(a) > 0 exactly where a > 0, so the layer output serves as the mask
            g = relu_backward(&tape.acts[l + 1], &g)?;
        }
        let mut bn_grads = None;
        if let (Some(bn), Some(z)) = (&layer.bn, &tape.pre_bn[l]) {
            let bg = batchnorm_backward(z, &bn.clone().with_mode(mode), &g)?;
            g = bg.input;
            bn_grads = Some((bg.gamma, bg.beta));
        }
        let cg = conv_backward_batch(&tape.acts[l], &layer.conv, &g, l > 0)?;
        if let Some(gin) = cg.input {
            g = gin;
        }
        per_layer.push((cg.weights, cg.bias, bn_grads));
    }
    let mut flat = Vec::new();
    for (w, b, bn) in per_layer.into_iter().rev() {
        flat.push(w);
        flat.push(b);
        if let Some((gamma, beta)) = bn {
            flat.push(gamma);
            flat.push(beta);
        }
    }
    Ok(ParamGrads(flat))
}

/// x̂ = y − R(y; θ).
pub fn reconstruct<T: Scalar>(y: &Tensor<T>, residual: &Tensor<T>) -> Result<Tensor<T>> {
    y.sub(residual)
}
