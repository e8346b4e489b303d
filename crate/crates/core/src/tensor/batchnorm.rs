use super::{Scalar, Tensor};
use crate::error::{Error, Result};

pub const BN_DEFAULT_EPSILON: f64 = 1e-5;
pub const BN_DEFAULT_MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    /// Normalize by batch statistics and update the running averages.
    Train,
    /// Normalize by running statistics only; an affine map of the input.
    Infer,
}

/// Per-channel batch normalization parameters and running statistics.
///
/// `momentum` is the weight kept on the previous running value:
/// `running = momentum * running + (1 - momentum) * batch`.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormState<T> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub momentum: f64,
    pub epsilon: f64,
    pub mode: BnMode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormGrads<T> {
    pub input: Tensor<T>,
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
}

impl<T: Scalar> BatchNormState<T> {
    pub fn new(channels: usize) -> Self {
        BatchNormState {
            gamma: Tensor::full(&[channels], T::one()),
            beta: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], T::one()),
            momentum: BN_DEFAULT_MOMENTUM,
            epsilon: BN_DEFAULT_EPSILON,
            mode: BnMode::Train,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn with_mode(mut self, mode: BnMode) -> Self {
        self.mode = mode;
        self
    }
}

struct Layout {
    batch: usize,
    channels: usize,
    points: usize,
}

fn layout<T: Scalar>(input: &Tensor<T>, state: &BatchNormState<T>) -> Result<Layout> {
    if input.rank() < 2 {
        return Err(Error::invalid(format!(
            "batch norm input must be (N, C, spatial...), got rank {}",
            input.rank()
        )));
    }
    let batch = input.shape()[0];
    if batch == 0 {
        return Err(Error::invalid("batch norm on an empty batch"));
    }
    let channels = input.shape()[1];
    if channels != state.channels() {
        return Err(Error::shape("input axis 1 (channels)", state.channels(), channels));
    }
    for (name, t) in [
        ("beta", &state.beta),
        ("running_mean", &state.running_mean),
        ("running_var", &state.running_var),
    ] {
        if t.len() != channels {
            return Err(Error::shape(format!("batch norm {name} length"), channels, t.len()));
        }
    }
    Ok(Layout {
        batch,
        channels,
        points: input.shape()[2..].iter().product(),
    })
}

/// Per-channel (mean, biased variance) over batch and spatial axes.
fn moments<T: Scalar>(input: &Tensor<T>, l: &Layout) -> Vec<(f64, f64)> {
    let x = input.data();
    let count = (l.batch * l.points) as f64;
    (0..l.channels)
        .map(|c| {
            let rows = (0..l.batch).map(|n| {
                let o = (n * l.channels + c) * l.points;
                &x[o..o + l.points]
            });
            let sum: f64 = rows.clone().flatten().map(|v| v.as_f64()).sum();
            let mean = sum / count;
            let ss: f64 = rows
                .flatten()
                .map(|v| {
                    let d = v.as_f64() - mean;
                    d * d
                })
                .sum();
            (mean, ss / count)
        })
        .collect()
}

/// Per-channel (shift, inverse std) used to form x̂ = (x − shift) · inv_std.
fn normalizer<T: Scalar>(
    input: &Tensor<T>,
    state: &BatchNormState<T>,
    l: &Layout,
) -> (Vec<(f64, f64)>, Vec<(f64, f64)>) {
    match state.mode {
        BnMode::Train => {
            let m = moments(input, l);
            let norm = m
                .iter()
                .map(|&(mean, var)| (mean, 1.0 / (var.max(0.0) + state.epsilon).sqrt()))
                .collect();
            (norm, m)
        }
        BnMode::Infer => {
            let norm = (0..l.channels)
                .map(|c| {
                    let var = state.running_var.data()[c].as_f64().max(0.0);
                    (
                        state.running_mean.data()[c].as_f64(),
                        1.0 / (var + state.epsilon).sqrt(),
                    )
                })
                .collect();
            (norm, Vec::new())
        }
    }
}

/// Returns the normalized output and the successor state (running statistics
/// advanced in train mode, unchanged in infer mode).
pub fn batchnorm_forward<T: Scalar>(
    input: &Tensor<T>,
    state: &BatchNormState<T>,
) -> Result<(Tensor<T>, BatchNormState<T>)> {
    let l = layout(input, state)?;
    let (norm, batch_moments) = normalizer(input, state, &l);
    let mut out = Tensor::zeros(input.shape());
    {
        let x = input.data();
        let y = out.data_mut();
        for n in 0..l.batch {
            for (c, &(shift, inv)) in norm.iter().enumerate() {
                let g = state.gamma.data()[c].as_f64();
                let b = state.beta.data()[c].as_f64();
                let o = (n * l.channels + c) * l.points;
                for (dst, &src) in y[o..o + l.points].iter_mut().zip(&x[o..o + l.points]) {
                    *dst = T::of(g * (src.as_f64() - shift) * inv + b);
                }
            }
        }
    }
    let mut next = state.clone();
    if state.mode == BnMode::Train {
        let m = state.momentum;
        for (c, &(mean, var)) in batch_moments.iter().enumerate() {
            let rm = &mut next.running_mean.data_mut()[c];
            *rm = T::of(m * rm.as_f64() + (1.0 - m) * mean);
            let rv = &mut next.running_var.data_mut()[c];
            *rv = T::of((m * rv.as_f64() + (1.0 - m) * var).max(0.0));
        }
    }
    Ok((out, next))
}

/// Exact gradients of [`batchnorm_forward`] in the state's mode.
pub fn batchnorm_backward<T: Scalar>(
    input: &Tensor<T>,
    state: &BatchNormState<T>,
    upstream: &Tensor<T>,
) -> Result<BatchNormGrads<T>> {
    let l = layout(input, state)?;
    input.check_same_shape(upstream, "upstream")?;
    let (norm, _) = normalizer(input, state, &l);
    let x = input.data();
    let u = upstream.data();
    let count = (l.batch * l.points) as f64;
    let mut gin = Tensor::zeros(input.shape());
    let mut ggamma = Tensor::zeros(&[l.channels]);
    let mut gbeta = Tensor::zeros(&[l.channels]);
    for (c, &(shift, inv)) in norm.iter().enumerate() {
        let gamma = state.gamma.data()[c].as_f64();
        let (mut sum_u, mut sum_u_xhat) = (0.0, 0.0);
        for n in 0..l.batch {
            let o = (n * l.channels + c) * l.points;
            for i in o..o + l.points {
                let xhat = (x[i].as_f64() - shift) * inv;
                sum_u += u[i].as_f64();
                sum_u_xhat += u[i].as_f64() * xhat;
            }
        }
        ggamma.data_mut()[c] = T::of(sum_u_xhat);
        gbeta.data_mut()[c] = T::of(sum_u);
        let g = gin.data_mut();
        for n in 0..l.batch {
            let o = (n * l.channels + c) * l.points;
            for i in o..o + l.points {
                let d = match state.mode {
                    BnMode::Infer => u[i].as_f64() * gamma * inv,
                    BnMode::Train => {
                        let xhat = (x[i].as_f64() - shift) * inv;
                        gamma * inv * (u[i].as_f64() - sum_u / count - xhat * sum_u_xhat / count)
                    }
                };
                g[i] = T::of(d);
            }
        }
    }
    Ok(BatchNormGrads {
        input: gin,
        gamma: ggamma,
        beta: gbeta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::finite_diff_gradient;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_state(rng: &mut ChaCha8Rng, c: usize) -> BatchNormState<f64> {
        let mut s = BatchNormState::new(c);
        s.gamma = Tensor::randn(&[c], 1.0, rng);
        s.beta = Tensor::randn(&[c], 1.0, rng);
        s.running_mean = Tensor::randn(&[c], 1.0, rng);
        s.running_var = Tensor::randn(&[c], 1.0, rng).map(|v| v * v + 0.1);
        s
    }

    #[test]
    fn standardized_input_passes_through() {
        // per channel: values ±1 -> mean 0, biased variance 1
        let x = Tensor::<f64>::from_fn(&[2, 3, 2], |i| if i % 2 == 0 { 1.0 } else { -1.0 });
        let (y, _) = batchnorm_forward(&x, &BatchNormState::new(3)).unwrap();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn zero_gamma_yields_beta() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut s = random_state(&mut rng, 2);
        s.gamma = Tensor::zeros(&[2]);
        let x = Tensor::randn(&[3, 2, 4], 1.0, &mut rng);
        let (y, _) = batchnorm_forward(&x, &s).unwrap();
        for n in 0..3 {
            for c in 0..2 {
                let o = (n * 2 + c) * 4;
                assert!(y.data()[o..o + 4].iter().all(|&v| v == s.beta.data()[c]));
            }
        }
    }

    #[test]
    fn train_mode_standardizes_each_channel() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Tensor::<f64>::randn(&[5, 3, 6], 3.0, &mut rng).map(|v| v + 7.0);
        let (y, next) = batchnorm_forward(&x, &BatchNormState::new(3)).unwrap();
        for c in 0..3 {
            let vals: Vec<f64> = (0..5)
                .flat_map(|n| y.data()[(n * 3 + c) * 6..(n * 3 + c + 1) * 6].to_vec())
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() < 1e-5);
            assert!((var - 1.0).abs() < 1e-3);
        }
        // running mean moved 10% of the way toward the batch mean (~7)
        assert!(next.running_mean.data().iter().all(|&m| m > 0.3 && m < 1.1));
        assert!(next.running_var.data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn infer_mode_is_batch_independent() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let s = random_state(&mut rng, 2).with_mode(BnMode::Infer);
        let a = Tensor::randn(&[1, 2, 5], 1.0, &mut rng);
        let b = Tensor::randn(&[1, 2, 5], 4.0, &mut rng);
        let (ya, sa) = batchnorm_forward(&a, &s).unwrap();
        let ab = Tensor::stack(&[
            &Tensor::new(vec![2, 5], b.data().to_vec()).unwrap(),
            &Tensor::new(vec![2, 5], a.data().to_vec()).unwrap(),
        ])
        .unwrap();
        let (yab, _) = batchnorm_forward(&ab, &s).unwrap();
        assert_eq!(ya.data(), yab.outer(1));
        assert_eq!(sa, s);
    }

    #[test]
    fn backward_linearity_and_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let s = random_state(&mut rng, 3);
        let x = Tensor::randn(&[4, 3, 5], 1.0, &mut rng);
        let g = batchnorm_backward(&x, &s, &Tensor::zeros(x.shape())).unwrap();
        assert!(g.input.data().iter().chain(g.gamma.data()).chain(g.beta.data()).all(|&v| v == 0.0));

        let u = Tensor::randn(x.shape(), 1.0, &mut rng);
        let g = batchnorm_backward(&x, &s, &u).unwrap();
        for c in 0..3 {
            let want: f64 = (0..4).flat_map(|n| u.data()[(n * 3 + c) * 5..(n * 3 + c + 1) * 5].to_vec()).sum();
            assert!((g.beta.data()[c] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_matches_finite_differences_both_modes() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for mode in [BnMode::Train, BnMode::Infer] {
            let s = random_state(&mut rng, 2).with_mode(mode);
            let x = Tensor::randn(&[3, 2, 4], 1.0, &mut rng);
            let u = Tensor::randn(x.shape(), 1.0, &mut rng);
            let obj = |x: &Tensor<f64>, s: &BatchNormState<f64>| -> Result<f64> {
                let (y, _) = batchnorm_forward(x, s)?;
                Ok(y.data().iter().zip(u.data()).map(|(a, b)| a * b).sum())
            };
            let g = batchnorm_backward(&x, &s, &u).unwrap();
            let fx = finite_diff_gradient(|p| obj(p, &s), &x, 1e-5).unwrap();
            let fg = finite_diff_gradient(
                |p| {
                    let mut t = s.clone();
                    t.gamma = p.clone();
                    obj(&x, &t)
                },
                &s.gamma,
                1e-5,
            )
            .unwrap();
            for (a, b) in g.input.data().iter().zip(fx.data()).chain(g.gamma.data().iter().zip(fg.data())) {
                assert!((a - b).abs() <= 1e-4 * b.abs().max(1e-3), "{mode:?}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn rejects_wrong_channel_count() {
        let x = Tensor::<f32>::zeros(&[2, 3, 4]);
        assert!(batchnorm_forward(&x, &BatchNormState::new(2)).is_err());
    }
}
