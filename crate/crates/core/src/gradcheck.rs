//! Finite-difference validation of every backward pass, run in f64.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::network::{backward, build_network, forward_batch, forward_train, NetworkParams, NetworkVariant};
use crate::tensor::{
    batchnorm_backward, batchnorm_forward, conv_backward, conv_forward, finite_diff_gradient,
    relu_backward, relu_forward, BatchNormState, BnMode, ConvKernel, Tensor,
};
use crate::trainer::{loss, loss_and_grad};

pub const GRADCHECK_STEP: f64 = 1e-5;
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
/// Denominator floor for the relative error, per unit of objective value.
///
/// A central difference of `f` carries round-off of order `ε·|f| / h`, so
/// components whose true gradient is (near) zero, such as a bias feeding
/// straight into batch norm, are judged by absolute error against
/// `TOLERANCE · FLOOR · max(1, |f|)`.
pub const RELATIVE_FLOOR: f64 = 1e-4;

/// `|a − n| / max(|a|, |n|, RELATIVE_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    relative_error_scaled(analytic, numeric, 1.0)
}

/// Relative error with the floor scaled by the objective value `f`:
/// `|a − n| / max(|a|, |n|, RELATIVE_FLOOR · max(1, |f|))`.
pub fn relative_error_scaled(analytic: f64, numeric: f64, objective: f64) -> f64 {
    let floor = RELATIVE_FLOOR * objective.abs().max(1.0);
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorstCoordinate {
    pub tensor: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckRow {
    pub layer: &'static str,
    pub coordinates: usize,
    pub max_rel_error: f64,
    pub worst: Option<WorstCoordinate>,
}

impl GradcheckRow {
    fn new(layer: &'static str) -> Self {
        GradcheckRow {
            layer,
            coordinates: 0,
            max_rel_error: 0.0,
            worst: None,
        }
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error < GRADCHECK_TOLERANCE
    }

    fn compare(&mut self, tensor: &str, analytic: &Tensor<f64>, numeric: &Tensor<f64>, objective: f64) {
        for (i, (&a, &n)) in analytic.data().iter().zip(numeric.data()).enumerate() {
            self.coordinates += 1;
            let e = relative_error_scaled(a, n, objective);
            if e > self.max_rel_error || self.worst.is_none() {
                self.max_rel_error = self.max_rel_error.max(e);
                self.worst = Some(WorstCoordinate {
                    tensor: tensor.to_string(),
                    index: i,
                    analytic: a,
                    numeric: n,
                });
            }
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct GradcheckOptions {
    pub seed: u64,
    /// Test hook: scales the analytic conv2d weight gradient by 1.05 so the
    /// check must fail.
    pub corrupt_backward: bool,
}

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

fn check_conv(
    row: &mut GradcheckRow,
    input_shape: &[usize],
    weight_shape: &[usize],
    rng: &mut ChaCha8Rng,
    corrupt: bool,
) -> Result<()> {
    let x = Tensor::randn(input_shape, 1.0, rng);
    let w = Tensor::randn(weight_shape, 0.5, rng);
    let b = Tensor::randn(&[weight_shape[0]], 0.5, rng);
    let k = ConvKernel::new(w.clone(), b.clone())?;
    let c = Tensor::randn(conv_forward(&x, &k)?.shape(), 1.0, rng);
    let g = conv_backward(&x, &k, &c)?;
    let f0 = dot(&conv_forward(&x, &k)?, &c);
    let mut gw = g.weights;
    if corrupt {
        gw = gw.scale(1.05);
    }
    let fx = finite_diff_gradient(|p| Ok(dot(&conv_forward(p, &k)?, &c)), &x, GRADCHECK_STEP)?;
    row.compare("input", g.input.as_ref().expect("single-sample backward"), &fx, f0);
    let fw = finite_diff_gradient(
        |p| Ok(dot(&conv_forward(&x, &ConvKernel::new(p.clone(), b.clone())?)?, &c)),
        &w,
        GRADCHECK_STEP,
    )?;
    row.compare("weights", &gw, &fw, f0);
    let fb = finite_diff_gradient(
        |p| Ok(dot(&conv_forward(&x, &ConvKernel::new(w.clone(), p.clone())?)?, &c)),
        &b,
        GRADCHECK_STEP,
    )?;
    row.compare("bias", &g.bias, &fb, f0);
    Ok(())
}

fn check_relu(rng: &mut ChaCha8Rng) -> Result<GradcheckRow> {
    let mut row = GradcheckRow::new("relu");
    // keep every coordinate well clear of the kink at 0
    let x = Tensor::from_fn(&[3, 4, 5], |_| {
        let m = rng.random_range(0.05..1.5);
        if rng.random_bool(0.5) { m } else { -m }
    });
    let c = Tensor::randn(x.shape(), 1.0, rng);
    let g = relu_backward(&x, &c)?;
    let f = finite_diff_gradient(|p| Ok(dot(&relu_forward(p), &c)), &x, GRADCHECK_STEP)?;
    row.compare("input", &g, &f, dot(&relu_forward(&x), &c));
    Ok(row)
}

fn check_batchnorm(rng: &mut ChaCha8Rng) -> Result<GradcheckRow> {
    let mut row = GradcheckRow::new("batchnorm");
    for mode in [BnMode::Train, BnMode::Infer] {
        let x = Tensor::randn(&[4, 3, 3, 4], 1.5, rng);
        let mut st = BatchNormState::new(3).with_mode(mode);
        st.gamma = Tensor::randn(&[3], 1.0, rng);
        st.beta = Tensor::randn(&[3], 1.0, rng);
        st.running_mean = Tensor::randn(&[3], 0.3, rng);
        st.running_var = Tensor::from_fn(&[3], |i| 0.5 + i as f64 * 0.4);
        let c = Tensor::randn(x.shape(), 1.0, rng);
        let g = batchnorm_backward(&x, &st, &c)?;
        let with = |s: &BatchNormState<f64>, x: &Tensor<f64>| -> Result<f64> { Ok(dot(&batchnorm_forward(x, s)?.0, &c)) };
        let f0 = with(&st, &x)?;
        let fx = finite_diff_gradient(|p| with(&st, p), &x, GRADCHECK_STEP)?;
        row.compare("input", &g.input, &fx, f0);
        let fg = finite_diff_gradient(
            |p| with(&BatchNormState { gamma: p.clone(), ..st.clone() }, &x),
            &st.gamma,
            GRADCHECK_STEP,
        )?;
        row.compare("gamma", &g.gamma, &fg, f0);
        let fb = finite_diff_gradient(
            |p| with(&BatchNormState { beta: p.clone(), ..st.clone() }, &x),
            &st.beta,
            GRADCHECK_STEP,
        )?;
        row.compare("beta", &g.beta, &fb, f0);
    }
    Ok(row)
}

fn check_loss(rng: &mut ChaCha8Rng) -> Result<GradcheckRow> {
    let mut row = GradcheckRow::new("loss");
    let r = Tensor::randn(&[3, 1, 4, 4], 1.0, rng);
    let v = Tensor::randn(&[3, 1, 4, 4], 1.0, rng);
    let (f0, g) = loss_and_grad(&r, &v)?;
    let f = finite_diff_gradient(|p| loss(p, &v), &r, GRADCHECK_STEP)?;
    row.compare("prediction", &g, &f, f0);
    Ok(row)
}

fn check_network(row: &mut GradcheckRow, variant: NetworkVariant, seed: u64, rng: &mut ChaCha8Rng) -> Result<()> {
    let mut params: NetworkParams<f64> = build_network(variant, seed)?;
    // non-trivial batch-norm affine parameters and biases
    for t in params.trainable_mut().into_iter().skip(1) {
        for v in t.data_mut() {
            *v += rng.random_range(-0.2..0.2);
        }
    }
    let mut ishape = vec![2];
    ishape.extend(variant.input_shape(5, 6));
    let mut oshape = vec![2];
    oshape.extend(variant.output_shape(5, 6));
    let x = Tensor::randn(&ishape, 1.0, rng);
    let v = Tensor::randn(&oshape, 0.5, rng);
    let mode = BnMode::Train;
    let (out, tape) = forward_train(&params, &x, mode)?;
    let (f0, gout) = loss_and_grad(&out, &v)?;
    let grads = backward(&params, &tape, &gout, mode)?;
    let names = params.trainable_names();
    for (i, name) in names.iter().enumerate() {
        let base = params.trainable()[i].clone();
        let numeric = finite_diff_gradient(
            |p| {
                let mut probe = params.clone();
                *probe.trainable_mut()[i] = p.clone();
                loss(&forward_batch(&probe, &x, mode)?, &v)
            },
            &base,
            GRADCHECK_STEP,
        )?;
        row.compare(&format!("{}:{name}", variant.label()), &grads.0[i], &numeric, f0);
    }
    Ok(())
}

/// One row per layer type: conv2d, conv3d, relu, batchnorm, loss, and a
/// depth-3 network (2D and 3D) checked end to end through the loss.
pub fn run_gradcheck(options: GradcheckOptions) -> Result<Vec<GradcheckRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut conv2d = GradcheckRow::new("conv2d");
    check_conv(&mut conv2d, &[2, 5, 6], &[3, 2, 3, 3], &mut rng, options.corrupt_backward)?;
    let mut conv3d = GradcheckRow::new("conv3d");
    check_conv(&mut conv3d, &[2, 3, 4, 5], &[2, 2, 3, 3, 3], &mut rng, false)?;
    let relu = check_relu(&mut rng)?;
    let bn = check_batchnorm(&mut rng)?;
    let l = check_loss(&mut rng)?;
    let mut net = GradcheckRow::new("network");
    check_network(&mut net, NetworkVariant::two_d().with_size(3, 3), options.seed, &mut rng)?;
    check_network(&mut net, NetworkVariant::three_d().with_size(3, 2), options.seed, &mut rng)?;
    Ok(vec![conv2d, conv3d, relu, bn, l, net])
}
