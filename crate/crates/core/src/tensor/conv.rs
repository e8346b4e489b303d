use rayon::prelude::*;

use super::{gemm, MatRef, Scalar, Tensor};
use crate::error::{Error, Result};

/// Convolution kernel bank: weights `(N_o, N_i, k...)` and bias `(N_o)`.
///
/// Applied as cross-correlation with stride 1 and "same" zero padding, so
/// spatial extents must be odd.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvKernel<T> {
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads<T> {
    /// `None` when the caller asked not to propagate to the input.
    pub input: Option<Tensor<T>>,
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> ConvKernel<T> {
    pub fn new(weights: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        let rank = weights.rank();
        if !(rank == 4 || rank == 5) {
            return Err(Error::invalid(format!(
                "kernel weights must be (N_o, N_i, k, k) or (N_o, N_i, k, k, k), got rank {rank}"
            )));
        }
        for (axis, &k) in weights.shape()[2..].iter().enumerate() {
            if k % 2 == 0 {
                return Err(Error::invalid(format!(
                    "kernel spatial axis {axis} has even extent {k}; only odd extents admit symmetric same padding"
                )));
            }
        }
        if bias.rank() != 1 {
            return Err(Error::shape("bias rank", 1, bias.rank()));
        }
        if bias.shape()[0] != weights.shape()[0] {
            return Err(Error::shape(
                "bias length (out_channels)",
                weights.shape()[0],
                bias.shape()[0],
            ));
        }
        Ok(ConvKernel { weights, bias })
    }

    pub fn zeros(out_channels: usize, in_channels: usize, extent: &[usize]) -> Self {
        let mut shape = vec![out_channels, in_channels];
        shape.extend_from_slice(extent);
        ConvKernel::new(Tensor::zeros(&shape), Tensor::zeros(&[out_channels]))
            .expect("zeros kernel is well-formed")
    }

    /// Kernel whose only nonzero weight is the center tap of `(o, o)`.
    pub fn delta(channels: usize, extent: &[usize]) -> Self {
        let mut k = Self::zeros(channels, channels, extent);
        let taps: usize = extent.iter().product();
        for c in 0..channels {
            k.weights.data_mut()[(c * channels + c) * taps + taps / 2] = T::one();
        }
        k
    }

    pub fn out_channels(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn spatial_rank(&self) -> usize {
        self.weights.rank() - 2
    }

    pub fn extent(&self) -> &[usize] {
        &self.weights.shape()[2..]
    }

    fn geometry(&self, spatial: &[usize]) -> Geometry {
        Geometry::new(spatial, self.extent())
    }
}

/// 2D work is carried out as 3D with a unit leading axis.
#[derive(Debug, Clone, Copy)]
struct Geometry {
    dims: [usize; 3],
    ext: [usize; 3],
}

impl Geometry {
    fn new(spatial: &[usize], extent: &[usize]) -> Self {
        let lift = |v: &[usize]| -> [usize; 3] {
            match v.len() {
                2 => [1, v[0], v[1]],
                3 => [v[0], v[1], v[2]],
                _ => unreachable!("validated rank"),
            }
        };
        Geometry {
            dims: lift(spatial),
            ext: lift(extent),
        }
    }

    fn points(&self) -> usize {
        self.dims.iter().product()
    }

    fn taps(&self) -> usize {
        self.ext.iter().product()
    }
}

fn check_input<T: Scalar>(input_shape: &[usize], kernel: &ConvKernel<T>, batched: bool) -> Result<()> {
    let lead = if batched { 2 } else { 1 };
    let want_rank = lead + kernel.spatial_rank();
    if input_shape.len() != want_rank {
        return Err(Error::shape("input rank", want_rank, input_shape.len()));
    }
    let ch_axis = lead - 1;
    if input_shape[ch_axis] != kernel.in_channels() {
        return Err(Error::shape(
            format!("input axis {ch_axis} (channels)"),
            kernel.in_channels(),
            input_shape[ch_axis],
        ));
    }
    Ok(())
}

/// Lay out every receptive field as a column: rows are `(channel, tap)`,
/// columns are output positions.
fn im2col<T: Scalar>(input: &[T], channels: usize, g: &Geometry, cols: &mut [T]) {
    let [d_n, h_n, w_n] = g.dims;
    let [kd_n, kh_n, kw_n] = g.ext;
    let (pd, ph, pw) = (kd_n / 2, kh_n / 2, kw_n / 2);
    let p = g.points();
    let plane = h_n * w_n;
    let mut row = 0;
    for c in 0..channels {
        let src = &input[c * p..(c + 1) * p];
        for kd in 0..kd_n {
            for kh in 0..kh_n {
                for kw in 0..kw_n {
                    let dst = &mut cols[row * p..(row + 1) * p];
                    row += 1;
                    // valid output w range such that 0 <= w + kw - pw < w_n
                    let w_lo = pw.saturating_sub(kw);
                    let w_hi = (w_n + pw).saturating_sub(kw).min(w_n);
                    for d in 0..d_n {
                        let sd = d + kd;
                        let in_d = sd >= pd && sd - pd < d_n;
                        for h in 0..h_n {
                            let o = d * plane + h * w_n;
                            let sh = h + kh;
                            let out_row = &mut dst[o..o + w_n];
                            if !in_d || sh < ph || sh - ph >= h_n || w_lo >= w_hi {
                                out_row.iter_mut().for_each(|v| *v = T::zero());
                                continue;
                            }
                            let s = (sd - pd) * plane + (sh - ph) * w_n;
                            out_row[..w_lo].iter_mut().for_each(|v| *v = T::zero());
                            out_row[w_hi..].iter_mut().for_each(|v| *v = T::zero());
                            let so = s + w_lo + kw - pw;
                            out_row[w_lo..w_hi].copy_from_slice(&src[so..so + (w_hi - w_lo)]);
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add columns back onto the input grid.
fn col2im<T: Scalar>(cols: &[T], channels: usize, g: &Geometry, out: &mut [T]) {
    let [d_n, h_n, w_n] = g.dims;
    let [kd_n, kh_n, kw_n] = g.ext;
    let (pd, ph, pw) = (kd_n / 2, kh_n / 2, kw_n / 2);
    let p = g.points();
    let plane = h_n * w_n;
    out.iter_mut().for_each(|v| *v = T::zero());
    let mut row = 0;
    for c in 0..channels {
        let dst = &mut out[c * p..(c + 1) * p];
        for kd in 0..kd_n {
            for kh in 0..kh_n {
                for kw in 0..kw_n {
                    let src = &cols[row * p..(row + 1) * p];
                    row += 1;
                    let w_lo = pw.saturating_sub(kw);
                    let w_hi = (w_n + pw).saturating_sub(kw).min(w_n);
                    if w_lo >= w_hi {
                        continue;
                    }
                    for d in 0..d_n {
                        let sd = d + kd;
                        if sd < pd || sd - pd >= d_n {
                            continue;
                        }
                        for h in 0..h_n {
                            let sh = h + kh;
                            if sh < ph || sh - ph >= h_n {
                                continue;
                            }
                            let o = d * plane + h * w_n;
                            let s = (sd - pd) * plane + (sh - ph) * w_n + w_lo + kw - pw;
                            let seg = &mut dst[s..s + (w_hi - w_lo)];
                            for (a, &b) in seg.iter_mut().zip(&src[o + w_lo..o + w_hi]) {
                                *a = *a + b;
                            }
                        }
                    }
                }
            }
        }
    }
}

fn forward_one<T: Scalar>(input: &[T], kernel: &ConvKernel<T>, g: &Geometry, out: &mut [T]) {
    let ci = kernel.in_channels();
    let co = kernel.out_channels();
    let p = g.points();
    let rows = ci * g.taps();
    let mut cols = vec![T::zero(); rows * p];
    im2col(input, ci, g, &mut cols);
    for (o, chunk) in out.chunks_mut(p).enumerate() {
        let b = kernel.bias.data()[o];
        chunk.iter_mut().for_each(|v| *v = b);
    }
    gemm(
        MatRef::new(kernel.weights.data(), co, rows),
        MatRef::new(&cols, rows, p),
        T::one(),
        out,
    );
}

/// Single-sample convolution: `input (N_i, spatial...) -> (N_o, spatial...)`.
pub fn conv_forward<T: Scalar>(input: &Tensor<T>, kernel: &ConvKernel<T>) -> Result<Tensor<T>> {
    check_input(input.shape(), kernel, false)?;
    let g = kernel.geometry(&input.shape()[1..]);
    let mut shape = input.shape().to_vec();
    shape[0] = kernel.out_channels();
    let mut out = Tensor::zeros(&shape);
    forward_one(input.data(), kernel, &g, out.data_mut());
    Ok(out)
}

/// Batched convolution: `(N, N_i, spatial...) -> (N, N_o, spatial...)`.
///
/// Samples are processed independently, so each output row is bitwise equal
/// to [`conv_forward`] on that sample alone.
pub fn conv_forward_batch<T: Scalar>(
    input: &Tensor<T>,
    kernel: &ConvKernel<T>,
) -> Result<Tensor<T>> {
    check_input(input.shape(), kernel, true)?;
    let n = input.shape()[0];
    let g = kernel.geometry(&input.shape()[2..]);
    let mut shape = input.shape().to_vec();
    shape[1] = kernel.out_channels();
    let mut out = Tensor::zeros(&shape);
    let in_stride = input.len() / n;
    let out_stride = out.len() / n;
    out.data_mut()
        .par_chunks_mut(out_stride)
        .zip(input.data().par_chunks(in_stride))
        .for_each(|(o, x)| forward_one(x, kernel, &g, o));
    Ok(out)
}

struct SampleGrads<T> {
    input: Option<Vec<T>>,
    weights: Vec<T>,
    bias: Vec<T>,
}

fn backward_one<T: Scalar>(
    input: &[T],
    kernel: &ConvKernel<T>,
    upstream: &[T],
    g: &Geometry,
    need_input: bool,
) -> SampleGrads<T> {
    let ci = kernel.in_channels();
    let co = kernel.out_channels();
    let p = g.points();
    let rows = ci * g.taps();
    let mut cols = vec![T::zero(); rows * p];
    im2col(input, ci, g, &mut cols);

    let mut gw = vec![T::zero(); co * rows];
    gemm(
        MatRef::new(upstream, co, p),
        MatRef::transpose_of(&cols, rows, p),
        T::zero(),
        &mut gw,
    );
    let gb = upstream
        .chunks(p)
        .map(|c| c.iter().fold(T::zero(), |a, &v| a + v))
        .collect();

    let gin = need_input.then(|| {
        // reuse the column buffer for Wᵀ · upstream
        gemm(
            MatRef::transpose_of(kernel.weights.data(), co, rows),
            MatRef::new(upstream, co, p),
            T::zero(),
            &mut cols,
        );
        let mut gin = vec![T::zero(); ci * p];
        col2im(&cols, ci, g, &mut gin);
        gin
    });
    SampleGrads {
        input: gin,
        weights: gw,
        bias: gb,
    }
}

/// Gradients of `L = Σ upstream ⊙ conv_forward(input, kernel)`.
pub fn conv_backward<T: Scalar>(
    input: &Tensor<T>,
    kernel: &ConvKernel<T>,
    upstream: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    check_input(input.shape(), kernel, false)?;
    let mut out_shape = input.shape().to_vec();
    out_shape[0] = kernel.out_channels();
    check_upstream(upstream.shape(), &out_shape)?;
    let g = kernel.geometry(&input.shape()[1..]);
    let s = backward_one(input.data(), kernel, upstream.data(), &g, true);
    Ok(ConvGrads {
        input: Some(Tensor::new(input.shape().to_vec(), s.input.expect("requested"))?),
        weights: Tensor::new(kernel.weights.shape().to_vec(), s.weights)?,
        bias: Tensor::new(vec![kernel.out_channels()], s.bias)?,
    })
}

/// Batched backward pass. Parameter gradients are summed over the batch in
/// sample order, so the result does not depend on the thread pool size.
pub fn conv_backward_batch<T: Scalar>(
    input: &Tensor<T>,
    kernel: &ConvKernel<T>,
    upstream: &Tensor<T>,
    need_input: bool,
) -> Result<ConvGrads<T>> {
    check_input(input.shape(), kernel, true)?;
    let mut out_shape = input.shape().to_vec();
    out_shape[1] = kernel.out_channels();
    check_upstream(upstream.shape(), &out_shape)?;
    let n = input.shape()[0];
    let g = kernel.geometry(&input.shape()[2..]);
    let in_stride = input.len() / n;
    let up_stride = upstream.len() / n;
    let per_sample: Vec<SampleGrads<T>> = input
        .data()
        .par_chunks(in_stride)
        .zip(upstream.data().par_chunks(up_stride))
        .map(|(x, u)| backward_one(x, kernel, u, &g, need_input))
        .collect();

    let mut gw = Tensor::zeros(kernel.weights.shape());
    let mut gb = Tensor::zeros(kernel.bias.shape());
    let mut gin = need_input.then(|| Vec::with_capacity(input.len()));
    for s in per_sample {
        for (a, b) in gw.data_mut().iter_mut().zip(s.weights) {
            *a = *a + b;
        }
        for (a, b) in gb.data_mut().iter_mut().zip(s.bias) {
            *a = *a + b;
        }
        if let (Some(acc), Some(x)) = (gin.as_mut(), s.input) {
            acc.extend(x);
        }
    }
    Ok(ConvGrads {
        input: gin
            .map(|d| Tensor::new(input.shape().to_vec(), d))
            .transpose()?,
        weights: gw,
        bias: gb,
    })
}

fn check_upstream(upstream: &[usize], expected: &[usize]) -> Result<()> {
    if upstream.len() != expected.len() {
        return Err(Error::shape("upstream rank", expected.len(), upstream.len()));
    }
    for (axis, (&a, &b)) in expected.iter().zip(upstream).enumerate() {
        if a != b {
            return Err(Error::shape(format!("upstream axis {axis}"), a, b));
        }
    }
    Ok(())
}
