//! Whole-volume reconstruction with a trained network.
//!
//! Every output slice `z` sees the window of `w` slices centred on `z`,
//! clamped at the volume ends (replicate padding). 2D evaluates each slice
//! on its own; 3D keeps only the middle slice of its residual.

use std::time::Instant;

use crate::data_sim::{clamp_slice, hu_normalize, HuWindow, VolumeHU};
use crate::error::{Error, Result};
use crate::network::{forward_batch, NetworkParams, NetworkVariant};
use crate::tensor::{BnMode, Scalar, Tensor};

/// Windows evaluated per network call.
const WINDOWS_PER_CALL: usize = 4;

fn check_volume<T: Scalar>(variant: &NetworkVariant, y: &Tensor<T>) -> Result<[usize; 3]> {
    if y.rank() != 3 {
        return Err(Error::shape("volume rank", 3, y.rank()));
    }
    let [z, h, w] = [y.shape()[0], y.shape()[1], y.shape()[2]];
    let support = variant.kernel_extent()[0];
    if z == 0 || h < support || w < support {
        return Err(Error::invalid(format!(
            "volume {z}×{h}×{w} is smaller than the {support}×{support} kernel support"
        )));
    }
    Ok([z, h, w])
}

/// `(count, input...)` batch of windows for slices `zs`.
fn gather_windows<T: Scalar>(variant: &NetworkVariant, y: &Tensor<T>, zs: std::ops::Range<usize>) -> Result<Tensor<T>> {
    let [slices, h, w] = [y.shape()[0], y.shape()[1], y.shape()[2]];
    let half = (variant.window / 2) as isize;
    let mut data = Vec::with_capacity(zs.len() * variant.window * h * w);
    for z in zs.clone() {
        for k in -half..=half {
            data.extend_from_slice(y.outer(clamp_slice(z, k, slices)));
        }
    }
    let mut shape = vec![zs.len()];
    shape.extend(variant.input_shape(h, w));
    Tensor::new(shape, data)
}

/// Residual volume `R` for `y` using `model` on batches of windows.
///
/// `model` receives `(n, input...)` and must return `(n, output...)` as the
/// variant defines them. Exposed so probe models can replace the network.
pub fn residual_volume_with<T, M>(variant: &NetworkVariant, y: &Tensor<T>, mut model: M) -> Result<Tensor<T>>
where
    T: Scalar,
    M: FnMut(&Tensor<T>) -> Result<Tensor<T>>,
{
    variant.validate()?;
    let [slices, h, w] = check_volume(variant, y)?;
    let plane = h * w;
    let middle = variant.output_slices() / 2;
    let per_out = variant.output_slices() * plane;
    let mut out = Vec::with_capacity(slices * plane);
    for start in (0..slices).step_by(WINDOWS_PER_CALL) {
        let zs = start..(start + WINDOWS_PER_CALL).min(slices);
        let batch = gather_windows(variant, y, zs.clone())?;
        let r = model(&batch)?;
        let mut want = vec![zs.len()];
        want.extend(variant.output_shape(h, w));
        if r.shape() != want.as_slice() {
            return Err(Error::invalid(format!(
                "model returned shape {:?}, expected {want:?}",
                r.shape()
            )));
        }
        for s in 0..zs.len() {
            let off = s * per_out + middle * plane;
            out.extend_from_slice(&r.data()[off..off + plane]);
        }
    }
    Tensor::new(vec![slices, h, w], out)
}

/// Residual estimate for every slice of a normalized `(Z, H, W)` volume,
/// always using running batch-norm statistics.
pub fn residual_volume<T: Scalar>(params: &NetworkParams<T>, y: &Tensor<T>) -> Result<Tensor<T>> {
    residual_volume_with(&params.variant, y, |batch| forward_batch(params, batch, BnMode::Infer))
}

/// x̂ = y − R(window(y)) for a normalized `(Z, H, W)` volume.
pub fn infer_volume<T: Scalar>(params: &NetworkParams<T>, y: &Tensor<T>) -> Result<Tensor<T>> {
    let r = residual_volume(params, y)?;
    y.sub(&r)
}

/// HU-domain reconstruction: the residual is computed on `y` normalized by
/// `window` and subtracted in HU, so a zero residual reproduces `y` exactly.
pub fn infer_volume_hu<T: Scalar>(params: &NetworkParams<T>, y: &VolumeHU, window: HuWindow) -> Result<VolumeHU> {
    let norm = hu_normalize::<T>(y, window)?;
    let r = residual_volume(params, &norm.tensor)?;
    let span = window.span();
    let voxels = y
        .voxels
        .iter()
        .zip(r.data())
        .map(|(&v, rv)| v - (rv.as_f64() * span) as f32)
        .collect();
    let mut out = VolumeHU::new(y.dims, voxels)?;
    out.spacing = y.spacing;
    out.window = y.window;
    Ok(out)
}

/// Wall-clock seconds of repeated [`infer_volume`] calls.
#[derive(Debug, Clone, PartialEq)]
pub struct TimingStats {
    pub samples: Vec<f64>,
    pub mean_s: f64,
    pub min_s: f64,
}

/// Times `repeats` (≥ 3) calls of [`infer_volume`] after one untimed warm-up.
pub fn time_inference<T: Scalar>(params: &NetworkParams<T>, y: &Tensor<T>, repeats: usize) -> Result<TimingStats> {
    if repeats < 3 {
        return Err(Error::invalid(format!("need at least 3 timing repeats, got {repeats}")));
    }
    infer_volume(params, y)?;
    let mut samples = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let t = Instant::now();
        let out = infer_volume(params, y)?;
        samples.push(t.elapsed().as_secs_f64());
        std::hint::black_box(out);
    }
    let mean_s = samples.iter().sum::<f64>() / repeats as f64;
    let min_s = samples.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(TimingStats { samples, mean_s, min_s })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{build_network, VariantKind};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn volume(z: usize, seed: u64) -> Tensor<f64> {
        Tensor::randn(&[z, 6, 7], 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    fn variants() -> Vec<NetworkVariant> {
        vec![
            NetworkVariant::two_d().with_size(3, 3),
            NetworkVariant::two_point_five_d(3).with_size(3, 3),
            NetworkVariant::two_point_five_d(5).with_size(3, 3),
            NetworkVariant::three_d().with_size(3, 2),
        ]
    }

    #[test]
    fn zero_residual_is_exact_identity() {
        for v in variants() {
            let mut net = build_network::<f64>(v, 2).unwrap();
            net.zero_last_layer();
            let y = volume(5, 1);
            assert_eq!(infer_volume(&net, &y).unwrap(), y, "{}", v.label());
            let hu = VolumeHU::new([5, 6, 7], y.data().iter().map(|v| (1000.0 + 300.0 * v) as f32).collect()).unwrap();
            assert_eq!(infer_volume_hu(&net, &hu, crate::data_sim::DEFAULT_HU_WINDOW).unwrap(), hu);
        }
    }

    #[test]
    fn output_slice_count_matches() {
        for v in variants() {
            let net = build_network::<f64>(v, 2).unwrap();
            for z in [1, 3, 6] {
                assert_eq!(infer_volume(&net, &volume(z, 3)).unwrap().shape(), &[z, 6, 7]);
            }
        }
    }

    #[test]
    fn central_slice_probe_gives_zero() {
        for v in variants() {
            let y = volume(6, 4);
            let (h, w) = (6, 7);
            let r = residual_volume_with(&v, &y, |batch| {
                let n = batch.shape()[0];
                let per = batch.len() / n;
                let plane = h * w;
                let mut data = Vec::new();
                for s in 0..n {
                    let sample = &batch.data()[s * per..(s + 1) * per];
                    if v.kind == VariantKind::ThreeD {
                        data.extend_from_slice(sample);
                    } else {
                        let c = v.window / 2;
                        data.extend_from_slice(&sample[c * plane..(c + 1) * plane]);
                    }
                }
                let mut shape = vec![n];
                shape.extend(v.output_shape(h, w));
                Tensor::new(shape, data)
            })
            .unwrap();
            let x = y.sub(&r).unwrap();
            assert!(x.data().iter().all(|&e| e == 0.0), "{}", v.label());
        }
    }

    #[test]
    fn single_slice_replicates() {
        let v = NetworkVariant::two_point_five_d(3).with_size(3, 3);
        let y = volume(1, 5);
        let mut seen = None;
        residual_volume_with(&v, &y, |batch| {
            seen = Some(batch.clone());
            Ok(Tensor::zeros(&[1, 1, 6, 7]))
        })
        .unwrap();
        let b = seen.unwrap();
        for k in 0..3 {
            assert_eq!(&b.data()[k * 42..(k + 1) * 42], y.data());
        }
    }

    #[test]
    fn interior_slice_is_local() {
        for w in [3, 5, 7] {
            let net = build_network::<f64>(NetworkVariant::two_point_five_d(w).with_size(3, 3), 6).unwrap();
            let y = volume(12, 7);
            let base = infer_volume(&net, &y).unwrap();
            let z = 6;
            let half = w / 2;
            for far in [0, z - half - 1, z + half + 1, 11] {
                let mut y2 = y.clone();
                y2.outer_mut(far).iter_mut().for_each(|v| *v += 3.0);
                let out = infer_volume(&net, &y2).unwrap();
                assert_eq!(out.outer(z), base.outer(z), "w={w} perturbed {far}");
            }
        }
    }

    #[test]
    fn identical_slices_give_identical_outputs() {
        let one = volume(1, 8);
        let stacked = Tensor::stack(&[&one.clone().reshape(&[6, 7]).unwrap(); 5]).unwrap();
        for v in variants().into_iter().skip(1) {
            let net = build_network::<f64>(v, 1).unwrap();
            let out = infer_volume(&net, &stacked).unwrap();
            for z in 1..5 {
                assert_eq!(out.outer(z), out.outer(0));
            }
        }
    }

    #[test]
    fn batched_windows_match_one_at_a_time() {
        let v = NetworkVariant::two_point_five_d(3).with_size(4, 3);
        let net = build_network::<f64>(v, 3).unwrap();
        let y = volume(7, 9);
        let batched = residual_volume(&net, &y).unwrap();
        for z in 0..7 {
            let single = gather_windows(&v, &y, z..z + 1).unwrap();
            let r = forward_batch(&net, &single, BnMode::Infer).unwrap();
            assert_eq!(r.data(), batched.outer(z));
        }
    }

    #[test]
    fn rejects_too_small_slices() {
        let net = build_network::<f64>(NetworkVariant::two_d().with_size(3, 2), 0).unwrap();
        let y = Tensor::<f64>::zeros(&[2, 2, 5]);
        assert!(matches!(infer_volume(&net, &y), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn timing_records_each_repeat() {
        let net = build_network::<f32>(NetworkVariant::two_d().with_size(3, 2), 0).unwrap();
        let y = Tensor::<f32>::zeros(&[2, 8, 8]);
        let t = time_inference(&net, &y, 3).unwrap();
        assert_eq!(t.samples.len(), 3);
        assert!(t.min_s <= t.mean_s);
        assert!(time_inference(&net, &y, 2).is_err());
    }
}
