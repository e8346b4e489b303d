//! Synthetic stand-in for paired FBP / reference CT volumes.
//!
//! A smoothly z-varying ellipse phantom plays the reference role; the
//! degraded input comes from projecting each slice, adding Gaussian noise
//! to the sinogram and reconstructing with filtered backprojection. Sparse
//! view counts produce the characteristic streaks.

mod patches;
mod phantom;
mod radon;
mod volume;

pub use patches::{clamp_slice, extract_patches, from_indices, Augment, PatchIndex, PatchSet, PatchSpec};
pub use phantom::{generate_phantom_volume, pixel_center, Ellipse, Phantom, MIN_PHANTOM_DIMS};
pub use radon::{default_detectors, detector_spacing, fbp, radon, ramp_filter, uniform_angles, Sinogram};
pub use volume::{
    hu_denormalize, hu_normalize, read_volume, write_volume, HuWindow, Normalized, VolumeHU,
    DEFAULT_HU_WINDOW,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Degrades `ground_truth` slice by slice: project over `views` uniform
/// angles, add `N(0, noise_sigma²)` to every line integral, reconstruct by
/// FBP. Returns `(fbp, ground_truth)`.
pub fn make_pair(
    ground_truth: &VolumeHU,
    views: usize,
    noise_sigma: f64,
    seed: u64,
) -> Result<(VolumeHU, VolumeHU)> {
    if views < 8 {
        return Err(Error::invalid(format!("need at least 8 views, got {views}")));
    }
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(Error::invalid(format!("noise sigma must be >= 0, got {noise_sigma}")));
    }
    let [nz, h, w] = ground_truth.dims;
    if h != w {
        return Err(Error::invalid(format!("slices must be square, got {h}×{w}")));
    }
    let angles = uniform_angles(views);
    let detectors = default_detectors(h);
    let noise = Normal::new(0.0, noise_sigma.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::invalid(e.to_string()))?;
    let slices: Vec<Vec<f32>> = (0..nz)
        .into_par_iter()
        .map(|z| -> Result<Vec<f32>> {
            let img: Vec<f64> = ground_truth.slice(z).iter().map(|&v| v as f64).collect();
            let mut sino = radon(&img, h, &angles, detectors)?;
            if noise_sigma > 0.0 {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(z as u64);
                for v in &mut sino.values {
                    *v += noise.sample(&mut rng);
                }
            }
            Ok(fbp(&sino, h)?.into_iter().map(|v| v as f32).collect())
        })
        .collect::<Result<_>>()?;
    let mut y = VolumeHU::new(ground_truth.dims, slices.concat())?;
    y.spacing = ground_truth.spacing;
    y.window = ground_truth.window;
    Ok((y, ground_truth.clone()))
}
