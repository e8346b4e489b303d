//! Masked MSE / PSNR metrics, per-slice reports and their CSV and bitmap
//! renderings.
//!
//! Masking is decided in HU on the reference volume; squared errors are
//! taken after mapping both volumes through the normalization window.

mod plot;
mod report;

pub use plot::{render_psnr_plot, write_ppm, Canvas};
pub use report::{
    emit_report, parse_rows, per_slice_report, MethodSummary, MetricRow, MetricsReport, ROW_HEADER,
    SUMMARY_HEADER,
};

use crate::data_sim::{HuWindow, VolumeHU};
use crate::error::{Error, Result};

/// Reference voxels inside this HU range are scored.
pub const DEFAULT_MASK_HU: (f64, f64) = (700.0, 1500.0);

/// `10 · log10(1 / mse)`; `mse == 0` yields `+inf`.
pub fn psnr(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / mse).log10()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskedMse {
    pub mse: f64,
    pub count: usize,
}

fn masked_sum(x: &[f32], x_ref: &[f32], mask: (f64, f64), window: HuWindow) -> (f64, usize) {
    let span = window.span();
    let mut acc = 0.0;
    let mut count = 0;
    for (&a, &b) in x.iter().zip(x_ref) {
        let b = b as f64;
        if b >= mask.0 && b <= mask.1 {
            let d = (b - a as f64) / span;
            acc += d * d;
            count += 1;
        }
    }
    (acc, count)
}

/// Masked MSE over `x_ref` voxels in `[mask.0, mask.1]` HU, with errors in
/// units of the normalization window.
pub fn masked_mse_slices(
    x: &[f32],
    x_ref: &[f32],
    mask: (f64, f64),
    window: HuWindow,
) -> Result<MaskedMse> {
    if x.len() != x_ref.len() {
        return Err(Error::shape("voxel count", x_ref.len(), x.len()));
    }
    let (acc, count) = masked_sum(x, x_ref, mask, window);
    if count == 0 {
        return Err(Error::EmptyMask { lo: mask.0, hi: mask.1 });
    }
    Ok(MaskedMse {
        mse: acc / count as f64,
        count,
    })
}

/// [`masked_mse_slices`] over whole volumes of equal dims.
pub fn masked_mse(x: &VolumeHU, x_ref: &VolumeHU, mask: (f64, f64), window: HuWindow) -> Result<MaskedMse> {
    x_ref.same_dims(x)?;
    masked_mse_slices(&x.voxels, &x_ref.voxels, mask, window)
}
