use std::path::Path;

use crate::container::{self, Header};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

const MAGIC: &str = "dlmbir-volume 1";

/// Default normalization window: `[0, 2000]` HU maps onto `[0, 1]`.
pub const DEFAULT_HU_WINDOW: HuWindow = HuWindow { lo: 0.0, hi: 2000.0 };

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HuWindow {
    pub lo: f64,
    pub hi: f64,
}

impl HuWindow {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::invalid(format!("HU window needs lo < hi, got ({lo}, {hi})")));
        }
        Ok(HuWindow { lo, hi })
    }

    pub fn span(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, hu: f64) -> bool {
        hu >= self.lo && hu <= self.hi
    }
}

/// Scalar volume in Hounsfield units, `(slices, rows, cols)`, z-major.
#[derive(Debug, Clone, PartialEq)]
pub struct VolumeHU {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub window: HuWindow,
    pub voxels: Vec<f32>,
}

impl VolumeHU {
    pub fn new(dims: [usize; 3], voxels: Vec<f32>) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::invalid(format!("volume dims must be positive, got {dims:?}")));
        }
        let n = dims.iter().product();
        if voxels.len() != n {
            return Err(Error::shape("volume voxel count", n, voxels.len()));
        }
        if let Some(i) = voxels.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("volume voxel {i}")));
        }
        Ok(VolumeHU {
            dims,
            spacing: [1.0; 3],
            window: DEFAULT_HU_WINDOW,
            voxels,
        })
    }

    pub fn slices(&self) -> usize {
        self.dims[0]
    }

    pub fn slice_len(&self) -> usize {
        self.dims[1] * self.dims[2]
    }

    pub fn slice(&self, z: usize) -> &[f32] {
        let n = self.slice_len();
        &self.voxels[z * n..(z + 1) * n]
    }

    pub fn slice_mut(&mut self, z: usize) -> &mut [f32] {
        let n = self.slice_len();
        &mut self.voxels[z * n..(z + 1) * n]
    }

    pub fn same_dims(&self, other: &VolumeHU) -> Result<()> {
        for (axis, (a, b)) in self.dims.iter().zip(&other.dims).enumerate() {
            if a != b {
                return Err(Error::shape(format!("volume axis {axis}"), *a, *b));
            }
        }
        Ok(())
    }
}

/// Normalized tensor plus the number of voxels that fell outside the window.
/// Out-of-window values are flagged, not clipped.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalized<T> {
    pub tensor: Tensor<T>,
    pub out_of_window: usize,
}

/// Affine map `lo -> 0`, `hi -> 1`; output shape `(Z, H, W)`.
pub fn hu_normalize<T: Scalar>(volume: &VolumeHU, window: HuWindow) -> Result<Normalized<T>> {
    let window = HuWindow::new(window.lo, window.hi)?;
    let span = window.span();
    let mut out_of_window = 0;
    let data = volume
        .voxels
        .iter()
        .map(|&v| {
            let v = v as f64;
            if !window.contains(v) {
                out_of_window += 1;
            }
            T::of((v - window.lo) / span)
        })
        .collect();
    Ok(Normalized {
        tensor: Tensor::new(volume.dims.to_vec(), data)?,
        out_of_window,
    })
}

/// Inverse of [`hu_normalize`]; `tensor` must be `(Z, H, W)`.
pub fn hu_denormalize<T: Scalar>(tensor: &Tensor<T>, window: HuWindow) -> Result<VolumeHU> {
    let window = HuWindow::new(window.lo, window.hi)?;
    if tensor.rank() != 3 {
        return Err(Error::shape("normalized volume rank", 3, tensor.rank()));
    }
    let dims = [tensor.shape()[0], tensor.shape()[1], tensor.shape()[2]];
    let voxels = tensor
        .data()
        .iter()
        .map(|v| (v.as_f64() * window.span() + window.lo) as f32)
        .collect();
    let mut vol = VolumeHU::new(dims, voxels)?;
    vol.window = window;
    Ok(vol)
}

/// Writes the volume container: header (dims, spacing, HU window, any
/// `extra` keys) and a little-endian f32 blob, z-major.
pub fn write_volume(path: &Path, volume: &VolumeHU, extra: &[(String, String)]) -> Result<()> {
    let mut h = Header::default();
    let [z, r, c] = volume.dims;
    h.push("dims", format!("{z} {r} {c}"));
    let [sz, sr, sc] = volume.spacing;
    h.push("spacing", format!("{sz} {sr} {sc}"));
    h.push("hu_window", format!("{} {}", volume.window.lo, volume.window.hi));
    h.push("scalar", "f32le");
    for (k, v) in extra {
        h.push(format!("meta.{k}"), v);
    }
    let mut blob = Vec::with_capacity(volume.voxels.len() * 4);
    for v in &volume.voxels {
        blob.extend_from_slice(&v.to_le_bytes());
    }
    container::write(path, MAGIC, &h, &blob)
}

fn parse_triple<V: std::str::FromStr>(h: &Header, key: &str, path: &Path) -> Result<[V; 3]> {
    let raw: String = h.require(key, path)?;
    let parts: Vec<V> = raw
        .split_whitespace()
        .map(|s| s.parse())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::CorruptHeader {
            path: path.into(),
            reason: format!("unparsable `{key}` value `{raw}`"),
        })?;
    parts.try_into().map_err(|_| Error::CorruptHeader {
        path: path.into(),
        reason: format!("`{key}` needs three values, got `{raw}`"),
    })
}

/// Reads a volume container; returns the volume and its `meta.*` entries.
pub fn read_volume(path: &Path) -> Result<(VolumeHU, Vec<(String, String)>)> {
    let (h, blob) = container::read(path, MAGIC)?;
    let dims: [usize; 3] = parse_triple(&h, "dims", path)?;
    let spacing: [f64; 3] = parse_triple(&h, "spacing", path)?;
    let win: String = h.require("hu_window", path)?;
    let w: Vec<f64> = win.split_whitespace().filter_map(|s| s.parse().ok()).collect();
    let window = match w.as_slice() {
        [lo, hi] => HuWindow::new(*lo, *hi).map_err(|e| Error::CorruptHeader {
            path: path.into(),
            reason: e.to_string(),
        })?,
        _ => {
            return Err(Error::CorruptHeader {
                path: path.into(),
                reason: format!("bad hu_window `{win}`"),
            })
        }
    };
    if h.get("scalar").is_some_and(|s| s != "f32le") {
        return Err(Error::CorruptHeader {
            path: path.into(),
            reason: "only f32le voxels are supported".into(),
        });
    }
    if dims.iter().any(|&d| d == 0) {
        return Err(Error::CorruptHeader {
            path: path.into(),
            reason: format!("zero dimension in {dims:?}"),
        });
    }
    let expected = dims.iter().product::<usize>() * 4;
    if blob.len() < expected {
        return Err(Error::Truncated {
            path: path.into(),
            expected,
            found: blob.len(),
        });
    }
    if blob.len() > expected {
        return Err(Error::LayoutMismatch {
            path: path.into(),
            reason: format!("{} trailing bytes after {dims:?} voxels", blob.len() - expected),
        });
    }
    let voxels = blob
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
        .collect();
    let mut vol = VolumeHU::new(dims, voxels).map_err(|e| Error::LayoutMismatch {
        path: path.into(),
        reason: e.to_string(),
    })?;
    vol.spacing = spacing;
    vol.window = window;
    let meta = h
        .with_prefix("meta.")
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
    Ok((vol, meta))
}
