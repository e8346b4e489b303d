use std::fmt;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::volume::{read_volume, write_volume, VolumeHU};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Right-angle augmentation applied identically to input and target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Augment {
    Identity,
    /// Mirror columns.
    FlipH,
    /// Mirror rows.
    FlipV,
    /// Counter-clockwise quarter turn.
    Rot90,
    Rot180,
    Rot270,
}

impl Augment {
    pub const ALL: [Augment; 6] = [
        Augment::Identity,
        Augment::FlipH,
        Augment::FlipV,
        Augment::Rot90,
        Augment::Rot180,
        Augment::Rot270,
    ];

    pub fn tag(self) -> u8 {
        self as u8
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Self::ALL.get(tag as usize).copied()
    }

    pub fn inverse(self) -> Self {
        match self {
            Augment::Rot90 => Augment::Rot270,
            Augment::Rot270 => Augment::Rot90,
            other => other,
        }
    }

    /// Source coordinate feeding output `(r, c)` of a `p × p` square.
    fn source(self, r: usize, c: usize, p: usize) -> (usize, usize) {
        let m = p - 1;
        match self {
            Augment::Identity => (r, c),
            Augment::FlipH => (r, m - c),
            Augment::FlipV => (m - r, c),
            Augment::Rot90 => (c, m - r),
            Augment::Rot180 => (m - r, m - c),
            Augment::Rot270 => (m - c, r),
        }
    }

    /// Transforms one `p × p` plane.
    pub fn apply<T: Copy>(self, src: &[T], p: usize) -> Vec<T> {
        let mut out = Vec::with_capacity(p * p);
        for r in 0..p {
            for c in 0..p {
                let (sr, sc) = self.source(r, c, p);
                out.push(src[sr * p + sc]);
            }
        }
        out
    }
}

impl fmt::Display for Augment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.tag())
    }
}

/// Provenance of one training pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PatchIndex {
    pub volume_id: u32,
    pub z: usize,
    pub row: usize,
    pub col: usize,
    pub aug: Augment,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatchSpec {
    pub patch_size: usize,
    /// Input slices per sample (1 for 2D).
    pub window: usize,
    pub count: usize,
    pub augment: bool,
    pub seed: u64,
    /// Target spans the whole window (3D) instead of the central slice.
    pub full_window_target: bool,
    pub volume_id: u32,
}

/// Paired FBP input patches and residual targets ν = y − x.
///
/// `inputs` is `(N, window, p, p)`; `targets` is `(N, 1, p, p)` or
/// `(N, window, p, p)` for full-window targets.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSet<T> {
    pub inputs: Tensor<T>,
    pub targets: Tensor<T>,
    pub indices: Vec<PatchIndex>,
}

fn check_volume_pair<T: Scalar>(y: &Tensor<T>, x: &Tensor<T>) -> Result<[usize; 3]> {
    if y.rank() != 3 {
        return Err(Error::shape("FBP volume rank", 3, y.rank()));
    }
    y.check_same_shape(x, "reference volume")?;
    Ok([y.shape()[0], y.shape()[1], y.shape()[2]])
}

/// Slice index `z + offset` clamped into the volume (replicate padding).
pub fn clamp_slice(z: usize, offset: isize, slices: usize) -> usize {
    (z as isize + offset).clamp(0, slices as isize - 1) as usize
}

fn crop<T: Scalar>(vol: &Tensor<T>, dims: [usize; 3], z: usize, row: usize, col: usize, p: usize) -> Vec<T> {
    let [_, h, w] = dims;
    let plane = &vol.data()[z * h * w..(z + 1) * h * w];
    let mut out = Vec::with_capacity(p * p);
    for r in row..row + p {
        out.extend_from_slice(&plane[r * w + col..r * w + col + p]);
    }
    out
}

/// Builds the `(input, target)` planes for one provenance record.
fn materialize<T: Scalar>(
    y: &Tensor<T>,
    x: &Tensor<T>,
    dims: [usize; 3],
    idx: &PatchIndex,
    p: usize,
    window: usize,
    full_window_target: bool,
) -> (Vec<T>, Vec<T>) {
    let half = (window / 2) as isize;
    let mut input = Vec::with_capacity(window * p * p);
    let mut target = Vec::new();
    for k in -half..=half {
        let z = clamp_slice(idx.z, k, dims[0]);
        input.extend(idx.aug.apply(&crop(y, dims, z, idx.row, idx.col, p), p));
        if full_window_target || k == 0 {
            let yc = crop(y, dims, z, idx.row, idx.col, p);
            let xc = crop(x, dims, z, idx.row, idx.col, p);
            let nu: Vec<T> = yc.iter().zip(&xc).map(|(&a, &b)| a - b).collect();
            target.extend(idx.aug.apply(&nu, p));
        }
    }
    (input, target)
}

/// Samples `count` patches with uniformly drawn anchors. Sample `i` draws
/// from its own counter-based stream, so the output does not depend on the
/// number of worker threads.
pub fn extract_patches<T: Scalar>(y: &Tensor<T>, x: &Tensor<T>, spec: &PatchSpec) -> Result<PatchSet<T>> {
    let dims = check_volume_pair(y, x)?;
    let [slices, h, w] = dims;
    let p = spec.patch_size;
    if p == 0 || p > h.min(w) {
        return Err(Error::invalid(format!(
            "patch size {p} does not fit a {h}×{w} slice"
        )));
    }
    if spec.window == 0 || spec.window % 2 == 0 || spec.window > slices {
        return Err(Error::invalid(format!(
            "window {} must be odd and at most the slice count {slices}",
            spec.window
        )));
    }
    if spec.count == 0 {
        return Err(Error::invalid("patch count must be at least 1"));
    }
    let indices: Vec<PatchIndex> = (0..spec.count)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(i as u64);
            PatchIndex {
                volume_id: spec.volume_id,
                z: rng.random_range(0..slices),
                row: rng.random_range(0..=h - p),
                col: rng.random_range(0..=w - p),
                aug: if spec.augment {
                    Augment::ALL[rng.random_range(0..Augment::ALL.len())]
                } else {
                    Augment::Identity
                },
            }
        })
        .collect();
    from_indices(y, x, indices, p, spec.window, spec.full_window_target)
}

/// Rebuilds patches from provenance records (all must share one volume).
pub fn from_indices<T: Scalar>(
    y: &Tensor<T>,
    x: &Tensor<T>,
    indices: Vec<PatchIndex>,
    patch_size: usize,
    window: usize,
    full_window_target: bool,
) -> Result<PatchSet<T>> {
    let dims = check_volume_pair(y, x)?;
    let p = patch_size;
    if indices.is_empty() {
        return Err(Error::invalid("no patch indices"));
    }
    if let Some(bad) = indices
        .iter()
        .find(|i| i.z >= dims[0] || i.row + p > dims[1] || i.col + p > dims[2])
    {
        return Err(Error::invalid(format!("patch index {bad:?} outside volume {dims:?}")));
    }
    let pairs: Vec<(Vec<T>, Vec<T>)> = indices
        .par_iter()
        .map(|idx| materialize(y, x, dims, idx, p, window, full_window_target))
        .collect();
    let n = indices.len();
    let tw = if full_window_target { window } else { 1 };
    let mut inputs = Vec::with_capacity(n * window * p * p);
    let mut targets = Vec::with_capacity(n * tw * p * p);
    for (i, t) in pairs {
        inputs.extend(i);
        targets.extend(t);
    }
    Ok(PatchSet {
        inputs: Tensor::new(vec![n, window, p, p], inputs)?,
        targets: Tensor::new(vec![n, tw, p, p], targets)?,
        indices,
    })
}

impl<T: Scalar> PatchSet<T> {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn window(&self) -> usize {
        self.inputs.shape()[1]
    }

    pub fn target_slices(&self) -> usize {
        self.targets.shape()[1]
    }

    pub fn patch_size(&self) -> usize {
        self.inputs.shape()[2]
    }

    pub fn concat(sets: &[PatchSet<T>]) -> Result<Self> {
        let first = sets.first().ok_or_else(|| Error::invalid("nothing to concatenate"))?;
        let mut inputs = Vec::new();
        let mut targets = Vec::new();
        let mut indices = Vec::new();
        for s in sets {
            if s.inputs.shape()[1..] != first.inputs.shape()[1..]
                || s.targets.shape()[1..] != first.targets.shape()[1..]
            {
                return Err(Error::invalid("patch sets differ in window or patch size"));
            }
            inputs.extend_from_slice(s.inputs.data());
            targets.extend_from_slice(s.targets.data());
            indices.extend_from_slice(&s.indices);
        }
        let n = indices.len();
        let mut ishape = first.inputs.shape().to_vec();
        let mut tshape = first.targets.shape().to_vec();
        ishape[0] = n;
        tshape[0] = n;
        Ok(PatchSet {
            inputs: Tensor::new(ishape, inputs)?,
            targets: Tensor::new(tshape, targets)?,
            indices,
        })
    }

    /// Gathers samples `ids` (in the given order) into a new set.
    pub fn select(&self, ids: &[usize]) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::invalid("empty selection"));
        }
        let gather = |t: &Tensor<T>| -> Result<Tensor<T>> {
            let mut data = Vec::with_capacity(ids.len() * t.len() / t.shape()[0]);
            for &i in ids {
                data.extend_from_slice(t.outer(i));
            }
            let mut shape = t.shape().to_vec();
            shape[0] = ids.len();
            Tensor::new(shape, data)
        };
        Ok(PatchSet {
            inputs: gather(&self.inputs)?,
            targets: gather(&self.targets)?,
            indices: ids.iter().map(|&i| self.indices[i]).collect(),
        })
    }

    /// Writes `<stem>.inputs.vol`, `<stem>.targets.vol` (planes stacked along
    /// z, normalized units) and `<stem>.index.csv`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        let p = self.patch_size();
        let to_vol = |t: &Tensor<T>| -> Result<VolumeHU> {
            VolumeHU::new(
                [t.len() / (p * p), p, p],
                t.data().iter().map(|v| v.as_f64() as f32).collect(),
            )
        };
        let extra = vec![
            ("patch_count".to_string(), self.len().to_string()),
            ("window".to_string(), self.window().to_string()),
            ("target_slices".to_string(), self.target_slices().to_string()),
        ];
        write_volume(&dir.join(format!("{stem}.inputs.vol")), &to_vol(&self.inputs)?, &extra)?;
        write_volume(&dir.join(format!("{stem}.targets.vol")), &to_vol(&self.targets)?, &extra)?;
        let mut csv = String::from("volume_id,z,row,col,aug_tag\n");
        for i in &self.indices {
            csv.push_str(&format!("{},{},{},{},{}\n", i.volume_id, i.z, i.row, i.col, i.aug));
        }
        let path = dir.join(format!("{stem}.index.csv"));
        std::fs::write(&path, csv).map_err(|e| Error::io(&path, e))
    }

    /// Reads a set written by [`PatchSet::write`].
    pub fn read(dir: &Path, stem: &str) -> Result<Self> {
        let (iv, meta) = read_volume(&dir.join(format!("{stem}.inputs.vol")))?;
        let (tv, _) = read_volume(&dir.join(format!("{stem}.targets.vol")))?;
        let get = |k: &str| -> Result<usize> {
            meta.iter()
                .find(|(key, _)| key == k)
                .and_then(|(_, v)| v.parse().ok())
                .ok_or_else(|| Error::invalid(format!("patch volume lacks meta.{k}")))
        };
        let (n, w, tw, p) = (get("patch_count")?, get("window")?, get("target_slices")?, iv.dims[1]);
        let path = dir.join(format!("{stem}.index.csv"));
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let bad = |line: &str| Error::invalid(format!("bad index row `{line}` in {}", path.display()));
        let indices = text
            .lines()
            .skip(1)
            .filter(|l| !l.trim().is_empty())
            .map(|line| {
                let f: Vec<&str> = line.split(',').collect();
                if f.len() != 5 {
                    return Err(bad(line));
                }
                let num = |s: &str| s.trim().parse::<usize>().map_err(|_| bad(line));
                Ok(PatchIndex {
                    volume_id: num(f[0])? as u32,
                    z: num(f[1])?,
                    row: num(f[2])?,
                    col: num(f[3])?,
                    aug: Augment::from_tag(num(f[4])? as u8).ok_or_else(|| bad(line))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if indices.len() != n {
            return Err(Error::shape("patch index rows", n, indices.len()));
        }
        let cast = |v: VolumeHU| v.voxels.into_iter().map(|x| T::of(x as f64)).collect();
        Ok(PatchSet {
            inputs: Tensor::new(vec![n, w, p, p], cast(iv))?,
            targets: Tensor::new(vec![n, tw, p, p], cast(tv))?,
            indices,
        })
    }
}
