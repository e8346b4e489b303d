use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::volume::VolumeHU;
use crate::error::{Error, Result};

/// Minimum volume accepted by [`generate_phantom_volume`].
pub const MIN_PHANTOM_DIMS: [usize; 3] = [8, 32, 32];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ellipse {
    /// Center in the unit field of view `[-1, 1]²` (x right, y up).
    pub center: (f64, f64),
    pub semi_axes: (f64, f64),
    /// Counter-clockwise rotation in radians.
    pub rotation: f64,
    pub hu: f64,
}

impl Ellipse {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.center.0, y - self.center.1);
        let (s, c) = self.rotation.sin_cos();
        let u = (dx * c + dy * s) / self.semi_axes.0;
        let v = (-dx * s + dy * c) / self.semi_axes.1;
        u * u + v * v <= 1.0
    }
}

/// Ellipses painted in order over a uniform background; later ellipses
/// overwrite earlier ones where they overlap.
#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    pub ellipses: Vec<Ellipse>,
    pub background_hu: f64,
}

impl Phantom {
    pub fn new(ellipses: Vec<Ellipse>, background_hu: f64) -> Result<Self> {
        for (i, e) in ellipses.iter().enumerate() {
            if !(e.semi_axes.0 > 0.0 && e.semi_axes.1 > 0.0) {
                return Err(Error::invalid(format!("ellipse {i}: semi-axes must be positive")));
            }
            let reach = e.center.0.hypot(e.center.1) + e.semi_axes.0.max(e.semi_axes.1);
            if reach > 1.0 + 1e-9 {
                return Err(Error::invalid(format!(
                    "ellipse {i} extends outside the unit field of view (reach {reach:.3})"
                )));
            }
        }
        Ok(Phantom {
            ellipses,
            background_hu,
        })
    }

    pub fn value_at(&self, x: f64, y: f64) -> f64 {
        self.ellipses
            .iter()
            .rev()
            .find(|e| e.contains(x, y))
            .map_or(self.background_hu, |e| e.hu)
    }

    /// Samples the phantom at pixel centers of an `h × w` grid covering
    /// `[-1, 1]²`.
    pub fn rasterize(&self, h: usize, w: usize) -> Vec<f32> {
        let mut out = Vec::with_capacity(h * w);
        for r in 0..h {
            for c in 0..w {
                let (x, y) = pixel_center(r, c, h, w);
                out.push(self.value_at(x, y) as f32);
            }
        }
        out
    }
}

/// Unit-field coordinates of pixel `(row, col)`.
pub fn pixel_center(row: usize, col: usize, h: usize, w: usize) -> (f64, f64) {
    (
        (2 * col + 1) as f64 / w as f64 - 1.0,
        1.0 - (2 * row + 1) as f64 / h as f64,
    )
}

/// An ellipsoidal structure: its cross-section at height `z` (in `[-1, 1]`)
/// is the base ellipse scaled by `√(1 − ((z − z_center)/z_radius)²)`, with a
/// slow drift of center and rotation along z.
#[derive(Debug, Clone, Copy)]
struct Structure {
    base: Ellipse,
    z_center: f64,
    z_radius: f64,
    drift: (f64, f64),
    twist: f64,
}

impl Structure {
    fn at(&self, z: f64) -> Option<Ellipse> {
        let t = (z - self.z_center) / self.z_radius;
        if t.abs() >= 1.0 {
            return None;
        }
        let scale = (1.0 - t * t).sqrt();
        let b = self.base;
        Some(Ellipse {
            center: (b.center.0 + self.drift.0 * z, b.center.1 + self.drift.1 * z),
            semi_axes: (b.semi_axes.0 * scale, b.semi_axes.1 * scale),
            rotation: b.rotation + self.twist * z,
            hu: b.hu,
        })
        .filter(|e| e.semi_axes.0 > 1e-3 && e.semi_axes.1 > 1e-3)
    }
}

fn random_structures(rng: &mut ChaCha8Rng) -> Vec<Structure> {
    let mut v = Vec::new();
    // body outline: always present, soft-tissue level
    v.push(Structure {
        base: Ellipse {
            center: (0.0, 0.0),
            semi_axes: (rng.random_range(0.72..0.80), rng.random_range(0.58..0.68)),
            rotation: rng.random_range(-0.1..0.1),
            hu: rng.random_range(950.0..1050.0),
        },
        z_center: 0.0,
        z_radius: 50.0,
        drift: (0.0, 0.0),
        twist: 0.0,
    });
    // organs: a mix of in-mask soft tissue, low-density and bone-like inserts
    let organs = rng.random_range(6..10);
    for i in 0..organs {
        let hu = match i % 4 {
            0 => rng.random_range(1500.0..1900.0),
            1 => rng.random_range(200.0..500.0),
            _ => rng.random_range(750.0..1350.0),
        };
        let r = rng.random_range(0.0..0.38);
        let phi = rng.random_range(0.0..std::f64::consts::TAU);
        let a = rng.random_range(0.06..0.2);
        let b = rng.random_range(0.05..0.18);
        v.push(Structure {
            base: Ellipse {
                center: (r * phi.cos(), 0.8 * r * phi.sin()),
                semi_axes: (a, b),
                rotation: rng.random_range(0.0..std::f64::consts::PI),
                hu,
            },
            z_center: rng.random_range(-0.8..0.8),
            z_radius: rng.random_range(0.9..2.0),
            drift: (rng.random_range(-0.04..0.04), rng.random_range(-0.04..0.04)),
            twist: rng.random_range(-0.2..0.2),
        });
    }
    v
}

/// Generates a smoothly z-varying ellipse phantom in HU (values within
/// `[0, 2000]`, background 0). Returns the per-slice phantom description and
/// the rasterized volume.
pub fn generate_phantom_volume(seed: u64, dims: [usize; 3]) -> Result<(Vec<Phantom>, VolumeHU)> {
    if dims
        .iter()
        .zip(MIN_PHANTOM_DIMS)
        .any(|(&d, min)| d < min)
    {
        return Err(Error::invalid(format!(
            "phantom dims {dims:?} below minimum {MIN_PHANTOM_DIMS:?}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let structures = random_structures(&mut rng);
    let [nz, h, w] = dims;
    let mut phantoms = Vec::with_capacity(nz);
    let mut voxels = Vec::with_capacity(nz * h * w);
    for z in 0..nz {
        let zc = (2 * z + 1) as f64 / nz as f64 - 1.0;
        let ellipses = structures
            .iter()
            .filter_map(|s| s.at(zc))
            .filter(|e| e.center.0.hypot(e.center.1) + e.semi_axes.0.max(e.semi_axes.1) <= 1.0)
            .collect();
        let p = Phantom::new(ellipses, 0.0)?;
        voxels.extend(p.rasterize(h, w));
        phantoms.push(p);
    }
    Ok((phantoms, VolumeHU::new(dims, voxels)?))
}
