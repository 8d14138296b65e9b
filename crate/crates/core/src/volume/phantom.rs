//! Procedural CT-like phantoms.
//!
//! A soft-tissue body ellipsoid sits on an air background. Organs are
//! deformed ellipsoids placed at canonical positions in the body frame, each
//! with a per-phantom affine jitter. Labels 1 and 2 are the twin pair: when
//! `twin_pair` is set they share one intensity distribution and differ only by
//! where they sit in the body, so telling them apart needs spatial context.

use super::{LabelVolume, Result, Volume, VolumeError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

/// Labels of the twin organ pair.
pub const TWIN_CLASSES: [usize; 2] = [1, 2];

const AIR_HU: f64 = -1000.0;
const BODY_HU: f64 = -80.0;
/// Body semi-axes as a fraction of the half extent per axis.
const BODY_FRACTION: [f64; 3] = [0.85, 0.70, 0.90];
const MAX_ATTEMPTS: usize = 4;

struct OrganSpec {
    /// Center in body-normalized coordinates.
    center: [f64; 3],
    /// Semi-axes as fractions of the body semi-axes.
    radii: [f64; 3],
    hu: f64,
}

const ORGANS: [OrganSpec; 8] = [
    OrganSpec { center: [-0.45, 0.30, -0.25], radii: [0.22, 0.22, 0.28], hu: 150.0 },
    OrganSpec { center: [0.45, 0.30, -0.25], radii: [0.22, 0.22, 0.28], hu: 150.0 },
    OrganSpec { center: [-0.35, -0.15, 0.35], radii: [0.38, 0.35, 0.30], hu: 60.0 },
    OrganSpec { center: [0.45, 0.05, 0.40], radii: [0.18, 0.20, 0.22], hu: 100.0 },
    OrganSpec { center: [0.0, 0.62, 0.0], radii: [0.12, 0.14, 0.75], hu: 400.0 },
    OrganSpec { center: [0.0, -0.10, -0.65], radii: [0.20, 0.20, 0.18], hu: 10.0 },
    OrganSpec { center: [0.20, -0.50, 0.30], radii: [0.16, 0.15, 0.14], hu: 30.0 },
    OrganSpec { center: [0.05, -0.10, 0.80], radii: [0.22, 0.22, 0.12], hu: 230.0 },
];

/// Intensity of the second twin when the pair is not forced to match.
const UNTWINNED_HU: f64 = 190.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomConfig {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub organ_count: usize,
    pub twin_pair: bool,
    /// Affine and deformation magnitude in `[0, 1]`.
    pub jitter: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            dims: [96, 96, 96],
            spacing: [2.0, 2.0, 2.0],
            organ_count: 5,
            twin_pair: true,
            jitter: 0.5,
            noise_sigma: 20.0,
            seed: 0,
        }
    }
}

impl PhantomConfig {
    pub fn class_count(&self) -> usize {
        self.organ_count + 1
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(VolumeError::BadPhantomConfig(m));
        if self.organ_count == 0 || self.organ_count > ORGANS.len() {
            return bad(format!("organ_count must be in 1..={}", ORGANS.len()));
        }
        if self.twin_pair && self.organ_count < 2 {
            return bad("twin_pair needs at least 2 organs".into());
        }
        if !(0.0..=1.0).contains(&self.jitter) {
            return bad(format!("jitter {} outside [0, 1]", self.jitter));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return bad(format!("noise_sigma {} invalid", self.noise_sigma));
        }
        if self.dims.iter().any(|&d| d == 0) {
            return Err(VolumeError::BadDims(self.dims));
        }
        if self.spacing.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
            return Err(VolumeError::BadSpacing(self.spacing));
        }
        Ok(())
    }
}

type Mat3 = [[f64; 3]; 3];

fn rotation(ax: f64, ay: f64, az: f64) -> Mat3 {
    let (sx, cx) = ax.sin_cos();
    let (sy, cy) = ay.sin_cos();
    let (sz, cz) = az.sin_cos();
    // Rz * Ry * Rx
    [
        [cz * cy, cz * sy * sx - sz * cx, cz * sy * cx + sz * sx],
        [sz * cy, sz * sy * sx + cz * cx, sz * sy * cx - cz * sx],
        [-sy, cy * sx, cy * cx],
    ]
}

fn transpose_mul(r: &Mat3, p: [f64; 3]) -> [f64; 3] {
    std::array::from_fn(|i| r[0][i] * p[0] + r[1][i] * p[1] + r[2][i] * p[2])
}

fn unit_vector(rng: &mut ChaCha8Rng) -> [f64; 3] {
    loop {
        let v: [f64; 3] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 0.1 && n <= 1.0 {
            return v.map(|c| c / n);
        }
    }
}

/// One placed organ: an ellipsoid in a rotated frame whose radius is
/// modulated by a sum of low-frequency waves over the direction sphere.
struct Placed {
    center: [f64; 3],
    radii: [f64; 3],
    rot: Mat3,
    waves: [([f64; 3], f64, f64); 3],
    amplitude: f64,
}

impl Placed {
    fn draw(spec: &OrganSpec, body: &Body, jitter: f64, rng: &mut ChaCha8Rng) -> Self {
        let mut u = |scale: f64| rng.random_range(-1.0..=1.0) * scale * jitter;
        let center = std::array::from_fn(|a| {
            body.center[a] + (spec.center[a] + u(0.08)) * body.semi[a]
        });
        let radii = std::array::from_fn(|a| spec.radii[a] * body.semi[a] * (1.0 + u(0.15)));
        let deg = std::f64::consts::PI / 180.0;
        let rot = rotation(u(15.0 * deg), u(15.0 * deg), u(15.0 * deg));
        let waves = std::array::from_fn(|_| {
            let dir = unit_vector(rng);
            let freq = rng.random_range(1.5..3.0);
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            (dir, freq, phase)
        });
        Self {
            center,
            radii,
            rot,
            waves,
            amplitude: 0.12 * jitter,
        }
    }

    fn contains(&self, p: [f64; 3]) -> bool {
        let d = [0, 1, 2].map(|a| p[a] - self.center[a]);
        let local = transpose_mul(&self.rot, d);
        let n = [0, 1, 2].map(|a| local[a] / self.radii[a]);
        let r = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
        let limit = 1.0 + self.amplitude;
        if r >= limit {
            return false;
        }
        if r == 0.0 || self.amplitude == 0.0 {
            return r < 1.0;
        }
        let dir = n.map(|c| c / r);
        let g: f64 = self
            .waves
            .iter()
            .map(|(w, f, ph)| (f * (w[0] * dir[0] + w[1] * dir[1] + w[2] * dir[2]) * std::f64::consts::PI + ph).sin())
            .sum::<f64>()
            / 3.0;
        r < 1.0 + self.amplitude * g
    }

    fn bound(&self) -> f64 {
        self.radii.iter().cloned().fold(0.0, f64::max) * (1.0 + self.amplitude)
    }
}

struct Body {
    center: [f64; 3],
    semi: [f64; 3],
}

impl Body {
    fn contains(&self, p: [f64; 3]) -> bool {
        (0..3)
            .map(|a| ((p[a] - self.center[a]) / self.semi[a]).powi(2))
            .sum::<f64>()
            < 1.0
    }
}

fn voxel_center(i: usize, s: f64) -> f64 {
    (i as f64 + 0.5) * s
}

/// Generates a seeded phantom and its label map (labels `1..=organ_count`).
pub fn generate_phantom(cfg: &PhantomConfig) -> Result<(Volume, LabelVolume)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let dims = cfg.dims;
    let s = cfg.spacing;
    let n: usize = dims.iter().product();

    let mut jitter = cfg.jitter;
    let mut attempt = 0;
    let (labels, organ_hu) = loop {
        attempt += 1;
        let half = [0, 1, 2].map(|a| 0.5 * dims[a] as f64 * s[a]);
        let body = Body {
            center: std::array::from_fn(|a| half[a] * (1.0 + rng.random_range(-0.05..=0.05) * jitter)),
            semi: std::array::from_fn(|a| {
                BODY_FRACTION[a] * half[a] * (1.0 + rng.random_range(-0.08..=0.08) * jitter)
            }),
        };
        let organs: Vec<Placed> = ORGANS[..cfg.organ_count]
            .iter()
            .map(|spec| Placed::draw(spec, &body, jitter, &mut rng))
            .collect();
        let mut organ_hu: Vec<f64> = ORGANS[..cfg.organ_count]
            .iter()
            .map(|spec| spec.hu + rng.random_range(-8.0..=8.0) * jitter)
            .collect();
        if cfg.organ_count >= 2 {
            organ_hu[1] = if cfg.twin_pair { organ_hu[0] } else { UNTWINNED_HU };
        }

        let mut labels = vec![0u8; n];
        let inside_body = |x: usize, y: usize, z: usize| {
            body.contains([voxel_center(x, s[0]), voxel_center(y, s[1]), voxel_center(z, s[2])])
        };
        // body marker 255, replaced below
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    if inside_body(x, y, z) {
                        labels[(z * dims[1] + y) * dims[0] + x] = u8::MAX;
                    }
                }
            }
        }
        let mut counts = vec![0usize; cfg.organ_count];
        for (k, organ) in organs.iter().enumerate() {
            let b = organ.bound();
            let range = |a: usize| {
                let lo = ((organ.center[a] - b) / s[a]).floor().max(0.0) as usize;
                let hi = (((organ.center[a] + b) / s[a]).ceil().max(0.0) as usize).min(dims[a]);
                lo..hi
            };
            for z in range(2) {
                for y in range(1) {
                    for x in range(0) {
                        let idx = (z * dims[1] + y) * dims[0] + x;
                        if labels[idx] == 0 {
                            continue;
                        }
                        let p = [voxel_center(x, s[0]), voxel_center(y, s[1]), voxel_center(z, s[2])];
                        if organ.contains(p) {
                            labels[idx] = (k + 1) as u8;
                        }
                    }
                }
            }
        }
        for &l in &labels {
            if l != 0 && l != u8::MAX {
                counts[l as usize - 1] += 1;
            }
        }
        match counts.iter().position(|&c| c == 0) {
            None => break (labels, organ_hu),
            Some(organ) if attempt >= MAX_ATTEMPTS => {
                return Err(VolumeError::OrganOutsideBody {
                    organ: organ + 1,
                    attempts: attempt,
                })
            }
            Some(_) => jitter *= 0.5,
        }
    };

    let noise = Normal::new(0.0, cfg.noise_sigma.max(0.0)).expect("sigma is finite");
    let mut intensity = Vec::with_capacity(n);
    let mut out_labels = labels;
    for l in out_labels.iter_mut() {
        let base = match *l {
            0 => AIR_HU,
            u8::MAX => {
                *l = 0;
                BODY_HU
            }
            k => organ_hu[k as usize - 1],
        };
        let eps = if cfg.noise_sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 };
        intensity.push((base + eps) as f32);
    }

    Ok((
        Volume::new(dims, s, intensity)?,
        LabelVolume::new(dims, s, out_labels, cfg.class_count())?,
    ))
}

/// Body mask of a phantom, recomputed from its intensities: everything
/// denser than the air/fat midpoint.
#[cfg(test)]
fn body_like(v: &Volume) -> Vec<bool> {
    v.data().iter().map(|&x| x > -540.0).collect()
}
