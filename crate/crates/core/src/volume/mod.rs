//! Scalar volumes, label maps, and everything that produces them: intensity
//! normalization, raw and NIfTI-1 I/O, the phantom generator, and the
//! train/test splitter.
//!
//! Voxel storage is row-major with x fastest: the linear index of `(x, y, z)`
//! is `(z * ny + y) * nx + x`. Voxel `i` along an axis with spacing `s`
//! occupies the physical interval `[i * s, (i + 1) * s)` mm.

mod nifti;
mod normalize;
mod phantom;
mod raw;
mod split;

pub use nifti::{load_nifti, write_nifti_f32, NiftiDatatype, NiftiError, NiftiImage};
pub use normalize::{hu_from_unit, normalize_intensity, HU_MAX, HU_MIN};
pub use phantom::{generate_phantom, PhantomConfig, TWIN_CLASSES};
pub use raw::{
    load_raw, load_raw_file, load_raw_labels, load_raw_labels_file, save_raw, save_raw_file,
    save_raw_labels, save_raw_labels_file, RawHeader, RawKind,
};
pub use split::dataset_split;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum VolumeError {
    #[error("dims must be positive, got {0:?}")]
    BadDims([usize; 3]),
    #[error("spacing must be positive and finite, got {0:?}")]
    BadSpacing([f64; 3]),
    #[error("data length {found} does not match dims product {expected}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("label {label} out of range for {class_count} classes")]
    LabelOutOfRange { label: u8, class_count: u8 },
    #[error("class count must be at least 2, got {0}")]
    BadClassCount(usize),
    #[error("geometry mismatch: {0}")]
    GeometryMismatch(String),
    #[error("invalid raw header: {0}")]
    BadHeader(String),
    #[error("invalid phantom config: {0}")]
    BadPhantomConfig(String),
    #[error("phantom organ {organ} left the body after {attempts} attempts")]
    OrganOutsideBody { organ: usize, attempts: usize },
    #[error("cannot split {0} ids into non-empty train and test sets")]
    SplitTooSmall(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = VolumeError> = std::result::Result<T, E>;

fn check_geometry(dims: [usize; 3], spacing: [f64; 3]) -> Result<()> {
    if dims.iter().any(|&d| d == 0) {
        return Err(VolumeError::BadDims(dims));
    }
    if spacing.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
        return Err(VolumeError::BadSpacing(spacing));
    }
    Ok(())
}

#[inline]
pub fn linear_index(dims: [usize; 3], x: usize, y: usize, z: usize) -> usize {
    (z * dims[1] + y) * dims[0] + x
}

/// Dense 3-D scalar grid with per-axis physical spacing in mm.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    dims: [usize; 3],
    spacing: [f64; 3],
    data: Vec<f32>,
}

impl Volume {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], data: Vec<f32>) -> Result<Self> {
        check_geometry(dims, spacing)?;
        let expected = dims.iter().product();
        if data.len() != expected {
            return Err(VolumeError::LengthMismatch {
                expected,
                found: data.len(),
            });
        }
        Ok(Self {
            dims,
            spacing,
            data,
        })
    }

    pub fn filled(dims: [usize; 3], spacing: [f64; 3], value: f32) -> Result<Self> {
        let n = dims.iter().product();
        Self::new(dims, spacing, vec![value; n])
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Physical extent per axis in mm.
    pub fn extent_mm(&self) -> [f64; 3] {
        [0, 1, 2].map(|a| self.dims[a] as f64 * self.spacing[a])
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.data[linear_index(self.dims, x, y, z)]
    }

    pub fn contains(&self, q: [usize; 3]) -> bool {
        q.iter().zip(self.dims).all(|(&c, d)| c < d)
    }

    pub fn same_geometry(&self, labels: &LabelVolume) -> bool {
        self.dims == labels.dims() && self.spacing == labels.spacing()
    }
}

/// Dense integer label map; label 0 is background.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelVolume {
    dims: [usize; 3],
    spacing: [f64; 3],
    labels: Vec<u8>,
    class_count: u8,
}

impl LabelVolume {
    pub fn new(
        dims: [usize; 3],
        spacing: [f64; 3],
        labels: Vec<u8>,
        class_count: usize,
    ) -> Result<Self> {
        check_geometry(dims, spacing)?;
        if !(2..=255).contains(&class_count) {
            return Err(VolumeError::BadClassCount(class_count));
        }
        let class_count = class_count as u8;
        let expected = dims.iter().product();
        if labels.len() != expected {
            return Err(VolumeError::LengthMismatch {
                expected,
                found: labels.len(),
            });
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= class_count) {
            return Err(VolumeError::LabelOutOfRange { label, class_count });
        }
        Ok(Self {
            dims,
            spacing,
            labels,
            class_count,
        })
    }

    pub fn background(dims: [usize; 3], spacing: [f64; 3], class_count: usize) -> Result<Self> {
        let n = dims.iter().product();
        Self::new(dims, spacing, vec![0; n], class_count)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn class_count(&self) -> usize {
        self.class_count as usize
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> u8 {
        self.labels[linear_index(self.dims, x, y, z)]
    }

    pub fn contains(&self, q: [usize; 3]) -> bool {
        q.iter().zip(self.dims).all(|(&c, d)| c < d)
    }

    /// Voxel count per class.
    pub fn histogram(&self) -> Vec<usize> {
        let mut h = vec![0usize; self.class_count()];
        for &l in &self.labels {
            h[l as usize] += 1;
        }
        h
    }

    /// Writes one label; the caller guarantees `label < class_count`.
    pub(crate) fn set_linear(&mut self, idx: usize, label: u8) {
        debug_assert!(label < self.class_count);
        self.labels[idx] = label;
    }
}
