//! Hierarchical sparse descriptors.
//!
//! A descriptor is nine grids of 729 samples each, gathered around a query
//! voxel: three orthogonal 27×27 planes at 4 mm, then six 9×9×9 cubes at
//! 2, 3, 5, 12, 28 and 64 mm. Millimetre offsets are turned into voxel
//! offsets once per volume geometry ([`OffsetTable`]) so that sampling an
//! interior query is a pure sequence of memory lookups.

mod gather;
mod mosaic;
mod offsets;
mod window;

pub use gather::{
    sample_descriptor, sample_descriptor_checked, sample_into, BoundsTrap, CountingVolume,
    Descriptor, VoxelSource,
};
pub use mosaic::{descriptor_to_mosaic, Mosaic, MOSAIC_SIDE};
pub use offsets::{build_offset_table, round_half_away, OffsetTable};
pub use window::{sample_label_window, LabelWindow, WINDOW_LEN, WINDOW_OFFSETS_MM, WINDOW_SIDE};

use thiserror::Error;

/// Samples per grid (27·27 = 9·9·9).
pub const GRID_SAMPLES: usize = 729;
pub const GRID_COUNT: usize = 9;
/// Values per descriptor.
pub const DESCRIPTOR_LEN: usize = GRID_COUNT * GRID_SAMPLES;
/// Index of the finest (2 mm) cube, which doubles as the local window grid.
pub const LOCAL_GRID: usize = 3;

pub const PLANE_SIDE: usize = 27;
pub const CUBE_SIDE: usize = 9;
pub const PLANE_SPACING_MM: f64 = 4.0;
pub const CUBE_SPACINGS_MM: [f64; 6] = [2.0, 3.0, 5.0, 12.0, 28.0, 64.0];

#[derive(Debug, Error, PartialEq)]
pub enum SampleError {
    #[error("query {query:?} outside volume dims {dims:?}")]
    QueryOutside { query: [usize; 3], dims: [usize; 3] },
    #[error("offset table built for dims {table:?}, volume has {volume:?}")]
    TableMismatch { table: [usize; 3], volume: [usize; 3] },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Axis {
    X = 0,
    Y = 1,
    Z = 2,
}

impl Axis {
    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GridKind {
    /// A square grid in the plane orthogonal to `normal`.
    Plane { normal: Axis },
    Cube,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub kind: GridKind,
    /// Samples per side: 27 for planes, 9 for cubes.
    pub size: usize,
    pub spacing_mm: f64,
}

impl GridSpec {
    pub fn plane(normal: Axis) -> Self {
        Self {
            kind: GridKind::Plane { normal },
            size: PLANE_SIDE,
            spacing_mm: PLANE_SPACING_MM,
        }
    }

    pub fn cube(spacing_mm: f64) -> Self {
        Self {
            kind: GridKind::Cube,
            size: CUBE_SIDE,
            spacing_mm,
        }
    }

    pub fn sample_count(&self) -> usize {
        match self.kind {
            GridKind::Plane { .. } => self.size * self.size,
            GridKind::Cube => self.size * self.size * self.size,
        }
    }

    /// Largest absolute mm offset from the query along any sampled axis.
    pub fn half_extent_mm(&self) -> f64 {
        (self.size - 1) as f64 / 2.0 * self.spacing_mm
    }

    /// Loop structure in value order, slowest axis first. Each entry is an
    /// axis and the sample indices along it, centred on zero.
    ///
    /// Planes iterate their two free axes row-major (the higher-numbered
    /// axis is the row); the normal axis appears as a single zero step.
    /// Cubes iterate z, y, x.
    pub(crate) fn loops(&self) -> [(Axis, Vec<i64>); 3] {
        let half = (self.size / 2) as i64;
        let steps: Vec<i64> = (-half..=half).collect();
        match self.kind {
            GridKind::Cube => [
                (Axis::Z, steps.clone()),
                (Axis::Y, steps.clone()),
                (Axis::X, steps),
            ],
            GridKind::Plane { normal } => {
                let (row, col) = match normal {
                    Axis::Z => (Axis::Y, Axis::X),
                    Axis::Y => (Axis::Z, Axis::X),
                    Axis::X => (Axis::Z, Axis::Y),
                };
                [(row, steps.clone()), (normal, vec![0]), (col, steps)]
            }
        }
    }

    /// Millimetre offsets of every sample, in value order.
    pub fn offsets_mm(&self) -> Vec<[f64; 3]> {
        let [(a0, s0), (a1, s1), (a2, s2)] = self.loops();
        let mut out = Vec::with_capacity(self.sample_count());
        for &i in &s0 {
            for &j in &s1 {
                for &k in &s2 {
                    let mut o = [0.0; 3];
                    o[a0.index()] = i as f64 * self.spacing_mm;
                    o[a1.index()] = j as f64 * self.spacing_mm;
                    o[a2.index()] = k as f64 * self.spacing_mm;
                    out.push(o);
                }
            }
        }
        out
    }
}

/// Ordered list of the nine grids making up a descriptor.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorLayout {
    grids: [GridSpec; GRID_COUNT],
}

impl DescriptorLayout {
    pub fn grids(&self) -> &[GridSpec; GRID_COUNT] {
        &self.grids
    }

    pub fn total_len(&self) -> usize {
        self.grids.iter().map(GridSpec::sample_count).sum()
    }
}

/// Planes orthogonal to z, y, x at 4 mm, then cubes from 2 mm to 64 mm.
pub fn default_layout() -> DescriptorLayout {
    let c = CUBE_SPACINGS_MM;
    DescriptorLayout {
        grids: [
            GridSpec::plane(Axis::Z),
            GridSpec::plane(Axis::Y),
            GridSpec::plane(Axis::X),
            GridSpec::cube(c[0]),
            GridSpec::cube(c[1]),
            GridSpec::cube(c[2]),
            GridSpec::cube(c[3]),
            GridSpec::cube(c[4]),
            GridSpec::cube(c[5]),
        ],
    }
}
