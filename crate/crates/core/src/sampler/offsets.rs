use super::{Axis, DescriptorLayout, GRID_COUNT, GRID_SAMPLES};

/// Round half away from zero.
#[inline]
pub fn round_half_away(x: f64) -> i64 {
    x.round() as i64
}

/// Per-axis voxel steps of one grid, in loop order (slowest first).
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct GridLoops {
    pub axes: [Axis; 3],
    pub steps: [Vec<i64>; 3],
}

/// Voxel offsets of every descriptor sample for one volume geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct OffsetTable {
    dims: [usize; 3],
    spacing: [f64; 3],
    triples: Vec<[i64; 3]>,
    flat: Vec<isize>,
    margin: [usize; 3],
    pub(crate) loops: Vec<GridLoops>,
}

impl OffsetTable {
    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    /// Voxel-offset triples `(dx, dy, dz)` of grid `g`, in value order.
    pub fn grid_triples(&self, g: usize) -> &[[i64; 3]] {
        &self.triples[g * GRID_SAMPLES..(g + 1) * GRID_SAMPLES]
    }

    pub fn triples(&self) -> &[[i64; 3]] {
        &self.triples
    }

    /// Linear-index offsets; valid only for interior queries.
    pub fn flat_offsets(&self) -> &[isize] {
        &self.flat
    }

    /// Largest absolute voxel offset per axis over all grids.
    pub fn interior_margin(&self) -> [usize; 3] {
        self.margin
    }

    /// Whether every sample around `q` lands inside the volume.
    #[inline]
    pub fn is_interior(&self, q: [usize; 3]) -> bool {
        (0..3).all(|a| q[a] >= self.margin[a] && q[a] + self.margin[a] < self.dims[a])
    }
}

/// Converts the layout's mm offsets to voxel offsets for `dims`/`spacing`.
pub fn build_offset_table(
    layout: &DescriptorLayout,
    dims: [usize; 3],
    spacing: [f64; 3],
) -> OffsetTable {
    assert!(
        spacing.iter().all(|&s| s.is_finite() && s > 0.0),
        "spacing must be positive"
    );
    let to_voxels = |mm: f64, axis: usize| round_half_away(mm / spacing[axis]);
    let stride = [1isize, dims[0] as isize, (dims[0] * dims[1]) as isize];

    let mut triples = Vec::with_capacity(GRID_COUNT * GRID_SAMPLES);
    let mut loops = Vec::with_capacity(GRID_COUNT);
    for grid in layout.grids() {
        for mm in grid.offsets_mm() {
            triples.push([0, 1, 2].map(|a| to_voxels(mm[a], a)));
        }
        let spec_loops = grid.loops();
        loops.push(GridLoops {
            axes: spec_loops.clone().map(|(a, _)| a),
            steps: spec_loops.map(|(a, steps)| {
                steps
                    .iter()
                    .map(|&i| to_voxels(i as f64 * grid.spacing_mm, a.index()))
                    .collect()
            }),
        });
    }
    let flat = triples
        .iter()
        .map(|t| (0..3).map(|a| t[a] as isize * stride[a]).sum())
        .collect();
    let margin = [0, 1, 2].map(|a| {
        triples
            .iter()
            .map(|t| t[a].unsigned_abs() as usize)
            .max()
            .unwrap_or(0)
    });
    OffsetTable {
        dims,
        spacing,
        triples,
        flat,
        margin,
        loops,
    }
}
