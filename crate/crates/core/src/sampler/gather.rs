use super::{Axis, OffsetTable, SampleError, DESCRIPTOR_LEN, GRID_SAMPLES};
use crate::volume::{linear_index, Volume};
use std::sync::atomic::{AtomicU64, Ordering};

/// Value substituted for samples that fall outside the volume (normalized air).
pub const PAD_VALUE: f32 = 0.0;

/// Read access to voxel intensities. Implemented by [`Volume`] and by the
/// instrumented wrappers used to audit the gather paths.
pub trait VoxelSource: Sync {
    fn dims(&self) -> [usize; 3];

    fn read_linear(&self, idx: usize) -> f32;

    #[inline]
    fn read_at(&self, x: usize, y: usize, z: usize) -> f32 {
        self.read_linear(linear_index(self.dims(), x, y, z))
    }

    /// Called once per run of `n` padded samples.
    #[inline]
    fn note_pad(&self, _n: usize) {}
}

impl VoxelSource for Volume {
    #[inline]
    fn dims(&self) -> [usize; 3] {
        Volume::dims(self)
    }

    #[inline]
    fn read_linear(&self, idx: usize) -> f32 {
        self.data()[idx]
    }
}

/// Counts every voxel read and every padded sample.
pub struct CountingVolume<'a> {
    inner: &'a Volume,
    reads: AtomicU64,
    pads: AtomicU64,
}

impl<'a> CountingVolume<'a> {
    pub fn new(inner: &'a Volume) -> Self {
        Self {
            inner,
            reads: AtomicU64::new(0),
            pads: AtomicU64::new(0),
        }
    }

    pub fn reads(&self) -> u64 {
        self.reads.load(Ordering::Relaxed)
    }

    pub fn pads(&self) -> u64 {
        self.pads.load(Ordering::Relaxed)
    }

    pub fn reset(&self) {
        self.reads.store(0, Ordering::Relaxed);
        self.pads.store(0, Ordering::Relaxed);
    }
}

impl VoxelSource for CountingVolume<'_> {
    fn dims(&self) -> [usize; 3] {
        self.inner.dims()
    }

    fn read_linear(&self, idx: usize) -> f32 {
        self.reads.fetch_add(1, Ordering::Relaxed);
        self.inner.data()[idx]
    }

    fn note_pad(&self, n: usize) {
        self.pads.fetch_add(n as u64, Ordering::Relaxed);
    }
}

/// Records coordinate reads outside `[0, dims)` instead of letting them
/// alias into a neighbouring row.
pub struct BoundsTrap<'a> {
    inner: &'a Volume,
    violations: AtomicU64,
}

impl<'a> BoundsTrap<'a> {
    pub fn new(inner: &'a Volume) -> Self {
        Self {
            inner,
            violations: AtomicU64::new(0),
        }
    }

    pub fn violations(&self) -> u64 {
        self.violations.load(Ordering::Relaxed)
    }
}

impl VoxelSource for BoundsTrap<'_> {
    fn dims(&self) -> [usize; 3] {
        self.inner.dims()
    }

    fn read_linear(&self, idx: usize) -> f32 {
        match self.inner.data().get(idx) {
            Some(&v) => v,
            None => {
                self.violations.fetch_add(1, Ordering::Relaxed);
                f32::NAN
            }
        }
    }

    fn read_at(&self, x: usize, y: usize, z: usize) -> f32 {
        let d = self.inner.dims();
        if x >= d[0] || y >= d[1] || z >= d[2] {
            self.violations.fetch_add(1, Ordering::Relaxed);
            return f32::NAN;
        }
        self.inner.get(x, y, z)
    }
}

/// One sampled descriptor: nine blocks of 729 values.
#[derive(Debug, Clone, PartialEq)]
pub struct Descriptor {
    pub values: Vec<f32>,
    pub query: [usize; 3],
}

impl Descriptor {
    pub fn block(&self, g: usize) -> &[f32] {
        &self.values[g * GRID_SAMPLES..(g + 1) * GRID_SAMPLES]
    }
}

fn check<S: VoxelSource + ?Sized>(
    src: &S,
    table: &OffsetTable,
    q: [usize; 3],
) -> Result<(), SampleError> {
    let dims = src.dims();
    if table.dims() != dims {
        return Err(SampleError::TableMismatch {
            table: table.dims(),
            volume: dims,
        });
    }
    if (0..3).any(|a| q[a] >= dims[a]) {
        return Err(SampleError::QueryOutside { query: q, dims });
    }
    Ok(())
}

/// Gathers one descriptor into `out` (length 6561). Interior queries take
/// the flat-offset path; all others bounds-check every sample and pad with
/// normalized air.
pub fn sample_into<S: VoxelSource + ?Sized>(
    src: &S,
    table: &OffsetTable,
    q: [usize; 3],
    out: &mut [f32],
) -> Result<(), SampleError> {
    check(src, table, q)?;
    assert_eq!(out.len(), DESCRIPTOR_LEN);
    if table.is_interior(q) {
        gather_interior(src, table, q, out);
    } else {
        gather_checked(src, table, q, out);
    }
    Ok(())
}

pub fn sample_descriptor<S: VoxelSource + ?Sized>(
    src: &S,
    table: &OffsetTable,
    q: [usize; 3],
) -> Result<Descriptor, SampleError> {
    let mut values = vec![0.0; DESCRIPTOR_LEN];
    sample_into(src, table, q, &mut values)?;
    Ok(Descriptor { values, query: q })
}

/// Always takes the bounds-checked path, even for interior queries.
pub fn sample_descriptor_checked<S: VoxelSource + ?Sized>(
    src: &S,
    table: &OffsetTable,
    q: [usize; 3],
) -> Result<Descriptor, SampleError> {
    check(src, table, q)?;
    let mut values = vec![0.0; DESCRIPTOR_LEN];
    gather_checked(src, table, q, &mut values);
    Ok(Descriptor { values, query: q })
}

#[inline]
fn gather_interior<S: VoxelSource + ?Sized>(
    src: &S,
    table: &OffsetTable,
    q: [usize; 3],
    out: &mut [f32],
) {
    let base = linear_index(src.dims(), q[0], q[1], q[2]) as isize;
    for (o, &off) in out.iter_mut().zip(table.flat_offsets()) {
        *o = src.read_linear((base + off) as usize);
    }
}

fn gather_checked<S: VoxelSource + ?Sized>(
    src: &S,
    table: &OffsetTable,
    q: [usize; 3],
    out: &mut [f32],
) {
    let dims = src.dims();
    let inside = |axis: usize, step: i64| -> Option<usize> {
        let c = q[axis] as i64 + step;
        (c >= 0 && (c as usize) < dims[axis]).then_some(c as usize)
    };
    let mut k = 0;
    let mut fast: Vec<Option<usize>> = Vec::with_capacity(27);
    for grid in &table.loops {
        let [a0, a1, a2] = grid.axes.map(Axis::index);
        fast.clear();
        fast.extend(grid.steps[2].iter().map(|&s| inside(a2, s)));
        let row_len = fast.len();
        for &s0 in &grid.steps[0] {
            let c0 = inside(a0, s0);
            for &s1 in &grid.steps[1] {
                let row = &mut out[k..k + row_len];
                k += row_len;
                let (Some(c0), Some(c1)) = (c0, inside(a1, s1)) else {
                    row.fill(PAD_VALUE);
                    src.note_pad(row_len);
                    continue;
                };
                let mut pads = 0;
                for (o, c2) in row.iter_mut().zip(&fast) {
                    *o = match *c2 {
                        Some(c2) => {
                            let mut c = [0usize; 3];
                            c[a0] = c0;
                            c[a1] = c1;
                            c[a2] = c2;
                            src.read_at(c[0], c[1], c[2])
                        }
                        None => {
                            pads += 1;
                            PAD_VALUE
                        }
                    };
                }
                if pads > 0 {
                    src.note_pad(pads);
                }
            }
        }
    }
    debug_assert_eq!(k, DESCRIPTOR_LEN);
}
