//! Whole-volume segmentation: queries every 10 mm, one 5×5×5 block of 2 mm
//! labels per query, stitched edge to edge.
//!
//! Query `j` along an axis sits at `5 + 10 j` mm from the volume origin and
//! its block covers `[10 j, 10 j + 10)` mm, i.e. output voxels `5 j .. 5 j + 5`
//! of the 2 mm grid. The far margin left over by `floor(extent / 10)` stays
//! background.

use crate::metrics::{dice, DiceReport, MeanOver};
use crate::model::{argmax_labels, ModelError, ResidualTransformer};
use crate::sampler::{
    build_offset_table, default_layout, round_half_away, sample_into, OffsetTable, SampleError, VoxelSource,
    DESCRIPTOR_LEN, WINDOW_LEN, WINDOW_SIDE,
};
use crate::volume::{linear_index, normalize_intensity, LabelVolume, Volume, VolumeError};
use rayon::prelude::*;
use std::time::{Duration, Instant};
use thiserror::Error;

pub const QUERY_SPACING_MM: f64 = 10.0;
pub const OUTPUT_SPACING_MM: f64 = 2.0;

#[derive(Debug, Error)]
pub enum InferenceError {
    #[error("volume extent {extent_mm:?} mm is thinner than one {QUERY_SPACING_MM} mm block on some axis")]
    TooThin { extent_mm: [f64; 3] },
    #[error("query order is not a permutation of {0} queries")]
    BadOrder(usize),
    #[error("predictor returned {found} labels for {queries} queries")]
    PredictionSize { queries: usize, found: usize },
    #[error("predicted label {label} outside {classes} classes")]
    LabelOutOfRange { label: u8, classes: usize },
    #[error("geometry mismatch: {0}")]
    Geometry(String),
    #[error("cannot build thread pool: {0}")]
    ThreadPool(String),
    #[error(transparent)]
    Sample(#[from] SampleError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Volume(#[from] VolumeError),
}

pub type Result<T, E = InferenceError> = std::result::Result<T, E>;

/// Maps a batch of descriptors to 125 labels each.
pub trait BlockPredictor: Sync {
    fn class_count(&self) -> usize;

    /// `x` holds `n × 6561` values; returns `n × 125` labels in window order.
    fn predict(&self, x: &[f32]) -> Result<Vec<u8>>;

    /// Label used in reports.
    fn name(&self) -> String {
        "custom".into()
    }
}

impl BlockPredictor for ResidualTransformer {
    fn class_count(&self) -> usize {
        ResidualTransformer::class_count(self)
    }

    fn predict(&self, x: &[f32]) -> Result<Vec<u8>> {
        Ok(argmax_labels(&self.forward(x)?))
    }

    fn name(&self) -> String {
        self.config().variant.to_string()
    }
}

/// Block-centred queries on a 10 mm lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryGrid {
    counts: [usize; 3],
    queries: Vec<[usize; 3]>,
}

impl QueryGrid {
    /// Queries per axis.
    pub fn counts(&self) -> [usize; 3] {
        self.counts
    }

    /// Voxel coordinates, x fastest then y then z.
    pub fn queries(&self) -> &[[usize; 3]] {
        &self.queries
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    /// Lattice index `(i, j, k)` of query `n`.
    pub fn lattice(&self, n: usize) -> [usize; 3] {
        let [cx, cy, _] = self.counts;
        [n % cx, (n / cx) % cy, n / (cx * cy)]
    }
}

/// Physical position `mm` to the voxel whose cell centre is nearest.
fn voxel_of(mm: f64, spacing: f64, dim: usize) -> usize {
    round_half_away(mm / spacing - 0.5).clamp(0, dim as i64 - 1) as usize
}

pub fn make_query_grid(dims: [usize; 3], spacing: [f64; 3]) -> Result<QueryGrid> {
    let extent_mm: [f64; 3] = std::array::from_fn(|a| dims[a] as f64 * spacing[a]);
    let counts = extent_mm.map(|e| (e / QUERY_SPACING_MM + 1e-9).floor() as usize);
    if counts.contains(&0) {
        return Err(InferenceError::TooThin { extent_mm });
    }
    let coord = |a: usize, j: usize| {
        let mm = QUERY_SPACING_MM / 2.0 + QUERY_SPACING_MM * j as f64;
        voxel_of(mm, spacing[a], dims[a])
    };
    let mut queries = Vec::with_capacity(counts.iter().product());
    for k in 0..counts[2] {
        for j in 0..counts[1] {
            for i in 0..counts[0] {
                queries.push([coord(0, i), coord(1, j), coord(2, k)]);
            }
        }
    }
    Ok(QueryGrid { counts, queries })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentOptions {
    pub threads: usize,
    /// Descriptors per forward call.
    pub batch: usize,
    /// Count writes per output voxel.
    pub debug_writes: bool,
    /// Evaluation order as a permutation of query indices.
    pub order: Option<Vec<usize>>,
}

impl Default for SegmentOptions {
    fn default() -> Self {
        Self { threads: 1, batch: 64, debug_writes: false, order: None }
    }
}

/// Stitched 2 mm labels covering the input volume.
#[derive(Debug, Clone, PartialEq)]
pub struct StitchedLabels {
    pub labels: LabelVolume,
    /// Output voxels per axis covered by blocks, starting at the origin.
    pub tiled: [usize; 3],
    /// Writes per output voxel, when requested.
    pub write_counts: Option<Vec<u32>>,
}

impl StitchedLabels {
    pub fn in_tiled_region(&self, x: usize, y: usize, z: usize) -> bool {
        x < self.tiled[0] && y < self.tiled[1] && z < self.tiled[2]
    }
}

/// Per-phase time. Gather and forward are summed over worker threads.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PhaseTimes {
    pub gather: Duration,
    pub forward: Duration,
    pub stitch: Duration,
    pub total: Duration,
}

fn output_geometry(dims: [usize; 3], spacing: [f64; 3], counts: [usize; 3]) -> ([usize; 3], [usize; 3]) {
    let tiled = counts.map(|c| c * WINDOW_SIDE);
    let out = std::array::from_fn(|a| {
        let fit = (dims[a] as f64 * spacing[a] / OUTPUT_SPACING_MM + 1e-9).floor() as usize;
        fit.max(tiled[a])
    });
    (out, tiled)
}

/// Segments an already normalized source.
pub fn segment_source<P: BlockPredictor, S: VoxelSource>(
    predictor: &P,
    src: &S,
    table: &OffsetTable,
    spacing: [f64; 3],
    opts: &SegmentOptions,
) -> Result<(StitchedLabels, PhaseTimes)> {
    let start = Instant::now();
    let dims = src.dims();
    let grid = make_query_grid(dims, spacing)?;
    let n = grid.len();
    let order: Vec<usize> = match &opts.order {
        Some(o) => {
            let mut seen = vec![false; n];
            if o.len() != n || o.iter().any(|&i| i >= n || std::mem::replace(&mut seen[i], true)) {
                return Err(InferenceError::BadOrder(n));
            }
            o.clone()
        }
        None => (0..n).collect(),
    };
    let classes = predictor.class_count();
    let batch = opts.batch.max(1);

    let run = || -> Result<Vec<(Vec<u8>, Duration, Duration)>> {
        order
            .par_chunks(batch)
            .map(|chunk| {
                let t = Instant::now();
                let mut x = vec![0.0f32; chunk.len() * DESCRIPTOR_LEN];
                for (out, &q) in x.chunks_exact_mut(DESCRIPTOR_LEN).zip(chunk) {
                    sample_into(src, table, grid.queries[q], out)?;
                }
                let gathered = t.elapsed();
                let labels = predictor.predict(&x)?;
                if labels.len() != chunk.len() * WINDOW_LEN {
                    return Err(InferenceError::PredictionSize { queries: chunk.len(), found: labels.len() });
                }
                Ok((labels, gathered, t.elapsed() - gathered))
            })
            .collect()
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.threads.max(1))
        .build()
        .map_err(|e| InferenceError::ThreadPool(e.to_string()))?;
    let results = pool.install(run)?;

    let mut times = PhaseTimes::default();
    let mut preds = Vec::with_capacity(n * WINDOW_LEN);
    for (pred, g, f) in results {
        times.gather += g;
        times.forward += f;
        preds.extend_from_slice(&pred);
    }
    let t = Instant::now();
    let stitched = stitch_blocks(&grid, dims, spacing, classes, &order, &preds, opts.debug_writes)?;
    times.stitch = t.elapsed();
    times.total = start.elapsed();
    Ok((stitched, times))
}

/// Writes the block predicted for query `order[k]`, found at
/// `preds[k * 125..]`, into a fresh 2 mm label volume.
pub fn stitch_blocks(
    grid: &QueryGrid,
    dims: [usize; 3],
    spacing: [f64; 3],
    classes: usize,
    order: &[usize],
    preds: &[u8],
    debug_writes: bool,
) -> Result<StitchedLabels> {
    if preds.len() != order.len() * WINDOW_LEN {
        return Err(InferenceError::PredictionSize { queries: order.len(), found: preds.len() });
    }
    let (out_dims, tiled) = output_geometry(dims, spacing, grid.counts);
    let mut labels = LabelVolume::background(out_dims, [OUTPUT_SPACING_MM; 3], classes)?;
    let mut counts = debug_writes.then(|| vec![0u32; out_dims.iter().product()]);
    for (&q, block) in order.iter().zip(preds.chunks_exact(WINDOW_LEN)) {
        if q >= grid.len() {
            return Err(InferenceError::BadOrder(grid.len()));
        }
        let base = grid.lattice(q).map(|c| c * WINDOW_SIDE);
        let mut k = 0;
        for z in 0..WINDOW_SIDE {
            for y in 0..WINDOW_SIDE {
                for x in 0..WINDOW_SIDE {
                    let label = block[k];
                    k += 1;
                    if label as usize >= classes {
                        return Err(InferenceError::LabelOutOfRange { label, classes });
                    }
                    let idx = linear_index(out_dims, base[0] + x, base[1] + y, base[2] + z);
                    labels.set_linear(idx, label);
                    if let Some(c) = counts.as_mut() {
                        c[idx] += 1;
                    }
                }
            }
        }
    }
    Ok(StitchedLabels { labels, tiled, write_counts: counts })
}

/// Normalizes `volume` (HU) and segments it.
pub fn segment_volume_timed<P: BlockPredictor>(
    predictor: &P,
    volume: &Volume,
    opts: &SegmentOptions,
) -> Result<(StitchedLabels, PhaseTimes)> {
    let norm = normalize_intensity(volume);
    let table = build_offset_table(&default_layout(), volume.dims(), volume.spacing());
    segment_source(predictor, &norm, &table, volume.spacing(), opts)
}

pub fn segment_volume<P: BlockPredictor>(
    predictor: &P,
    volume: &Volume,
    opts: &SegmentOptions,
) -> Result<StitchedLabels> {
    Ok(segment_volume_timed(predictor, volume, opts)?.0)
}

/// Nearest-neighbour resampling in physical space: each target voxel takes
/// the label of the source cell containing its centre, background outside.
pub fn resample_labels(src: &LabelVolume, dims: [usize; 3], spacing: [f64; 3]) -> Result<LabelVolume> {
    let sd = src.dims();
    let ss = src.spacing();
    let map: [Vec<Option<usize>>; 3] = std::array::from_fn(|a| {
        (0..dims[a])
            .map(|i| {
                let c = ((i as f64 + 0.5) * spacing[a] / ss[a]).floor();
                (c >= 0.0 && (c as usize) < sd[a]).then_some(c as usize)
            })
            .collect()
    });
    let mut out = Vec::with_capacity(dims.iter().product());
    for z in &map[2] {
        for y in &map[1] {
            for x in &map[0] {
                out.push(match (x, y, z) {
                    (Some(x), Some(y), Some(z)) => src.get(*x, *y, *z),
                    _ => 0,
                });
            }
        }
    }
    Ok(LabelVolume::new(dims, spacing, out, src.class_count())?)
}

/// Per-class dice over whole volumes; the mean covers foreground classes
/// present in either volume.
pub fn dice_whole_volume(pred: &LabelVolume, gt: &LabelVolume) -> Result<DiceReport> {
    if pred.dims() != gt.dims() || pred.spacing() != gt.spacing() {
        return Err(InferenceError::Geometry(format!(
            "prediction {:?} @ {:?}, reference {:?} @ {:?}",
            pred.dims(),
            pred.spacing(),
            gt.dims(),
            gt.spacing()
        )));
    }
    let c = pred.class_count().max(gt.class_count());
    Ok(dice(pred.labels(), gt.labels(), c, MeanOver::PresentInEither))
}
