//! Timing harness and backbone ablation runner.

use crate::inference::{
    dice_whole_volume, make_query_grid, resample_labels, segment_source, stitch_blocks, BlockPredictor, InferenceError, SegmentOptions,
};
use crate::metrics::DiceReport;
use crate::model::{ModelConfig, ModelError, ResidualTransformer};
use crate::sampler::{build_offset_table, default_layout, sample_into, DESCRIPTOR_LEN};
use crate::trainer::{draw_sample_set, evaluate_on_samples, train, TrainConfig, TrainError, TrainImage};
use crate::volume::{normalize_intensity, Volume};
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::time::Instant;
use thiserror::Error;

/// Whole-volume CPU time published for the original implementation on full
/// CT scans. Printed for context, never compared against.
pub const REFERENCE_WHOLE_VOLUME_CPU_S: f64 = 2.24;

/// Published mean dice of the proposed backbone: internal test set,
/// external test set, whole volume. Printed for context only.
pub const REFERENCE_DICE: [(&str, f64); 3] = [("internal", 0.784), ("external", 0.721), ("whole_volume", 0.720)];

/// Fewest timed runs a report is built from.
pub const MIN_RUNS: usize = 5;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("an ablation needs at least two variants, got {0}")]
    TooFewVariants(usize),
    #[error("ablation rows differ in more than the variant: {0}")]
    MismatchedRows(String),
    #[error("no test images")]
    NoTestImages,
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub type Result<T, E = BenchError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BenchOptions {
    pub threads: usize,
    /// Timed runs after the warm-up; raised to [`MIN_RUNS`].
    pub runs: usize,
    /// Descriptors per forward call.
    pub batch: usize,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self { threads: 1, runs: MIN_RUNS, batch: 64 }
    }
}

/// Wall-clock seconds of one phased segmentation run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct PhaseSeconds {
    /// Normalization and offset table.
    pub prepare: f64,
    pub gather: f64,
    pub forward: f64,
    pub stitch: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub variant: String,
    pub threads: usize,
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub queries: usize,
    pub runs: usize,
    /// Per-field medians over the timed runs.
    pub median: PhaseSeconds,
    pub per_run: Vec<PhaseSeconds>,
    /// `queries / (gather + forward)` of the medians.
    pub queries_per_sec: f64,
    /// `queries / gather` of the medians.
    pub descriptors_per_sec: f64,
}

impl BenchReport {
    /// Whole-volume seconds (median).
    pub fn whole_volume_seconds(&self) -> f64 {
        self.median.total
    }

    pub fn to_table(&self) -> String {
        let m = &self.median;
        let mut s = String::new();
        let _ = writeln!(s, "# whole-volume benchmark (published CPU reference: {REFERENCE_WHOLE_VOLUME_CPU_S} s on full CT, context only)");
        let _ = writeln!(
            s,
            "# variant {}  threads {}  volume {:?} @ {:?} mm  queries {}  median of {} runs",
            self.variant, self.threads, self.dims, self.spacing, self.queries, self.runs
        );
        let _ = writeln!(s, "{:<10} {:>10}", "phase", "seconds");
        for (name, v) in [
            ("prepare", m.prepare),
            ("gather", m.gather),
            ("forward", m.forward),
            ("stitch", m.stitch),
            ("total", m.total),
        ] {
            let _ = writeln!(s, "{name:<10} {v:>10.4}");
        }
        let _ = writeln!(s, "{:<10} {:>10.1}", "queries/s", self.queries_per_sec);
        let _ = writeln!(s, "{:<10} {:>10.1}", "gather/s", self.descriptors_per_sec);
        s
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// One segmentation with each phase run to completion before the next, so
/// every phase gets its own wall time.
fn phased_run<P: BlockPredictor>(predictor: &P, volume: &Volume, opts: &BenchOptions) -> Result<PhaseSeconds> {
    let t0 = Instant::now();
    let norm = normalize_intensity(volume);
    let table = build_offset_table(&default_layout(), volume.dims(), volume.spacing());
    let grid = make_query_grid(volume.dims(), volume.spacing())?;
    let prepare = t0.elapsed().as_secs_f64();

    let t = Instant::now();
    let mut x = vec![0.0f32; grid.len() * DESCRIPTOR_LEN];
    x.par_chunks_mut(DESCRIPTOR_LEN)
        .zip(grid.queries().par_iter())
        .try_for_each(|(out, &q)| sample_into(&norm, &table, q, out))
        .map_err(InferenceError::from)?;
    let gather = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let chunks: Vec<Vec<u8>> = x
        .par_chunks(opts.batch.max(1) * DESCRIPTOR_LEN)
        .map(|c| predictor.predict(c))
        .collect::<Result<_, _>>()?;
    let forward = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let order: Vec<usize> = (0..grid.len()).collect();
    let preds = chunks.concat();
    stitch_blocks(&grid, volume.dims(), volume.spacing(), predictor.class_count(), &order, &preds, false)?;
    let stitch = t.elapsed().as_secs_f64();
    Ok(PhaseSeconds { prepare, gather, forward, stitch, total: t0.elapsed().as_secs_f64() })
}

/// Times whole-volume segmentation of `volume` (HU): one untimed warm-up,
/// then at least [`MIN_RUNS`] phased runs on a pool of `opts.threads`.
pub fn bench_segment<P: BlockPredictor>(predictor: &P, volume: &Volume, opts: &BenchOptions) -> Result<BenchReport> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.threads.max(1))
        .build()
        .map_err(|e| InferenceError::ThreadPool(e.to_string()))?;
    let runs = opts.runs.max(MIN_RUNS);
    let per_run = pool.install(|| -> Result<Vec<PhaseSeconds>> {
        phased_run(predictor, volume, opts)?;
        (0..runs).map(|_| phased_run(predictor, volume, opts)).collect()
    })?;
    let pick = |f: fn(&PhaseSeconds) -> f64| median(per_run.iter().map(f).collect());
    let m = PhaseSeconds {
        prepare: pick(|p| p.prepare),
        gather: pick(|p| p.gather),
        forward: pick(|p| p.forward),
        stitch: pick(|p| p.stitch),
        total: pick(|p| p.total),
    };
    let queries = make_query_grid(volume.dims(), volume.spacing())?.len();
    Ok(BenchReport {
        variant: predictor.name(),
        threads: opts.threads.max(1),
        dims: volume.dims(),
        spacing: volume.spacing(),
        queries,
        runs,
        median: m,
        per_run,
        queries_per_sec: queries as f64 / (m.gather + m.forward),
        descriptors_per_sec: queries as f64 / m.gather,
    })
}

/// Dice of one variant over the test images.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub model: ModelConfig,
    /// Hash of everything shared between rows.
    pub config_hash: String,
    pub final_loss: f64,
    /// Pooled over the test sample windows.
    pub descriptor: DiceReport,
    /// Per-class dice averaged over test volumes where the class occurs.
    pub whole_volume_per_class: Vec<Option<f64>>,
    /// Mean over test volumes of each volume's foreground mean.
    pub whole_volume_mean: f64,
}

impl AblationRow {
    /// Mean whole-volume dice over `classes`, skipping undefined entries.
    pub fn class_mean(&self, classes: &[usize]) -> Option<f64> {
        let v: Vec<f64> = classes
            .iter()
            .filter_map(|&c| self.whole_volume_per_class.get(c).copied().flatten())
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationReport {
    pub budget: TrainConfig,
    pub train_images: usize,
    pub test_images: usize,
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn row(&self, variant: crate::model::Variant) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.model.variant == variant)
    }

    /// Text table; `twins` adds a column averaging those classes.
    pub fn to_table(&self, twins: &[usize]) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "# backbone ablation: {} train / {} test images, {} steps, batch {}",
            self.train_images, self.test_images, self.budget.max_steps, self.budget.batch_size
        );
        let _ = writeln!(s, "{:<18} {:>10} {:>12} {:>10}", "variant", "samples", "whole-vol", "twins");
        let fmt = |v: Option<f64>| v.map_or("-".to_string(), |d| format!("{d:.4}"));
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<18} {:>10} {:>12.4} {:>10}",
                r.model.variant.as_str(),
                fmt(r.descriptor.mean),
                r.whole_volume_mean,
                fmt(r.class_mean(twins))
            );
        }
        let _ = writeln!(s, "# per-class whole-volume dice");
        for r in &self.rows {
            let per: Vec<String> = r.whole_volume_per_class.iter().map(|&d| fmt(d)).collect();
            let _ = writeln!(s, "{:<18} {}", r.model.variant.as_str(), per.join(" "));
        }
        let refs: Vec<String> = REFERENCE_DICE.iter().map(|(k, v)| format!("{k} {v}")).collect();
        let _ = writeln!(s, "# published reference for the proposed backbone (context only): {}", refs.join(" / "));
        s
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn hash_images(h: &mut Sha256, images: &[TrainImage]) {
    for img in images {
        for d in img.volume().dims() {
            h.update((d as u64).to_le_bytes());
        }
        for s in img.volume().spacing() {
            h.update(s.to_le_bytes());
        }
        for v in img.volume().data() {
            h.update(v.to_le_bytes());
        }
        h.update(img.labels().labels());
    }
}

/// Hash of the data, budget and model settings other than the variant.
fn shared_hash(data_digest: &[u8], model: &ModelConfig, budget: &TrainConfig) -> String {
    let mut h = Sha256::new();
    h.update(data_digest);
    let mut m = *model;
    m.variant = Default::default();
    h.update(serde_json::to_vec(&(m, budget)).unwrap_or_default());
    hex(&h.finalize())
}

/// Trains each model config on `train` under the identical `budget` and
/// scores it on `test`. Rows run serially; the configs may differ only in
/// their variant.
pub fn run_ablation(
    train_images: &[TrainImage],
    test_images: &[TrainImage],
    variants: &[ModelConfig],
    budget: &TrainConfig,
    threads: usize,
) -> Result<AblationReport> {
    if variants.len() < 2 {
        return Err(BenchError::TooFewVariants(variants.len()));
    }
    if test_images.is_empty() {
        return Err(BenchError::NoTestImages);
    }
    let mut h = Sha256::new();
    hash_images(&mut h, train_images);
    hash_images(&mut h, test_images);
    let data_digest = h.finalize();

    let train_samples = draw_sample_set(train_images, budget, budget.seed)?;
    let test_samples = draw_sample_set(test_images, budget, budget.seed.wrapping_add(1))?;
    let opts = SegmentOptions { threads, ..Default::default() };

    let config_hash = shared_hash(&data_digest, &variants[0], budget);
    for cfg in &variants[1..] {
        if shared_hash(&data_digest, cfg, budget) != config_hash {
            return Err(BenchError::MismatchedRows(format!("{:?} vs {:?}", variants[0], cfg)));
        }
    }

    let mut rows: Vec<AblationRow> = Vec::with_capacity(variants.len());
    for cfg in variants {
        let mut model = ResidualTransformer::new(*cfg)?;
        let out = train(&mut model, train_images, &train_samples, budget, None, |_| {})?;
        let final_loss = out.records.last().map_or(f64::NAN, |r| r.loss);
        let descriptor = evaluate_on_samples(&model, test_images, &test_samples)?;

        let c = cfg.class_count;
        let mut sums = vec![(0.0, 0usize); c];
        let mut mean_sum = 0.0;
        for img in test_images {
            let (pred, _) = segment_source(&model, img.volume(), img.table(), img.volume().spacing(), &opts)?;
            let gt = resample_labels(img.labels(), pred.labels.dims(), pred.labels.spacing())?;
            let report = dice_whole_volume(&pred.labels, &gt)?;
            for (acc, d) in sums.iter_mut().zip(&report.per_class) {
                if let Some(d) = d {
                    acc.0 += d;
                    acc.1 += 1;
                }
            }
            mean_sum += report.mean.unwrap_or(0.0);
        }
        rows.push(AblationRow {
            model: *cfg,
            config_hash: config_hash.clone(),
            final_loss,
            descriptor,
            whole_volume_per_class: sums.iter().map(|&(s, n)| (n > 0).then(|| s / n as f64)).collect(),
            whole_volume_mean: mean_sum / test_images.len() as f64,
        });
    }
    Ok(AblationReport {
        budget: budget.clone(),
        train_images: train_images.len(),
        test_images: test_images.len(),
        rows,
    })
}
