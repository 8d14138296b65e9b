//! Sampling of training queries and the optimization loop.

mod config;
mod samples;

pub use config::TrainConfig;
pub use samples::{class_shares, draw_sample_set, draw_samples, Provenance, Sample, SampleSet};

use crate::metrics::{count_classes, report_from_counts, ClassCounts, DiceReport, MeanOver};
use crate::model::{argmax_labels, ModelError, ResidualTransformer};
use crate::nn::{softmax_cross_entropy, Adam, NnError};
use crate::sampler::{
    build_offset_table, default_layout, sample_into, OffsetTable, SampleError, DESCRIPTOR_LEN, WINDOW_LEN,
};
use crate::volume::{normalize_intensity, LabelVolume, Volume};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("bad training data: {0}")]
    Data(String),
    #[error("non-finite loss {loss} at step {step}")]
    NonFinite { step: usize, loss: f64 },
    #[error(transparent)]
    Sample(#[from] SampleError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl From<NnError> for TrainError {
    fn from(e: NnError) -> Self {
        Self::Model(e.into())
    }
}

/// A normalized volume with its labels and offset table.
#[derive(Debug, Clone)]
pub struct TrainImage {
    volume: Volume,
    labels: LabelVolume,
    table: OffsetTable,
}

impl TrainImage {
    /// Normalizes `volume` (HU) and pairs it with `labels`.
    pub fn new(volume: &Volume, labels: LabelVolume) -> Result<Self, TrainError> {
        if !volume.same_geometry(&labels) {
            return Err(TrainError::Data(format!(
                "volume {:?} @ {:?} and labels {:?} @ {:?} differ in geometry",
                volume.dims(),
                volume.spacing(),
                labels.dims(),
                labels.spacing()
            )));
        }
        let table = build_offset_table(&default_layout(), volume.dims(), volume.spacing());
        Ok(Self { volume: normalize_intensity(volume), labels, table })
    }

    /// The normalized intensities.
    pub fn volume(&self) -> &Volume {
        &self.volume
    }

    pub fn labels(&self) -> &LabelVolume {
        &self.labels
    }

    pub fn table(&self) -> &OffsetTable {
        &self.table
    }
}

/// Gathers descriptors for `batch` into `x` (`batch.len() × 6561`).
pub fn gather_batch(images: &[TrainImage], batch: &[&Sample], x: &mut [f32]) -> Result<(), TrainError> {
    x.par_chunks_mut(DESCRIPTOR_LEN)
        .zip(batch.par_iter())
        .try_for_each(|(out, s)| {
            let img = images
                .get(s.image)
                .ok_or_else(|| TrainError::Data(format!("sample refers to missing image {}", s.image)))?;
            sample_into(&img.volume, &img.table, s.query, out)?;
            Ok(())
        })
}

/// One optimizer step on a prepared batch; returns the batch loss.
pub fn train_step(
    model: &mut ResidualTransformer,
    adam: &mut Adam,
    x: &[f32],
    targets: &[u8],
) -> Result<f64, TrainError> {
    let (y, cache) = model.forward_cached(x)?;
    let shape = y.shape().to_vec();
    let c = model.class_count();
    let (loss, g) = softmax_cross_entropy(&y.reshape(&[targets.len(), c])?, targets)?;
    if loss.is_finite() {
        model.zero_grad();
        model.backward(&cache, &g.reshape(&shape)?)?;
        adam.step(model.params_mut());
    }
    Ok(loss)
}

/// Mean loss over a batch without updating the model.
pub fn batch_loss(model: &ResidualTransformer, x: &[f32], targets: &[u8]) -> Result<f64, TrainError> {
    let y = model.forward(x)?;
    Ok(softmax_cross_entropy(&y.reshape(&[targets.len(), model.class_count()])?, targets)?.0)
}

/// Dice of argmax predictions against the sample windows, pooled over all
/// windows; the mean covers foreground classes present in the targets.
pub fn evaluate_on_samples(
    model: &ResidualTransformer,
    images: &[TrainImage],
    samples: &SampleSet,
) -> Result<DiceReport, TrainError> {
    const CHUNK: usize = 64;
    let c = model.class_count();
    let refs: Vec<&Sample> = samples.entries.iter().collect();
    let partial: Vec<Vec<ClassCounts>> = refs
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut x = vec![0.0f32; chunk.len() * DESCRIPTOR_LEN];
            gather_batch(images, chunk, &mut x)?;
            let pred = argmax_labels(&model.forward(&x)?);
            let mut counts = vec![ClassCounts::default(); c];
            for (p, s) in pred.chunks_exact(WINDOW_LEN).zip(chunk) {
                if let Some(&bad) = s.target.iter().find(|&&t| t as usize >= c) {
                    return Err(TrainError::Data(format!("target label {bad} outside {c} classes")));
                }
                count_classes(p, &s.target, c, &mut counts);
            }
            Ok(counts)
        })
        .collect::<Result<_, TrainError>>()?;
    let mut total = vec![ClassCounts::default(); c];
    for counts in partial {
        for (t, p) in total.iter_mut().zip(counts) {
            t.predicted += p.predicted;
            t.reference += p.reference;
            t.overlap += p.overlap;
        }
    }
    Ok(report_from_counts(&total, MeanOver::PresentInReference))
}

/// One metrics line.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainRecord {
    pub step: usize,
    /// Mean batch loss since the previous record.
    pub loss: f64,
    pub mean_dice: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Held-out samples scored at each record.
#[derive(Debug, Clone, Copy)]
pub struct EvalSet<'a> {
    pub images: &'a [TrainImage],
    pub samples: &'a SampleSet,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub records: Vec<TrainRecord>,
    pub steps: usize,
}

fn check_labels(images: &[TrainImage], classes: usize) -> Result<(), TrainError> {
    for (i, img) in images.iter().enumerate() {
        if img.labels.class_count() > classes {
            return Err(TrainError::Data(format!(
                "image {i} has {} classes, model predicts {classes}",
                img.labels.class_count()
            )));
        }
    }
    Ok(())
}

/// Trains `model` on `samples` drawn from `images` for `cfg.max_steps`
/// steps. Batches walk a seeded permutation of the samples, reshuffled each
/// pass; descriptors are gathered fresh for every batch. `on_record` sees
/// each metrics record as it is produced.
pub fn train(
    model: &mut ResidualTransformer,
    images: &[TrainImage],
    samples: &SampleSet,
    cfg: &TrainConfig,
    eval: Option<EvalSet<'_>>,
    mut on_record: impl FnMut(&TrainRecord),
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if images.is_empty() || samples.is_empty() {
        return Err(TrainError::Data("no training images or samples".into()));
    }
    let c = model.class_count();
    check_labels(images, c)?;
    if let Some(e) = eval {
        check_labels(e.images, c)?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(u64::MAX);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut rng);
    let mut cursor = 0;

    let b = cfg.batch_size;
    let mut adam = Adam::new(cfg.adam.clone());
    let mut x = vec![0.0f32; b * DESCRIPTOR_LEN];
    let mut targets = Vec::with_capacity(b * WINDOW_LEN);
    let mut batch: Vec<&Sample> = Vec::with_capacity(b);
    let mut records = Vec::new();
    let (mut loss_sum, mut loss_n) = (0.0, 0usize);

    for step in 1..=cfg.max_steps {
        batch.clear();
        while batch.len() < b {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(&samples.entries[order[cursor]]);
            cursor += 1;
        }
        gather_batch(images, &batch, &mut x)?;
        targets.clear();
        for s in &batch {
            targets.extend_from_slice(&s.target);
        }
        let loss = train_step(model, &mut adam, &x, &targets)?;
        if !loss.is_finite() {
            let rec = TrainRecord {
                step,
                loss,
                mean_dice: None,
                error: Some(format!("non-finite loss {loss}")),
            };
            on_record(&rec);
            records.push(rec);
            return Err(TrainError::NonFinite { step, loss });
        }
        loss_sum += loss;
        loss_n += 1;

        let due = step == 1 || step == cfg.max_steps || (cfg.eval_every > 0 && step % cfg.eval_every == 0);
        if due {
            let mean_dice = match eval {
                Some(e) => evaluate_on_samples(model, e.images, e.samples)?.mean,
                None => None,
            };
            let rec = TrainRecord { step, loss: loss_sum / loss_n as f64, mean_dice, error: None };
            on_record(&rec);
            records.push(rec);
            (loss_sum, loss_n) = (0.0, 0);
        }
    }
    Ok(TrainOutcome { records, steps: cfg.max_steps })
}
