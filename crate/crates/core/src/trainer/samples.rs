use super::{TrainConfig, TrainError, TrainImage};
use crate::sampler::{sample_label_window, LabelWindow};
use crate::volume::LabelVolume;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Uniform,
    /// Drawn from the voxels of this class; class 0 marks the fallback used
    /// when an image has no foreground.
    Balanced(u8),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// Index of the image within its dataset.
    pub image: usize,
    pub query: [usize; 3],
    pub target: LabelWindow,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SampleSet {
    pub entries: Vec<Sample>,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn voxel(dims: [usize; 3], idx: usize) -> [usize; 3] {
    [idx % dims[0], (idx / dims[0]) % dims[1], idx / (dims[0] * dims[1])]
}

/// Splits `quota` equally over `classes`; the remainder goes one each to the
/// lowest class indices.
pub fn class_shares(quota: usize, classes: usize) -> Vec<usize> {
    if classes == 0 {
        return Vec::new();
    }
    let (q, r) = (quota / classes, quota % classes);
    (0..classes).map(|i| q + usize::from(i < r)).collect()
}

/// Draws one image's samples: the balanced quota split over the foreground
/// classes present, the rest uniform over the whole voxel grid.
pub fn draw_samples<R: Rng>(
    image: usize,
    labels: &LabelVolume,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<Vec<Sample>, TrainError> {
    let dims = labels.dims();
    let n = labels.labels().len();
    let quota = cfg.balanced_quota();
    let mut by_class: Vec<Vec<u32>> = vec![Vec::new(); labels.class_count()];
    for (i, &l) in labels.labels().iter().enumerate() {
        if l > 0 {
            by_class[l as usize].push(i as u32);
        }
    }
    let present: Vec<usize> = (1..by_class.len()).filter(|&c| !by_class[c].is_empty()).collect();

    let mut out = Vec::with_capacity(cfg.samples_per_image);
    let mut push = |idx: usize, provenance| -> Result<(), TrainError> {
        let query = voxel(dims, idx);
        let target = sample_label_window(labels, query)?;
        out.push(Sample { image, query, target, provenance });
        Ok(())
    };
    for _ in 0..cfg.samples_per_image - quota {
        push(rng.random_range(0..n), Provenance::Uniform)?;
    }
    if present.is_empty() {
        for _ in 0..quota {
            push(rng.random_range(0..n), Provenance::Balanced(0))?;
        }
    } else {
        for (&c, share) in present.iter().zip(class_shares(quota, present.len())) {
            let pool = &by_class[c];
            for _ in 0..share {
                push(pool[rng.random_range(0..pool.len())] as usize, Provenance::Balanced(c as u8))?;
            }
        }
    }
    Ok(out)
}

/// Draws samples for every image. Image `i` uses stream `i` of a generator
/// seeded with `seed`, so the result does not depend on thread count.
pub fn draw_sample_set(images: &[TrainImage], cfg: &TrainConfig, seed: u64) -> Result<SampleSet, TrainError> {
    cfg.validate()?;
    let per_image: Vec<Vec<Sample>> = images
        .par_iter()
        .enumerate()
        .map(|(i, img)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            draw_samples(i, img.labels(), cfg, &mut rng)
        })
        .collect::<Result<_, _>>()?;
    Ok(SampleSet { entries: per_image.into_iter().flatten().collect() })
}
