use crate::model::ModelConfig;
use crate::trainer::TrainConfig;
use crate::volume::PhantomConfig;
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

/// How volume paths are decoded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VolumeFormat {
    /// `.nii` is NIfTI-1, anything else the raw JSON header format.
    #[default]
    Auto,
    Raw,
    Nifti,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Dataset manifest written by `phantom`; read by `train`.
    pub manifest: Option<PathBuf>,
    pub format: VolumeFormat,
    pub phantom: PhantomConfig,
    pub phantom_count: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { manifest: None, format: VolumeFormat::Auto, phantom: PhantomConfig::default(), phantom_count: 50 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InferenceConfig {
    /// Descriptors per forward call.
    pub batch: usize,
    pub output: Option<PathBuf>,
    pub debug_writes: bool,
    /// Timed benchmark runs.
    pub bench_runs: usize,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self { batch: 64, output: None, debug_writes: false, bench_runs: crate::bench::MIN_RUNS }
    }
}

/// Configuration document shared by all subcommands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Expanded into the phantom, split, model and training seeds.
    pub seed: u64,
    /// Worker threads; unset means all cores for `segment` and `bench`,
    /// one for `train`.
    pub threads: Option<usize>,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub inference: InferenceConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            threads: None,
            data: DataConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            inference: InferenceConfig::default(),
        }
    }
}

/// Pipeline stages that draw randomness.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Phantom,
    Split,
    Model,
    Train,
}

/// Seed for `stage` (and item `index` within it) derived from the top-level
/// seed by SplitMix64 mixing.
pub fn stage_seed(seed: u64, stage: Stage, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add((stage as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RunConfig {
    /// Writes the derived stage seeds into the nested sections.
    pub fn expand_seeds(&mut self) {
        self.data.phantom.seed = stage_seed(self.seed, Stage::Phantom, 0);
        self.model.seed = stage_seed(self.seed, Stage::Model, 0);
        self.train.seed = stage_seed(self.seed, Stage::Train, 0);
    }

    pub fn threads_or(&self, default: usize) -> usize {
        self.threads.unwrap_or(default).max(1)
    }
}
