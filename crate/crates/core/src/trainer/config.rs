use super::TrainError;
use crate::nn::AdamConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub samples_per_image: usize,
    /// Share of each image's samples drawn per class.
    pub balanced_fraction: f64,
    pub batch_size: usize,
    pub max_steps: usize,
    /// Steps between metric records; 0 logs only the first and last step.
    pub eval_every: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            samples_per_image: 1000,
            balanced_fraction: 0.10,
            batch_size: 128,
            max_steps: 5000,
            eval_every: 500,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Balanced samples per image.
    pub fn balanced_quota(&self) -> usize {
        (self.balanced_fraction * self.samples_per_image as f64).round() as usize
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if self.samples_per_image == 0 || self.batch_size == 0 {
            return bad("samples_per_image and batch_size must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.balanced_fraction) {
            return bad(format!("balanced_fraction {} outside [0, 1]", self.balanced_fraction));
        }
        let exact = self.balanced_fraction * self.samples_per_image as f64;
        if (exact - exact.round()).abs() > 1e-9 {
            return bad(format!(
                "balanced_fraction × samples_per_image = {exact} is not an integer"
            ));
        }
        let a = &self.adam;
        if !(a.lr > 0.0 && a.eps > 0.0 && (0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2))
            || a.beta1 == 0.0
            || a.beta2 == 0.0
            || a.weight_decay < 0.0
        {
            return bad(format!("invalid adam settings {a:?}"));
        }
        Ok(())
    }
}
