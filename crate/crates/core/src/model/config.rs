use super::ModelError;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// Backbone between the fused projection and the head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Residual blocks followed by the attention encoder.
    #[default]
    Full,
    ResidualOnly,
    TransformerOnly,
    /// One `d → 9d` feed-forward layer on the fused vector.
    MlpOnly,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Full,
        Variant::ResidualOnly,
        Variant::TransformerOnly,
        Variant::MlpOnly,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::ResidualOnly => "residual_only",
            Variant::TransformerOnly => "transformer_only",
            Variant::MlpOnly => "mlp_only",
        }
    }

    pub(crate) fn code(self) -> u32 {
        match self {
            Variant::Full => 0,
            Variant::ResidualOnly => 1,
            Variant::TransformerOnly => 2,
            Variant::MlpOnly => 3,
        }
    }

    pub(crate) fn from_code(code: u32) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.code() == code)
    }

    pub fn has_residual(self) -> bool {
        matches!(self, Variant::Full | Variant::ResidualOnly)
    }

    pub fn has_encoder(self) -> bool {
        matches!(self, Variant::Full | Variant::TransformerOnly)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| ModelError::BadConfig(format!("unknown variant {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub class_count: usize,
    pub grid_proj_width: usize,
    pub model_width: usize,
    pub heads: usize,
    pub n_residual_blocks: usize,
    pub n_encoder_layers: usize,
    pub variant: Variant,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            class_count: 6,
            grid_proj_width: 32,
            model_width: 144,
            heads: 2,
            n_residual_blocks: 2,
            n_encoder_layers: 2,
            variant: Variant::Full,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::BadConfig(m));
        if !(2..=255).contains(&self.class_count) {
            return bad(format!("class_count {} outside 2..=255", self.class_count));
        }
        if self.grid_proj_width == 0 || self.model_width == 0 {
            return bad("widths must be positive".into());
        }
        if self.heads == 0 || self.model_width % self.heads != 0 {
            return bad(format!(
                "model_width {} not divisible by {} heads",
                self.model_width, self.heads
            ));
        }
        Ok(())
    }
}
