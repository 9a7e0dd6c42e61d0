use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{HisdError, Result};

/// Single-component ablations of the full model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Ablation {
    /// Translator returns its candidate feature directly (no mask).
    Att,
    /// Mask has a single channel broadcast over all feature channels.
    Spa,
    /// Discriminator ignores the condition labels.
    Con,
    /// No adversarial terms on the cycle reconstruction.
    Cyc,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [Ablation::Att, Ablation::Spa, Ablation::Con, Ablation::Cyc];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Att => "att",
            Ablation::Spa => "spa",
            Ablation::Con => "con",
            Ablation::Cyc => "cyc",
        }
    }
}

impl FromStr for Ablation {
    type Err = HisdError;

    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| HisdError::Config(format!("unknown ablation `{s}` (expected att|spa|con|cyc)")))
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// How the translator blends its candidate feature into the input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskMode {
    /// Spatial- and channel-wise mask.
    Full,
    SpatialOnly,
    None,
}

/// Widths and structural switches. Every field is config-overridable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub image_size: u32,
    /// Channels after the input projection; doubles per downsampling block.
    pub base_width: i64,
    pub max_width: i64,
    pub style_dim: i64,
    pub latent_dim: i64,
    pub mapper_hidden: i64,
    pub translator_blocks: usize,
    pub extractor_blocks: usize,
    pub slope: f64,
    pub eps: f64,
    pub ablation: Option<Ablation>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            image_size: 128,
            base_width: 32,
            max_width: 256,
            style_dim: 256,
            latent_dim: 32,
            mapper_hidden: 256,
            translator_blocks: 8,
            extractor_blocks: 5,
            slope: 0.2,
            eps: 1e-5,
            ablation: None,
        }
    }
}

/// Number of 2× downsampling blocks in the encoder.
pub const ENCODER_BLOCKS: u32 = 2;

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(HisdError::Config(format!("model: {what}")));
        if self.image_size == 0 || self.image_size % (1 << ENCODER_BLOCKS) != 0 {
            return bad("image_size must be a positive multiple of 4");
        }
        if self.image_size >> self.extractor_blocks.min(31) == 0 {
            return bad("image_size too small for the extractor depth");
        }
        if self.base_width < 2 || self.max_width < self.base_width {
            return bad("widths must satisfy 2 <= base_width <= max_width");
        }
        if self.style_dim < 1 || self.latent_dim < 1 || self.mapper_hidden < 1 {
            return bad("style_dim, latent_dim and mapper_hidden must be positive");
        }
        if self.translator_blocks == 0 || self.extractor_blocks == 0 {
            return bad("translator_blocks and extractor_blocks must be positive");
        }
        if !(self.slope > 0.0 && self.slope < 1.0) || !(self.eps > 0.0) {
            return bad("slope must be in (0,1) and eps positive");
        }
        Ok(())
    }

    pub fn width(&self, level: u32) -> i64 {
        (self.base_width << level).min(self.max_width)
    }

    /// Channels of the encoded feature.
    pub fn feature_channels(&self) -> i64 {
        self.width(ENCODER_BLOCKS)
    }

    pub fn translator_channels(&self) -> i64 {
        (self.feature_channels() / 2).max(1)
    }

    pub fn mask_mode(&self) -> MaskMode {
        match self.ablation {
            Some(Ablation::Att) => MaskMode::None,
            Some(Ablation::Spa) => MaskMode::SpatialOnly,
            _ => MaskMode::Full,
        }
    }

    pub fn conditional_discriminator(&self) -> bool {
        self.ablation != Some(Ablation::Con)
    }

    pub fn cycle_adversarial(&self) -> bool {
        self.ablation != Some(Ablation::Cyc)
    }
}
