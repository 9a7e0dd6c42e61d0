//! Quantitative evaluation: FID protocols, synthetic-oracle metrics, style
//! export and the ablation switches.
//!
//! FID values here come from a seeded random-convolution embedder unless an
//! external embedder is supplied, so they are not comparable to published
//! Inception-based FIDs.

pub mod embed;
pub mod fid;
pub mod oracle;
pub mod probes;
pub mod protocol;
pub mod report;
pub mod styles;

pub use embed::{Embedder, EmbedderInfo, RandomConvEmbedder, ScriptedEmbedder};
pub use fid::{fid, FidStats};
pub use oracle::{oracle_metrics, oracle_table, OracleRow};
pub use protocol::{capacity_gap, disentanglement_protocol, realism_protocol, Editor, IdentityEditor, Mode, ProtocolResult, Setup, Subset};
pub use styles::{linear_separator, separate_rows, style_export, SeparatorReport, StyleRow};

use crate::net::{Ablation, ModelConfig};

pub const DEFAULT_K: usize = 5;

/// Printed next to every FID value.
pub const FID_NOTE: &str = "FID computed with the embedder listed in this report; not comparable to Inception-based FIDs";

/// What an ablation changes, in words.
pub fn ablation_summary(a: Ablation) -> &'static str {
    match a {
        Ablation::Att => "translator returns the candidate feature directly; no attention mask",
        Ablation::Spa => "single-channel (spatial-only) mask broadcast over feature channels",
        Ablation::Con => "discriminator ignores the tag-irrelevant conditions",
        Ablation::Cyc => "no adversarial term on the cycle reconstruction; its reconstruction loss is kept",
    }
}

/// `base` with the ablation switched on. Everything else stays as given.
pub fn ablation_config(base: &ModelConfig, a: Ablation) -> ModelConfig {
    ModelConfig { ablation: Some(a), ..base.clone() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::MaskMode;

    #[test]
    fn ablations_touch_only_their_switch() {
        let base = ModelConfig::default();
        let att = ablation_config(&base, Ablation::Att);
        assert_eq!(att.mask_mode(), MaskMode::None);
        assert!(att.conditional_discriminator() && att.cycle_adversarial());
        let spa = ablation_config(&base, Ablation::Spa);
        assert_eq!(spa.mask_mode(), MaskMode::SpatialOnly);
        let con = ablation_config(&base, Ablation::Con);
        assert!(!con.conditional_discriminator() && con.cycle_adversarial());
        assert_eq!(con.mask_mode(), MaskMode::Full);
        let cyc = ablation_config(&base, Ablation::Cyc);
        assert!(!cyc.cycle_adversarial() && cyc.conditional_discriminator());
        assert_eq!(ModelConfig { ablation: None, ..cyc }, base);
    }
}
