//! Differentiable modules and the parameter bundle that holds them.

pub mod bundle;
pub mod config;
pub mod layers;
pub mod modules;
pub mod params;

pub use bundle::{NetworkBundle, Networks};
pub use config::{Ablation, MaskMode, ModelConfig};
pub use modules::{blend, StyleCode, TranslatorOutput};
pub use params::{Init, ParamStore};
