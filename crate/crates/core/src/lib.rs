//! Hierarchical style disentanglement for multi-tag image-to-image
//! translation.
//!
//! Labels are organized into independent tags with exclusive attributes.
//! An encoder maps an image to a feature, per-tag translators edit that
//! feature under a style code (sampled through a mapper or extracted from a
//! reference image), and a generator decodes the result. Several tags can be
//! edited in sequence from a single encoding.

pub mod checkpoint;
pub mod config;
pub mod error;
pub mod eval;
pub mod hierarchy;
pub mod imageio;
pub mod inference;
pub mod net;
pub mod service;
pub mod synth;
pub mod training;

pub use error::{HisdError, Result};
