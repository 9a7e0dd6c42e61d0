//! Adam with per-parameter learning rates, and EMA of weights.

use std::collections::BTreeMap;

use tch::Tensor;

use crate::error::{HisdError, Result};
use crate::net::ParamStore;

#[derive(Debug)]
pub struct AdamSlot {
    pub m: Tensor,
    pub v: Tensor,
    pub step: i64,
}

/// Parameters without a gradient are skipped entirely, so banks that did
/// not take part in a loss are left bit-identical.
#[derive(Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub slots: BTreeMap<String, AdamSlot>,
}

impl Adam {
    pub fn new(beta1: f64, beta2: f64, eps: f64) -> Self {
        Self { beta1, beta2, eps, slots: BTreeMap::new() }
    }

    /// `grads` aligns with `names`; undefined tensors mean "not used".
    pub fn step(&mut self, store: &ParamStore, names: &[String], grads: &[Tensor], lr: impl Fn(&str) -> f64) -> Result<()> {
        if names.len() != grads.len() {
            return Err(HisdError::Contract(format!("{} names for {} gradients", names.len(), grads.len())));
        }
        tch::no_grad(|| {
            for (name, g) in names.iter().zip(grads) {
                if !g.defined() {
                    continue;
                }
                let p = store.get(name).ok_or_else(|| HisdError::Contract(format!("unknown parameter `{name}`")))?;
                let slot = self.slots.entry(name.clone()).or_insert_with(|| AdamSlot { m: p.zeros_like(), v: p.zeros_like(), step: 0 });
                slot.step += 1;
                slot.m = &slot.m * self.beta1 + g * (1.0 - self.beta1);
                slot.v = &slot.v * self.beta2 + g.square() * (1.0 - self.beta2);
                let bc1 = 1.0 - self.beta1.powi(slot.step as i32);
                let bc2 = 1.0 - self.beta2.powi(slot.step as i32);
                let denom = (&slot.v / bc2).sqrt() + self.eps;
                let update = (&slot.m / bc1) / denom * lr(name);
                let mut p = p.shallow_clone();
                let _ = p.f_sub_(&update)?;
            }
            Ok(())
        })
    }
}

/// `shadow ← (1 − w)·shadow + w·main` for every shadow entry.
pub fn ema_update(shadow: &ParamStore, main: &ParamStore, w: f64) -> Result<()> {
    tch::no_grad(|| {
        for (name, s) in shadow.iter() {
            let m = main.get(name).ok_or_else(|| HisdError::Contract(format!("EMA shadow has extra parameter `{name}`")))?;
            let mut s = s.shallow_clone();
            let next = &s * (1.0 - w) + m * w;
            s.copy_(&next);
        }
        Ok(())
    })
}
