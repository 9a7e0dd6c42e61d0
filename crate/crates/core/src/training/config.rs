use serde::{Deserialize, Serialize};

use crate::error::{HisdError, Result};

/// Optimization hyperparameters. Defaults follow the reference recipe:
/// batch 8, 200K iterations, Adam(0, 0.99), lr 1e-4 (mapper 1e-6),
/// R1 γ = 1, EMA weight 0.001, λ_rec = λ_sty = 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lambda_rec: f64,
    pub lambda_sty: f64,
    pub r1_gamma: f64,
    pub lr_main: f64,
    pub lr_mapper: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub batch: usize,
    pub iterations: u64,
    pub ema_weight: f64,
    pub log_every: u64,
    pub checkpoint_every: u64,
    /// Held-out records at the end of the annotation table.
    pub test_count: usize,
    /// Single-threaded torch ops for bit-reproducible runs.
    pub deterministic: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda_rec: 1.0,
            lambda_sty: 1.0,
            r1_gamma: 1.0,
            lr_main: 1e-4,
            lr_mapper: 1e-6,
            beta1: 0.0,
            beta2: 0.99,
            adam_eps: 1e-8,
            batch: 8,
            iterations: 200_000,
            ema_weight: 0.001,
            log_every: 100,
            checkpoint_every: 10_000,
            test_count: 3000,
            deterministic: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lambda_rec", self.lambda_rec),
            ("lambda_sty", self.lambda_sty),
            ("r1_gamma", self.r1_gamma),
            ("lr_main", self.lr_main),
            ("lr_mapper", self.lr_mapper),
            ("adam_eps", self.adam_eps),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(HisdError::Config(format!("train.{name} must be positive, got {v}")));
            }
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(HisdError::Config("train.beta1 and train.beta2 must lie in [0,1)".into()));
        }
        if !(self.ema_weight > 0.0 && self.ema_weight < 1.0) {
            return Err(HisdError::Config("train.ema_weight must lie in (0,1)".into()));
        }
        if self.batch == 0 || self.iterations == 0 || self.log_every == 0 || self.checkpoint_every == 0 {
            return Err(HisdError::Config("train.batch, iterations, log_every and checkpoint_every must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_recipe() {
        let c = TrainConfig::default();
        c.validate().unwrap();
        assert_eq!((c.batch, c.iterations), (8, 200_000));
        assert_eq!((c.lambda_rec, c.lambda_sty, c.r1_gamma), (1.0, 1.0, 1.0));
        assert_eq!((c.beta1, c.beta2), (0.0, 0.99));
        assert_eq!((c.lr_main, c.lr_mapper, c.ema_weight), (1e-4, 1e-6, 0.001));
    }

    #[test]
    fn rejects_bad_values() {
        assert!(TrainConfig { ema_weight: 1.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { lambda_rec: 0.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { batch: 0, ..Default::default() }.validate().is_err());
    }
}
