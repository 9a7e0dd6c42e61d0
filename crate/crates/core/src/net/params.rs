//! Named parameter storage and the builders that populate it.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use tch::{Kind, Tensor};

use crate::error::{HisdError, Result};

/// Name → tensor table with deterministic (sorted) iteration order.
#[derive(Debug, Default)]
pub struct ParamStore {
    params: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: String, t: Tensor) {
        self.params.insert(name, t);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.params.iter()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }

    /// Deep copy; the copies require grad iff `trainable`.
    pub fn deep_copy(&self, trainable: bool) -> ParamStore {
        let params = self
            .params
            .iter()
            .map(|(k, v)| (k.clone(), v.detach().copy().set_requires_grad(trainable)))
            .collect();
        ParamStore { params }
    }

    /// Copies values from `src` into the same-named tensors of `self`.
    pub fn copy_from(&self, src: &ParamStore) -> Result<()> {
        tch::no_grad(|| {
            for (name, dst) in &self.params {
                let s = src
                    .get(name)
                    .ok_or_else(|| HisdError::Checkpoint(format!("missing parameter `{name}`")))?;
                if s.size() != dst.size() {
                    return Err(HisdError::Checkpoint(format!(
                        "parameter `{name}` has shape {:?}, expected {:?}",
                        s.size(),
                        dst.size()
                    )));
                }
                let mut d = dst.shallow_clone();
                d.copy_(s);
            }
            Ok(())
        })
    }

    pub fn total_elements(&self) -> i64 {
        self.params.values().map(Tensor::numel).map(|n| n as i64).sum()
    }
}

/// How a fresh parameter is filled.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Zero-mean normal with std `sqrt(2 / fan_in)`.
    He { fan_in: i64 },
    Zeros,
    Ones,
}

/// Supplies parameters by name while modules are being assembled.
pub trait ParamSource {
    fn param(&mut self, name: &str, shape: &[i64], init: Init) -> Result<Tensor>;
}

/// Creates parameters from a seeded rng and records them in a store.
pub struct Initializer<'a> {
    pub store: &'a mut ParamStore,
    pub rng: &'a mut ChaCha8Rng,
}

impl ParamSource for Initializer<'_> {
    fn param(&mut self, name: &str, shape: &[i64], init: Init) -> Result<Tensor> {
        if self.store.get(name).is_some() {
            return Err(HisdError::Contract(format!("parameter `{name}` declared twice")));
        }
        let n: i64 = shape.iter().product();
        let t = match init {
            Init::He { fan_in } => {
                let std = (2.0 / fan_in as f64).sqrt() as f32;
                let v: Vec<f32> = (0..n).map(|_| self.rng.sample::<f32, _>(StandardNormal) * std).collect();
                Tensor::from_slice(&v).view(shape)
            }
            Init::Zeros => Tensor::zeros(shape, (Kind::Float, tch::Device::Cpu)),
            Init::Ones => Tensor::ones(shape, (Kind::Float, tch::Device::Cpu)),
        };
        let t = t.set_requires_grad(true);
        self.store.insert(name.to_string(), t.shallow_clone());
        Ok(t)
    }
}

/// Fetches existing parameters (shape-checked) from a store.
pub struct Lookup<'a> {
    pub store: &'a ParamStore,
}

impl ParamSource for Lookup<'_> {
    fn param(&mut self, name: &str, shape: &[i64], _init: Init) -> Result<Tensor> {
        let t = self
            .store
            .get(name)
            .ok_or_else(|| HisdError::Checkpoint(format!("missing parameter `{name}`")))?;
        if t.size() != shape {
            return Err(HisdError::Checkpoint(format!(
                "parameter `{name}` has shape {:?}, expected {shape:?}",
                t.size()
            )));
        }
        Ok(t.shallow_clone())
    }
}
