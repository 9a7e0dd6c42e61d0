//! Image embedders for FID. Comparisons are only meaningful within one
//! embedder.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;
use sha2::{Digest, Sha256};
use tch::{Kind, Tensor};

use crate::error::{HisdError, Result};

/// Identity of an embedder, echoed into every report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmbedderInfo {
    pub kind: String,
    pub dim: usize,
    /// Seed for generated embedders, path for loaded ones.
    pub source: String,
    /// sha256 over the weights.
    pub weights: String,
}

pub trait Embedder: Send + Sync {
    fn info(&self) -> &EmbedderInfo;

    /// `B × 3 × H × W` in [0,1] to `B` rows of `dim` values.
    fn embed(&self, images: &Tensor) -> Result<Vec<Vec<f32>>>;

    fn embed_all(&self, images: &Tensor, chunk: i64) -> Result<Vec<Vec<f32>>> {
        let n = images.size()[0];
        let mut out = Vec::with_capacity(n as usize);
        let mut start = 0;
        while start < n {
            let len = chunk.min(n - start);
            out.extend(self.embed(&images.narrow(0, start, len))?);
            start += len;
        }
        Ok(out)
    }
}

fn rows(t: &Tensor) -> Result<Vec<Vec<f32>>> {
    let t = t.to_kind(Kind::Float).contiguous();
    let d = t.size()[1] as usize;
    let flat = Vec::<f32>::try_from(t.flatten(0, -1))?;
    Ok(flat.chunks(d).map(<[f32]>::to_vec).collect())
}

/// Fixed random convolutional features: three 3×3 conv + leaky-ReLU +
/// average-pool stages (3→16→32→16 channels), then a 2×2 adaptive average
/// pool, giving 64 values that keep coarse layout and colour.
#[derive(Debug)]
pub struct RandomConvEmbedder {
    info: EmbedderInfo,
    weights: Vec<Tensor>,
}

// SAFETY: the weights are created once, never require grad and are never
// written after construction; forward passes only read them.
unsafe impl Sync for RandomConvEmbedder {}

pub const RANDOM_CONV_DIM: usize = 64;
const STAGES: [(i64, i64); 3] = [(3, 16), (16, 32), (32, 16)];

impl RandomConvEmbedder {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut hasher = Sha256::new();
        let weights = STAGES
            .iter()
            .map(|&(cin, cout)| {
                let std = (2.0 / (cin * 9) as f64).sqrt();
                let normal = Normal::new(0.0, std).expect("positive std");
                let v: Vec<f32> = (0..cout * cin * 9).map(|_| normal.sample(&mut rng) as f32).collect();
                for x in &v {
                    hasher.update(x.to_le_bytes());
                }
                Tensor::from_slice(&v).view([cout, cin, 3, 3])
            })
            .collect();
        let info = EmbedderInfo {
            kind: "random-conv".into(),
            dim: RANDOM_CONV_DIM,
            source: format!("seed {seed}"),
            weights: hex::encode(hasher.finalize()),
        };
        Self { info, weights }
    }
}

impl Embedder for RandomConvEmbedder {
    fn info(&self) -> &EmbedderInfo {
        &self.info
    }

    fn embed(&self, images: &Tensor) -> Result<Vec<Vec<f32>>> {
        let s = images.size();
        if s.len() != 4 || s[1] != 3 {
            return Err(HisdError::Shape(format!("expected B×3×H×W images, got {s:?}")));
        }
        tch::no_grad(|| {
            let mut h = images.to_kind(Kind::Float) * 2.0 - 1.0;
            for w in &self.weights {
                h = h.conv2d(w, None::<Tensor>, [1, 1], [1, 1], [1, 1], 1);
                h = h.maximum(&(&h * 0.2));
                if h.size()[2] >= 2 {
                    h = h.avg_pool2d([2, 2], [2, 2], [0, 0], false, true, None::<i64>);
                }
            }
            rows(&h.adaptive_avg_pool2d([2, 2]).flatten(1, -1))
        })
    }
}

/// A TorchScript module mapping `B × 3 × H × W` images in [0,1] to
/// `B × D` features, e.g. an exported pretrained classifier.
pub struct ScriptedEmbedder {
    info: EmbedderInfo,
    module: tch::CModule,
}

// SAFETY: the module is loaded once, used in eval mode under no_grad, and
// never mutated after construction.
unsafe impl Sync for ScriptedEmbedder {}
unsafe impl Send for ScriptedEmbedder {}

impl ScriptedEmbedder {
    pub fn load(path: &Path, dim: usize) -> Result<Self> {
        let mut module = tch::CModule::load(path)?;
        module.set_eval();
        let bytes = std::fs::read(path)?;
        let info = EmbedderInfo {
            kind: "torchscript".into(),
            dim,
            source: path.display().to_string(),
            weights: hex::encode(Sha256::digest(&bytes)),
        };
        Ok(Self { info, module })
    }
}

impl Embedder for ScriptedEmbedder {
    fn info(&self) -> &EmbedderInfo {
        &self.info
    }

    fn embed(&self, images: &Tensor) -> Result<Vec<Vec<f32>>> {
        let out = tch::no_grad(|| self.module.forward_ts(&[images.to_kind(Kind::Float)]))?;
        if out.size() != [images.size()[0], self.info.dim as i64] {
            return Err(HisdError::Shape(format!("embedder returned {:?}, expected B×{}", out.size(), self.info.dim)));
        }
        rows(&out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_conv_is_seeded_and_shaped() {
        let x = Tensor::rand([5, 3, 32, 32], (Kind::Float, tch::Device::Cpu));
        let (a, b) = (RandomConvEmbedder::new(3), RandomConvEmbedder::new(3));
        assert_eq!(a.info(), b.info());
        let (ea, eb) = (a.embed(&x).unwrap(), b.embed(&x).unwrap());
        assert_eq!(ea, eb);
        assert_eq!((ea.len(), ea[0].len()), (5, RANDOM_CONV_DIM));
        assert_ne!(RandomConvEmbedder::new(4).info().weights, a.info().weights);
        // Chunking may change conv kernels, so only near-equality holds.
        for (u, v) in a.embed_all(&x, 2).unwrap().iter().zip(&ea) {
            assert!(u.iter().zip(v).all(|(p, q)| (p - q).abs() < 1e-5));
        }
    }
}
