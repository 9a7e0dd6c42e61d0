#![allow(dead_code)]

use hisd::hierarchy::{IterationSample, TagSchema};
use hisd::net::{ModelConfig, NetworkBundle};
use hisd::synth;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tch::{Kind, Tensor};

/// Small enough that a training step takes milliseconds.
pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        image_size: 16,
        base_width: 4,
        max_width: 8,
        style_dim: 6,
        latent_dim: 4,
        mapper_hidden: 8,
        translator_blocks: 2,
        extractor_blocks: 2,
        ..ModelConfig::default()
    }
}

/// Hat {with, without} and Frame {red, green, blue}, two conditions each.
pub fn schema() -> TagSchema {
    TagSchema::from_config(&synth::schema_config(), None).unwrap()
}

pub fn bundle(cfg: &ModelConfig, seed: u64) -> NetworkBundle {
    NetworkBundle::init(&schema(), cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

pub fn images(batch: i64, size: i64, seed: i64) -> Tensor {
    tch::manual_seed(seed);
    Tensor::rand([batch, 3, size, size], (Kind::Float, tch::Device::Cpu))
}

pub fn sample(cfg: &ModelConfig, tag: usize, source: usize, target: usize, batch: i64, seed: i64) -> IterationSample {
    let x = images(batch, cfg.image_size as i64, seed);
    let conditions = Tensor::rand([batch, 2], (Kind::Float, tch::Device::Cpu)).round();
    let z = Tensor::randn([batch, cfg.latent_dim], (Kind::Float, tch::Device::Cpu));
    IterationSample { x, tag, source, target, conditions, z, indices: (0..batch as usize).collect() }
}

pub fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
    (a - b).abs().max().double_value(&[])
}

pub fn bitwise_eq(a: &Tensor, b: &Tensor) -> bool {
    a.size() == b.size() && Vec::<f32>::try_from(a.flatten(0, -1)).unwrap() == Vec::<f32>::try_from(b.flatten(0, -1)).unwrap()
}
