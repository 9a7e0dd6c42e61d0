use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use tch::{Kind, Tensor};

use crate::error::{HisdError, Result};
use crate::hierarchy::ingest::Dataset;
use crate::hierarchy::schema::TagSchema;

/// One training draw.
#[derive(Debug)]
pub struct IterationSample {
    /// `batch × 3 × H × W`, values in [0,1].
    pub x: Tensor,
    pub tag: usize,
    pub source: usize,
    pub target: usize,
    /// `batch × K_tag` condition values.
    pub conditions: Tensor,
    /// `batch × d_z`, standard normal.
    pub z: Tensor,
    pub indices: Vec<usize>,
}

/// Index-level draw, before any pixels are touched.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Draw {
    pub tag: usize,
    pub source: usize,
    pub target: usize,
    pub indices: Vec<usize>,
}

/// Owns its rng; one sampler per training process.
pub struct Sampler {
    rng: ChaCha8Rng,
    /// `pools[i][j]` lists record indices with attribute `j` for tag `i`.
    pools: Vec<Vec<Vec<usize>>>,
    latent_dim: usize,
    image_size: u32,
}

impl Sampler {
    /// `eligible` restricts which records may be drawn (usually the
    /// training split).
    pub fn new(dataset: &Dataset, schema: &TagSchema, eligible: &[usize], rng: ChaCha8Rng, latent_dim: usize, image_size: u32) -> Result<Self> {
        let mut pools: Vec<Vec<Vec<usize>>> = schema.tags().iter().map(|t| vec![Vec::new(); t.attribute_count()]).collect();
        for &k in eligible {
            for (i, attr) in dataset.records[k].attributes.iter().enumerate() {
                if let Some(j) = attr {
                    pools[i][*j].push(k);
                }
            }
        }
        for (i, tag) in schema.tags().iter().enumerate() {
            for (j, pool) in pools[i].iter().enumerate() {
                if pool.is_empty() {
                    return Err(HisdError::EmptyPool { tag: tag.name.clone(), attribute: tag.attributes[j].clone() });
                }
            }
        }
        Ok(Self { rng, pools, latent_dim, image_size })
    }

    pub fn rng(&self) -> &ChaCha8Rng {
        &self.rng
    }

    pub fn set_rng(&mut self, rng: ChaCha8Rng) {
        self.rng = rng;
    }

    /// Tag uniform over N, source uniform over M_i, target uniform over the
    /// remaining M_i − 1, images uniform (with replacement) from the pool.
    pub fn draw(&mut self, batch: usize) -> Draw {
        let tag = self.rng.gen_range(0..self.pools.len());
        let m = self.pools[tag].len();
        let source = self.rng.gen_range(0..m);
        let mut target = self.rng.gen_range(0..m - 1);
        if target >= source {
            target += 1;
        }
        let pool = &self.pools[tag][source];
        let indices = (0..batch).map(|_| *pool.choose(&mut self.rng).expect("non-empty pool")).collect();
        Draw { tag, source, target, indices }
    }

    pub fn latent(&mut self, batch: usize) -> Tensor {
        let v: Vec<f32> = (0..batch * self.latent_dim).map(|_| self.rng.sample(StandardNormal)).collect();
        Tensor::from_slice(&v).view([batch as i64, self.latent_dim as i64])
    }

    pub fn sample_iteration(&mut self, dataset: &Dataset, batch: usize) -> Result<IterationSample> {
        let Draw { tag, source, target, indices } = self.draw(batch);
        let x = gather_images(dataset, &indices, self.image_size)?;
        let conditions = gather_conditions(dataset, &indices, tag);
        let z = self.latent(batch);
        Ok(IterationSample { x, tag, source, target, conditions, z, indices })
    }
}

pub fn gather_images(dataset: &Dataset, indices: &[usize], size: u32) -> Result<Tensor> {
    let plane = 3 * (size as usize) * (size as usize);
    let mut buf = Vec::with_capacity(indices.len() * plane);
    for &k in indices {
        buf.extend_from_slice(&dataset.pixels(k, size)?);
    }
    Ok(Tensor::from_slice(&buf).view([indices.len() as i64, 3, size as i64, size as i64]))
}

pub fn gather_conditions(dataset: &Dataset, indices: &[usize], tag: usize) -> Tensor {
    let k = dataset.records.first().map_or(0, |r| r.conditions[tag].len());
    let v: Vec<f32> = indices.iter().flat_map(|&n| dataset.records[n].conditions[tag].iter().copied()).collect();
    Tensor::from_slice(&v).view([indices.len() as i64, k as i64]).to_kind(Kind::Float)
}
