//! The six modules: encoder, generator, per-tag translators, extractor,
//! mapper and discriminator.

use tch::{Kind, Tensor};

use crate::error::{HisdError, Result};
use crate::net::config::{MaskMode, ModelConfig, ENCODER_BLOCKS};
use crate::net::layers::{instance_norm, lrelu, AdaInBlock, Conv2d, DownBlock, Linear, UpBlock};
use crate::net::params::{Init, ParamSource};

/// A batch of style codes for one tag, `B × d_s`.
#[derive(Debug)]
pub struct StyleCode {
    pub tag: usize,
    pub codes: Tensor,
}

impl StyleCode {
    pub fn new(tag: usize, codes: Tensor) -> Self {
        Self { tag, codes }
    }

    pub fn batch(&self) -> i64 {
        self.codes.size()[0]
    }

    pub fn detach(&self) -> StyleCode {
        StyleCode { tag: self.tag, codes: self.codes.detach() }
    }

    pub fn shallow_clone(&self) -> StyleCode {
        StyleCode { tag: self.tag, codes: self.codes.shallow_clone() }
    }
}

#[derive(Debug)]
pub struct TranslatorOutput {
    /// Pre-sigmoid mask; undefined in the no-mask ablation.
    pub mask_logits: Option<Tensor>,
    /// Candidate feature.
    pub candidate: Tensor,
    pub translated: Tensor,
}

/// Blends `e` and `f` under mask logits `m`: `σ(m)·e + (1 − σ(m))·f`.
pub fn blend(e: &Tensor, f: &Tensor, m: &Tensor) -> Tensor {
    let a = m.sigmoid();
    &a * e + (1.0 - &a) * f
}

#[derive(Debug)]
pub struct Encoder {
    from_rgb: Conv2d,
    blocks: Vec<DownBlock>,
}

impl Encoder {
    pub fn new(src: &mut dyn ParamSource, cfg: &ModelConfig) -> Result<Self> {
        let from_rgb = Conv2d::new(src, "encoder.from_rgb", 3, cfg.width(0), 1, true)?;
        let blocks = (0..ENCODER_BLOCKS)
            .map(|k| DownBlock::new(src, &format!("encoder.block{k}"), cfg.width(k), cfg.width(k + 1), true, cfg.slope, cfg.eps))
            .collect::<Result<_>>()?;
        Ok(Self { from_rgb, blocks })
    }

    /// `x` in [0,1]; rescaled to [−1,1] before the first layer.
    pub fn forward(&self, x: &Tensor) -> Tensor {
        let mut h = self.from_rgb.forward(&(x * 2.0 - 1.0));
        for b in &self.blocks {
            h = b.forward(&h);
        }
        h
    }
}

#[derive(Debug)]
pub struct Generator {
    blocks: Vec<UpBlock>,
    to_rgb: Conv2d,
    slope: f64,
    eps: f64,
}

impl Generator {
    pub fn new(src: &mut dyn ParamSource, cfg: &ModelConfig) -> Result<Self> {
        let blocks = (0..ENCODER_BLOCKS)
            .rev()
            .map(|k| UpBlock::new(src, &format!("generator.block{}", ENCODER_BLOCKS - 1 - k), cfg.width(k + 1), cfg.width(k), cfg.slope, cfg.eps))
            .collect::<Result<_>>()?;
        let to_rgb = Conv2d::new(src, "generator.to_rgb", cfg.width(0), 3, 1, true)?;
        Ok(Self { blocks, to_rgb, slope: cfg.slope, eps: cfg.eps })
    }

    /// Output in [0,1] via a tanh rescaled from [−1,1].
    pub fn forward(&self, e: &Tensor) -> Tensor {
        let mut h = e.shallow_clone();
        for b in &self.blocks {
            h = b.forward(&h);
        }
        let y = self.to_rgb.forward(&lrelu(&instance_norm(&h, self.eps), self.slope)).tanh();
        (y + 1.0) * 0.5
    }
}

#[derive(Debug)]
pub struct Translator {
    from_feature: Conv2d,
    pub blocks: Vec<AdaInBlock>,
    to_candidate: Conv2d,
    to_mask: Option<Conv2d>,
    mode: MaskMode,
    slope: f64,
}

impl Translator {
    pub fn new(src: &mut dyn ParamSource, cfg: &ModelConfig, tag: usize) -> Result<Self> {
        let (ce, ct) = (cfg.feature_channels(), cfg.translator_channels());
        let name = format!("translator.{tag}");
        let from_feature = Conv2d::new(src, &format!("{name}.from_feature"), ce, ct, 1, true)?;
        let blocks = (0..cfg.translator_blocks)
            .map(|k| AdaInBlock::new(src, &format!("{name}.block{k}"), ct, cfg.style_dim, cfg.slope, cfg.eps))
            .collect::<Result<_>>()?;
        let to_candidate = Conv2d::new(src, &format!("{name}.to_candidate"), ct, ce, 1, true)?;
        let mode = cfg.mask_mode();
        let to_mask = match mode {
            MaskMode::Full => Some(Conv2d::new(src, &format!("{name}.to_mask"), ct, ce, 1, true)?),
            MaskMode::SpatialOnly => Some(Conv2d::new(src, &format!("{name}.to_mask"), ct, 1, 1, true)?),
            MaskMode::None => None,
        };
        Ok(Self { from_feature, blocks, to_candidate, to_mask, mode, slope: cfg.slope })
    }

    /// `mask_override` replaces the mask logits with a constant.
    pub fn forward(&self, e: &Tensor, style: &Tensor, mask_override: Option<f64>) -> TranslatorOutput {
        let mut h = self.from_feature.forward(e);
        for b in &self.blocks {
            h = b.forward(&h, style);
        }
        let h = lrelu(&h, self.slope);
        let candidate = self.to_candidate.forward(&h);
        let mask_logits = match (&self.to_mask, mask_override) {
            (_, Some(v)) => Some(Tensor::full_like(e, v)),
            (Some(conv), None) => {
                let m = conv.forward(&h);
                Some(if self.mode == MaskMode::SpatialOnly { m.expand_as(e) } else { m })
            }
            (None, None) => None,
        };
        let translated = match &mask_logits {
            Some(m) => blend(e, &candidate, m),
            None => candidate.shallow_clone(),
        };
        TranslatorOutput { mask_logits, candidate, translated }
    }
}

/// Shared downsampling trunk of the extractor and the discriminator.
#[derive(Debug)]
struct Trunk {
    from_rgb: Conv2d,
    blocks: Vec<DownBlock>,
    slope: f64,
}

impl Trunk {
    fn new(src: &mut dyn ParamSource, cfg: &ModelConfig, prefix: &str) -> Result<(Self, i64)> {
        let from_rgb = Conv2d::new(src, &format!("{prefix}.from_rgb"), 3, cfg.width(0), 1, true)?;
        let blocks = (0..cfg.extractor_blocks as u32)
            .map(|k| DownBlock::new(src, &format!("{prefix}.block{k}"), cfg.width(k), cfg.width(k + 1), false, cfg.slope, cfg.eps))
            .collect::<Result<_>>()?;
        Ok((Self { from_rgb, blocks, slope: cfg.slope }, cfg.width(cfg.extractor_blocks as u32)))
    }

    /// `B × C` pooled feature.
    fn forward(&self, x: &Tensor) -> Tensor {
        let mut h = self.from_rgb.forward(&(x * 2.0 - 1.0));
        for b in &self.blocks {
            h = b.forward(&h);
        }
        lrelu(&h, self.slope).mean_dim([2i64, 3].as_slice(), false, Kind::Float)
    }
}

#[derive(Debug)]
pub struct Extractor {
    trunk: Trunk,
    pub heads: Vec<Linear>,
}

impl Extractor {
    pub fn new(src: &mut dyn ParamSource, cfg: &ModelConfig, tags: usize) -> Result<Self> {
        let (trunk, c) = Trunk::new(src, cfg, "extractor")?;
        let heads = (0..tags)
            .map(|i| Linear::new(src, &format!("extractor.head.{i}"), c, cfg.style_dim, Some(Init::Zeros)))
            .collect::<Result<_>>()?;
        Ok(Self { trunk, heads })
    }

    pub fn forward(&self, x: &Tensor, tag: usize) -> Result<Tensor> {
        let head = self.heads.get(tag).ok_or_else(|| HisdError::Index(format!("extractor has no tag {tag}")))?;
        Ok(head.forward(&self.trunk.forward(x)))
    }
}

#[derive(Debug)]
pub struct Mapper {
    trunk: Vec<Linear>,
    mid: Vec<Vec<Linear>>,
    heads: Vec<Vec<Vec<Linear>>>,
    slope: f64,
}

impl Mapper {
    pub fn new(src: &mut dyn ParamSource, cfg: &ModelConfig, attribute_counts: &[usize]) -> Result<Self> {
        let hd = cfg.mapper_hidden;
        let two = |src: &mut dyn ParamSource, name: &str, d_in: i64, d_out: i64| -> Result<Vec<Linear>> {
            Ok(vec![
                Linear::new(src, &format!("{name}.fc0"), d_in, hd, Some(Init::Zeros))?,
                Linear::new(src, &format!("{name}.fc1"), hd, d_out, Some(Init::Zeros))?,
            ])
        };
        let trunk = two(src, "mapper.trunk", cfg.latent_dim, hd)?;
        let mid = (0..attribute_counts.len())
            .map(|i| two(src, &format!("mapper.mid.{i}"), hd, hd))
            .collect::<Result<_>>()?;
        let heads = attribute_counts
            .iter()
            .enumerate()
            .map(|(i, &m)| (0..m).map(|j| two(src, &format!("mapper.head.{i}.{j}"), hd, cfg.style_dim)).collect::<Result<Vec<_>>>())
            .collect::<Result<_>>()?;
        Ok(Self { trunk, mid, heads, slope: cfg.slope })
    }

    pub fn forward(&self, z: &Tensor, tag: usize, attribute: usize) -> Result<Tensor> {
        let head = self
            .heads
            .get(tag)
            .and_then(|h| h.get(attribute))
            .ok_or_else(|| HisdError::Index(format!("mapper has no head ({tag}, {attribute})")))?;
        let mut h = z.shallow_clone();
        for layer in self.trunk.iter().chain(&self.mid[tag]) {
            h = lrelu(&layer.forward(&h), self.slope);
        }
        h = lrelu(&head[0].forward(&h), self.slope);
        Ok(head[1].forward(&h))
    }
}

/// Per-(tag, attribute) real/fake head with projection conditioning.
#[derive(Debug)]
pub struct DiscriminatorHead {
    pub score: Linear,
    pub embed: Linear,
}

#[derive(Debug)]
pub struct Discriminator {
    trunk: Trunk,
    pub heads: Vec<Vec<DiscriminatorHead>>,
    condition_counts: Vec<usize>,
    conditional: bool,
}

impl Discriminator {
    pub fn new(src: &mut dyn ParamSource, cfg: &ModelConfig, attribute_counts: &[usize], condition_counts: &[usize]) -> Result<Self> {
        let (trunk, c) = Trunk::new(src, cfg, "discriminator")?;
        let heads = attribute_counts
            .iter()
            .zip(condition_counts)
            .enumerate()
            .map(|(i, (&m, &k))| {
                (0..m)
                    .map(|j| {
                        let name = format!("discriminator.head.{i}.{j}");
                        Ok(DiscriminatorHead {
                            score: Linear::new(src, &format!("{name}.score"), c, 1, Some(Init::Zeros))?,
                            embed: Linear::new(src, &format!("{name}.embed"), k.max(1) as i64, c, None)?,
                        })
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<_>>()?;
        Ok(Self { trunk, heads, condition_counts: condition_counts.to_vec(), conditional: cfg.conditional_discriminator() })
    }

    /// One unbounded score per image.
    pub fn forward(&self, x: &Tensor, tag: usize, attribute: usize, conditions: &Tensor) -> Result<Tensor> {
        let head = self
            .heads
            .get(tag)
            .and_then(|h| h.get(attribute))
            .ok_or_else(|| HisdError::Index(format!("discriminator has no head ({tag}, {attribute})")))?;
        let k = self.condition_counts[tag] as i64;
        let cs = conditions.size();
        if cs.len() != 2 || cs[1] != k || cs[0] != x.size()[0] {
            return Err(HisdError::Shape(format!(
                "tag {tag} expects B×{k} conditions for a batch of {}, got {cs:?}",
                x.size()[0]
            )));
        }
        let h = self.trunk.forward(x);
        let mut score = head.score.forward(&h).squeeze_dim(1);
        if self.conditional && k > 0 {
            score = score + (head.embed.forward(conditions) * &h).sum_dim_intlist(1, false, Kind::Float);
        }
        Ok(score)
    }
}
