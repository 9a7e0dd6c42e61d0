use rand_chacha::ChaCha8Rng;
use tch::Tensor;

use crate::error::{HisdError, Result};
use crate::hierarchy::TagSchema;
use crate::net::config::{ModelConfig, ENCODER_BLOCKS};
use crate::net::modules::{Discriminator, Encoder, Extractor, Generator, Mapper, StyleCode, Translator, TranslatorOutput};
use crate::net::params::{Initializer, Lookup, ParamSource, ParamStore};

/// The modules used at test time: E, G, {T_i}, F, M.
#[derive(Debug)]
pub struct Networks {
    pub encoder: Encoder,
    pub generator: Generator,
    pub translators: Vec<Translator>,
    pub extractor: Extractor,
    pub mapper: Mapper,
    feature_channels: i64,
    style_dim: i64,
    attribute_counts: Vec<usize>,
    /// Replaces every translator's mask logits with this constant.
    pub mask_override: Option<f64>,
}

impl Networks {
    pub fn build(src: &mut dyn ParamSource, cfg: &ModelConfig, schema: &TagSchema) -> Result<Self> {
        let counts = schema.attribute_counts();
        Ok(Self {
            encoder: Encoder::new(src, cfg)?,
            generator: Generator::new(src, cfg)?,
            translators: (0..schema.tag_count()).map(|i| Translator::new(src, cfg, i)).collect::<Result<_>>()?,
            extractor: Extractor::new(src, cfg, schema.tag_count())?,
            mapper: Mapper::new(src, cfg, &counts)?,
            feature_channels: cfg.feature_channels(),
            style_dim: cfg.style_dim,
            attribute_counts: counts,
            mask_override: None,
        })
    }

    fn check_images(x: &Tensor) -> Result<()> {
        let s = x.size();
        if s.len() != 4 || s[1] != 3 {
            return Err(HisdError::Shape(format!("expected B×3×H×W images, got {s:?}")));
        }
        let f = 1 << ENCODER_BLOCKS;
        if s[2] % f != 0 || s[3] % f != 0 || s[2] == 0 || s[3] == 0 {
            return Err(HisdError::Shape(format!("image size {}×{} is not divisible by {f}", s[2], s[3])));
        }
        Ok(())
    }

    fn check_feature(&self, e: &Tensor) -> Result<()> {
        let s = e.size();
        if s.len() != 4 || s[1] != self.feature_channels {
            return Err(HisdError::Shape(format!("expected B×{}×h×w feature, got {s:?}", self.feature_channels)));
        }
        Ok(())
    }

    fn check_tag(&self, tag: usize) -> Result<()> {
        if tag >= self.translators.len() {
            return Err(HisdError::Index(format!("tag {tag} out of range (N = {})", self.translators.len())));
        }
        Ok(())
    }

    pub fn encode(&self, x: &Tensor) -> Result<Tensor> {
        Self::check_images(x)?;
        Ok(self.encoder.forward(x))
    }

    pub fn translate(&self, e: &Tensor, style: &StyleCode, tag: usize) -> Result<TranslatorOutput> {
        if style.tag != tag {
            return Err(HisdError::Contract(format!("style for tag {} passed to translator {tag}", style.tag)));
        }
        self.check_tag(tag)?;
        self.check_feature(e)?;
        let cs = style.codes.size();
        if cs != [e.size()[0], self.style_dim] {
            return Err(HisdError::Shape(format!("style codes {cs:?} do not match batch {} × d_s {}", e.size()[0], self.style_dim)));
        }
        Ok(self.translators[tag].forward(e, &style.codes, self.mask_override))
    }

    pub fn generate(&self, e: &Tensor) -> Result<Tensor> {
        self.check_feature(e)?;
        Ok(self.generator.forward(e))
    }

    pub fn map_latent(&self, z: &Tensor, tag: usize, attribute: usize) -> Result<StyleCode> {
        self.check_tag(tag)?;
        if attribute >= self.attribute_counts[tag] {
            return Err(HisdError::Index(format!("attribute {attribute} out of range for tag {tag}")));
        }
        Ok(StyleCode::new(tag, self.mapper.forward(z, tag, attribute)?))
    }

    pub fn extract(&self, x: &Tensor, tag: usize) -> Result<StyleCode> {
        Self::check_images(x)?;
        self.check_tag(tag)?;
        Ok(StyleCode::new(tag, self.extractor.forward(x, tag)?))
    }

    pub fn style_dim(&self) -> i64 {
        self.style_dim
    }
}

/// All trainable state: main modules, their EMA shadow, and D.
#[derive(Debug)]
pub struct NetworkBundle {
    pub config: ModelConfig,
    pub schema: TagSchema,
    pub gen_params: ParamStore,
    pub ema_params: ParamStore,
    pub dis_params: ParamStore,
    pub main: Networks,
    pub ema: Networks,
    pub discriminator: Discriminator,
}

impl NetworkBundle {
    /// He-initialized weights, zero biases (AdaIN scale biases one), EMA
    /// shadow equal to the main weights.
    pub fn init(schema: &TagSchema, config: &ModelConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let mut gen_params = ParamStore::new();
        let main = Networks::build(&mut Initializer { store: &mut gen_params, rng }, config, schema)?;
        let mut dis_params = ParamStore::new();
        let discriminator = Self::build_discriminator(&mut Initializer { store: &mut dis_params, rng }, config, schema)?;
        let ema_params = gen_params.deep_copy(false);
        let ema = Networks::build(&mut Lookup { store: &ema_params }, config, schema)?;
        Ok(Self { config: config.clone(), schema: schema.clone(), gen_params, ema_params, dis_params, main, ema, discriminator })
    }

    /// Rebuilds a bundle around existing parameter tables.
    pub fn from_params(schema: &TagSchema, config: &ModelConfig, gen_params: ParamStore, ema_params: ParamStore, dis_params: ParamStore) -> Result<Self> {
        config.validate()?;
        let main = Networks::build(&mut Lookup { store: &gen_params }, config, schema)?;
        let ema = Networks::build(&mut Lookup { store: &ema_params }, config, schema)?;
        let discriminator = Self::build_discriminator(&mut Lookup { store: &dis_params }, config, schema)?;
        for (table, store) in [("main", &gen_params), ("ema", &ema_params)] {
            if store.len() != gen_params.len() {
                return Err(HisdError::Checkpoint(format!("{table} table has {} entries, expected {}", store.len(), gen_params.len())));
            }
        }
        Ok(Self { config: config.clone(), schema: schema.clone(), gen_params, ema_params, dis_params, main, ema, discriminator })
    }

    fn build_discriminator(src: &mut dyn ParamSource, config: &ModelConfig, schema: &TagSchema) -> Result<Discriminator> {
        let conditions: Vec<usize> = schema.tags().iter().map(|t| t.conditions.len()).collect();
        Discriminator::new(src, config, &schema.attribute_counts(), &conditions)
    }

    /// D score for `(tag, attribute)`; conditions must match the tag.
    pub fn discriminate(&self, x: &Tensor, tag: usize, attribute: usize, conditions: &Tensor) -> Result<Tensor> {
        self.schema.check_pair(tag, attribute)?;
        Networks::check_images(x)?;
        self.discriminator.forward(x, tag, attribute, conditions)
    }
}
