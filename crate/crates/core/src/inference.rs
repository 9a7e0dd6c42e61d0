//! Test-time editing: encode once, apply translators in sequence, decode.
//! Always runs the EMA weights.

use std::path::Path;

use image::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use tch::{Kind, Tensor};

use crate::checkpoint::{Checkpoint, EMA_TABLE};
use crate::error::{HisdError, Result};
use crate::hierarchy::TagSchema;
use crate::imageio;
use crate::net::params::{Lookup, ParamStore};
use crate::net::{ModelConfig, Networks, StyleCode};

/// Where a step's style comes from.
#[derive(Debug)]
pub enum StyleSource {
    /// `M_{i,j}(z)` with `z` drawn from a seeded standard normal.
    Latent { seed: u64 },
    /// `M_{i,j}(z)` for an explicit `z`.
    LatentCode(Vec<f32>),
    /// `F_i(reference)`, a `1 × 3 × H × W` image in [0,1].
    Reference(Tensor),
    /// A style vector of length `d_s`.
    Explicit(Vec<f32>),
}

#[derive(Debug)]
pub struct EditStep {
    pub tag: usize,
    /// Required for latent sources, ignored otherwise.
    pub attribute: Option<usize>,
    pub source: StyleSource,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StyleMode {
    Latent,
    Reference,
    Explicit,
}

impl std::str::FromStr for StyleMode {
    type Err = HisdError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "latent" => Ok(Self::Latent),
            "reference" => Ok(Self::Reference),
            "explicit" | "style" => Ok(Self::Explicit),
            other => Err(HisdError::Config(format!("unknown style mode `{other}`"))),
        }
    }
}

/// Name-based description of one edit, as it arrives from the CLI or the
/// HTTP API. Exactly one of `seed`, `reference` or `style` must be set, and
/// it must match `mode`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EditSpec {
    pub tag: String,
    #[serde(default, alias = "attr", skip_serializing_if = "Option::is_none")]
    pub attribute: Option<String>,
    #[serde(default = "default_mode")]
    pub mode: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Reference image; a path on the CLI, base64 PNG over HTTP.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub style: Option<Vec<f32>>,
}

fn default_mode() -> String {
    "latent".into()
}

impl EditSpec {
    /// Parses `tag=Bangs,attr=with,mode=latent,seed=7`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut spec = EditSpec { mode: default_mode(), ..Default::default() };
        let mut has_tag = false;
        for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, v) = part.split_once('=').ok_or_else(|| HisdError::Config(format!("edit field `{part}` is not key=value")))?;
            match k.trim() {
                "tag" => {
                    spec.tag = v.to_string();
                    has_tag = true;
                }
                "attr" | "attribute" => spec.attribute = Some(v.to_string()),
                "mode" => spec.mode = v.to_string(),
                "seed" => spec.seed = Some(v.parse().map_err(|_| HisdError::Config(format!("bad seed `{v}`")))?),
                "ref" | "reference" => spec.reference = Some(v.to_string()),
                "style" => spec.style = Some(StyleFile::read(Path::new(v))?.vector),
                other => return Err(HisdError::Config(format!("unknown edit field `{other}`"))),
            }
        }
        if !has_tag {
            return Err(HisdError::Config(format!("edit `{text}` has no tag")));
        }
        Ok(spec)
    }

    /// Resolves names against `schema`. `load_reference` turns the
    /// `reference` string into an image.
    pub fn resolve(&self, schema: &TagSchema, load_reference: impl FnOnce(&str) -> Result<RgbImage>) -> Result<EditStep> {
        let tag = schema.tag_index(&self.tag)?;
        let attribute = match &self.attribute {
            Some(a) => Some(schema.resolve(&self.tag, a)?.1),
            None => None,
        };
        let mode: StyleMode = self.mode.parse()?;
        let given = [self.seed.is_some(), self.reference.is_some(), self.style.is_some()];
        if given.iter().filter(|&&g| g).count() != 1 {
            return Err(HisdError::Contract("an edit needs exactly one of seed, reference or style".into()));
        }
        let source = match mode {
            StyleMode::Latent => {
                let seed = self.seed.ok_or_else(|| HisdError::Contract("latent mode needs a seed".into()))?;
                if attribute.is_none() {
                    return Err(HisdError::Contract("latent mode needs an attribute".into()));
                }
                StyleSource::Latent { seed }
            }
            StyleMode::Reference => {
                let r = self.reference.as_deref().ok_or_else(|| HisdError::Contract("reference mode needs a reference image".into()))?;
                StyleSource::Reference(imageio::image_to_tensor(&load_reference(r)?))
            }
            StyleMode::Explicit => {
                StyleSource::Explicit(self.style.clone().ok_or_else(|| HisdError::Contract("explicit mode needs a style vector".into()))?)
            }
        };
        Ok(EditStep { tag, attribute, source })
    }
}

/// Ordered edits on distinct tags.
#[derive(Debug)]
pub struct EditPlan {
    steps: Vec<EditStep>,
}

impl EditPlan {
    pub fn new(steps: Vec<EditStep>) -> Result<Self> {
        if steps.is_empty() {
            return Err(HisdError::Contract("an edit plan needs at least one step".into()));
        }
        for (k, s) in steps.iter().enumerate() {
            if steps[..k].iter().any(|p| p.tag == s.tag) {
                return Err(HisdError::Contract(format!("tag {} is edited twice", s.tag)));
            }
        }
        Ok(Self { steps })
    }

    pub fn steps(&self) -> &[EditStep] {
        &self.steps
    }
}

/// `d_z` standard-normal values from a seed.
pub fn latent_from_seed(seed: u64, dim: usize) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..dim).map(|_| rng.sample(StandardNormal)).collect()
}

/// `(1 − t)·a + t·b`.
pub fn interpolate(a: &StyleCode, b: &StyleCode, t: f64) -> Result<StyleCode> {
    if a.tag != b.tag {
        return Err(HisdError::Contract(format!("cannot interpolate styles of tags {} and {}", a.tag, b.tag)));
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(HisdError::Contract(format!("t = {t} outside [0,1]")));
    }
    if a.codes.size() != b.codes.size() {
        return Err(HisdError::Shape(format!("style shapes differ: {:?} vs {:?}", a.codes.size(), b.codes.size())));
    }
    Ok(StyleCode::new(a.tag, &a.codes * (1.0 - t) + &b.codes * t))
}

/// A style vector on disk or over the wire.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StyleFile {
    pub fingerprint: String,
    pub tag: String,
    pub vector: Vec<f32>,
}

impl StyleFile {
    pub fn read(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// Read-only EMA networks loaded from a checkpoint.
#[derive(Debug)]
pub struct InferenceModel {
    pub nets: Networks,
    pub schema: TagSchema,
    pub config: ModelConfig,
    pub fingerprint: String,
    _params: ParamStore,
}

// SAFETY: every tensor reachable from the model is a leaf without grad,
// created at load time and never written afterwards (all methods take
// `&self` and run under `no_grad`). libtorch allows concurrent reads of
// such tensors; `Tensor` only lacks `Sync` because it could be mutated in
// place, which this type never does once shared.
unsafe impl Sync for InferenceModel {}

impl InferenceModel {
    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::read(path)?)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let schema = ck.schema()?;
        let params = ck.table(EMA_TABLE)?.deep_copy(false);
        let nets = Networks::build(&mut Lookup { store: &params }, &ck.header.model, &schema)?;
        Ok(Self { nets, fingerprint: schema.fingerprint(), schema, config: ck.header.model.clone(), _params: params })
    }

    /// Wraps existing EMA networks, e.g. straight from a trainer.
    pub fn from_params(schema: &TagSchema, config: &ModelConfig, ema: &ParamStore) -> Result<Self> {
        let params = ema.deep_copy(false);
        let nets = Networks::build(&mut Lookup { store: &params }, config, schema)?;
        Ok(Self { nets, fingerprint: schema.fingerprint(), schema: schema.clone(), config: config.clone(), _params: params })
    }

    pub fn image_size(&self) -> u32 {
        self.config.image_size
    }

    /// Checks that an image has the trained resolution.
    pub fn check_image(&self, img: &RgbImage) -> Result<()> {
        let s = self.image_size();
        if img.width() != s || img.height() != s {
            return Err(HisdError::Shape(format!("image is {}×{}, model expects {s}×{s}", img.width(), img.height())));
        }
        Ok(())
    }

    pub fn encode(&self, x: &Tensor) -> Result<Tensor> {
        tch::no_grad(|| self.nets.encode(x))
    }

    pub fn decode(&self, e: &Tensor) -> Result<Tensor> {
        tch::no_grad(|| self.nets.generate(e))
    }

    /// Style for one step, batch 1.
    pub fn resolve_style(&self, step: &EditStep) -> Result<StyleCode> {
        tch::no_grad(|| {
            let tag = step.tag;
            self.schema.tag(tag)?;
            let latent = |z: &[f32]| -> Result<StyleCode> {
                let j = step.attribute.ok_or_else(|| HisdError::Contract("latent mode needs an attribute".into()))?;
                if z.len() != self.config.latent_dim as usize {
                    return Err(HisdError::Shape(format!("latent has {} values, expected {}", z.len(), self.config.latent_dim)));
                }
                self.nets.map_latent(&Tensor::from_slice(z).view([1, -1]), tag, j)
            };
            match &step.source {
                StyleSource::Latent { seed } => latent(&latent_from_seed(*seed, self.config.latent_dim as usize)),
                StyleSource::LatentCode(z) => latent(z),
                StyleSource::Reference(r) => self.nets.extract(r, tag),
                StyleSource::Explicit(v) => {
                    if v.len() != self.config.style_dim as usize {
                        return Err(HisdError::Shape(format!("style has {} values, expected {}", v.len(), self.config.style_dim)));
                    }
                    Ok(StyleCode::new(tag, Tensor::from_slice(v).view([1, -1])))
                }
            }
        })
    }

    /// Applies one translator to a feature, broadcasting a batch-1 style.
    pub fn translate(&self, e: &Tensor, style: &StyleCode) -> Result<Tensor> {
        tch::no_grad(|| {
            let b = e.size()[0];
            let s = if style.batch() == b { style.shallow_clone() } else { StyleCode::new(style.tag, style.codes.expand([b, -1], false)) };
            Ok(self.nets.translate(e, &s, style.tag)?.translated)
        })
    }

    /// `G(T_{i_l}(… T_{i_1}(E(x), s_1) …, s_l))` with one encode and one
    /// generate.
    pub fn apply_plan(&self, x: &Tensor, plan: &EditPlan) -> Result<Tensor> {
        let mut e = self.encode(x)?;
        for step in plan.steps() {
            e = self.translate(&e, &self.resolve_style(step)?)?;
        }
        self.decode(&e)
    }

    /// `G(E(x))`.
    pub fn reconstruct(&self, x: &Tensor) -> Result<Tensor> {
        self.decode(&self.encode(x)?)
    }

    /// `k` outputs from one encoding. Latent styles use consecutive draws
    /// from a rng seeded with `seed`, so `k = 1` matches a single latent
    /// step with the same seed.
    pub fn batch_styles(&self, x: &Tensor, tag: usize, attribute: Option<usize>, k: usize, styles: BatchStyles<'_>) -> Result<Vec<Tensor>> {
        let e = self.encode(x)?;
        let codes: Vec<StyleCode> = match styles {
            BatchStyles::Latent { seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let d = self.config.latent_dim as usize;
                (0..k)
                    .map(|_| {
                        let z: Vec<f32> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
                        self.resolve_style(&EditStep { tag, attribute, source: StyleSource::LatentCode(z) })
                    })
                    .collect::<Result<_>>()?
            }
            BatchStyles::References(refs) => {
                if refs.len() < k {
                    return Err(HisdError::Contract(format!("{k} styles requested but only {} references supplied", refs.len())));
                }
                refs[..k].iter().map(|r| tch::no_grad(|| self.nets.extract(r, tag))).collect::<Result<_>>()?
            }
        };
        codes.iter().map(|s| self.decode(&self.translate(&e, s)?)).collect()
    }

    pub fn extract(&self, x: &Tensor, tag: usize) -> Result<StyleCode> {
        tch::no_grad(|| self.nets.extract(x, tag))
    }

    pub fn style_file(&self, style: &StyleCode) -> Result<StyleFile> {
        let v = Vec::<f32>::try_from(style.codes.get(0).to_kind(Kind::Float).contiguous())?;
        Ok(StyleFile { fingerprint: self.fingerprint.clone(), tag: self.schema.tag(style.tag)?.name.clone(), vector: v })
    }

    /// Loads a style file, rejecting ones from another schema.
    pub fn style_from_file(&self, f: &StyleFile) -> Result<StyleCode> {
        if f.fingerprint != self.fingerprint {
            return Err(HisdError::Contract(format!("style for tag `{}` was extracted under a different schema", f.tag)));
        }
        let tag = self.schema.tag_index(&f.tag)?;
        if f.vector.len() != self.config.style_dim as usize {
            return Err(HisdError::Shape(format!("style has {} values, expected {}", f.vector.len(), self.config.style_dim)));
        }
        Ok(StyleCode::new(tag, Tensor::from_slice(&f.vector).view([1, -1])))
    }

    /// Loads an image file at the trained resolution as `1 × 3 × H × W`.
    pub fn read_input(&self, path: &Path) -> Result<Tensor> {
        let img = imageio::read_image(path)?;
        self.check_image(&img)?;
        Ok(imageio::image_to_tensor(&img))
    }
}

pub enum BatchStyles<'a> {
    Latent { seed: u64 },
    References(&'a [Tensor]),
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn edit_spec_parsing() {
        let s = EditSpec::parse("tag=Bangs,attr=with,mode=latent,seed=7").unwrap();
        assert_eq!((s.tag.as_str(), s.attribute.as_deref(), s.mode.as_str(), s.seed), ("Bangs", Some("with"), "latent", Some(7)));
        assert!(EditSpec::parse("attr=with").is_err());
        assert!(EditSpec::parse("tag=Bangs,colour=red").is_err());
        assert!(EditSpec::parse("tag=Bangs,seed=x").is_err());
    }

    #[test]
    fn plans_reject_repeated_tags() {
        let step = |tag| EditStep { tag, attribute: Some(0), source: StyleSource::Latent { seed: 1 } };
        assert!(EditPlan::new(vec![]).is_err());
        assert!(EditPlan::new(vec![step(0), step(1)]).is_ok());
        assert!(EditPlan::new(vec![step(0), step(1), step(0)]).is_err());
    }

    #[test]
    fn interpolation_values() {
        let a = StyleCode::new(0, Tensor::from_slice(&[0f32, 2.0]).view([1, 2]));
        let b = StyleCode::new(0, Tensor::from_slice(&[2f32, 0.0]).view([1, 2]));
        let mid = interpolate(&a, &b, 0.5).unwrap();
        assert_eq!(Vec::<f32>::try_from(mid.codes.flatten(0, -1)).unwrap(), vec![1.0, 1.0]);
        let start = interpolate(&a, &b, 0.0).unwrap();
        assert_eq!(Vec::<f32>::try_from(start.codes.flatten(0, -1)).unwrap(), vec![0.0, 2.0]);
        let c = StyleCode::new(1, b.codes.shallow_clone());
        assert!(interpolate(&a, &c, 0.5).is_err());
        assert!(interpolate(&a, &b, 1.5).is_err());
    }

    #[test]
    fn seeded_latents_repeat() {
        assert_eq!(latent_from_seed(7, 16), latent_from_seed(7, 16));
        assert_ne!(latent_from_seed(7, 16), latent_from_seed(8, 16));
    }
}
