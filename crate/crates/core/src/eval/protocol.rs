//! Realism and disentanglement FID protocols.
//!
//! Every eligible source image of the test set is translated to the target
//! attribute with `k` styles (latent seeds, or extracted from references
//! drawn uniformly from the target attribute's test images, `k` per
//! source), and the translated set is compared with the real test images
//! that carry the target attribute.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tch::Tensor;

use crate::error::{HisdError, Result};
use crate::eval::embed::Embedder;
use crate::eval::fid::{fid, FidStats};
use crate::hierarchy::sampler::gather_images;
use crate::hierarchy::{Dataset, LabelTerm, TagSchema};
use crate::inference::InferenceModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Latent,
    Reference,
}

impl Mode {
    pub fn letter(self) -> &'static str {
        match self {
            Mode::Latent => "L",
            Mode::Reference => "R",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = HisdError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "latent" | "L" => Ok(Mode::Latent),
            "reference" | "R" => Ok(Mode::Reference),
            other => Err(HisdError::Config(format!("unknown mode `{other}`"))),
        }
    }
}

/// Per-image styles for one translated batch.
#[derive(Debug)]
pub enum StyleBatch {
    /// One latent seed per image.
    Latent(Vec<u64>),
    /// One reference image per row.
    Reference(Tensor),
}

/// Anything that can translate a batch of images for a tag. Implemented by
/// trained models and by the reference probes used to validate metrics.
pub trait Editor: Sync {
    /// `target` is ignored in reference mode.
    fn translate_batch(&self, x: &Tensor, tag: usize, target: usize, styles: &StyleBatch) -> Result<Tensor>;
}

impl Editor for InferenceModel {
    fn translate_batch(&self, x: &Tensor, tag: usize, target: usize, styles: &StyleBatch) -> Result<Tensor> {
        let style = match styles {
            StyleBatch::Latent(seeds) => {
                let d = self.config.latent_dim as usize;
                let z: Vec<f32> = seeds.iter().flat_map(|&s| crate::inference::latent_from_seed(s, d)).collect();
                tch::no_grad(|| self.nets.map_latent(&Tensor::from_slice(&z).view([seeds.len() as i64, d as i64]), tag, target))?
            }
            StyleBatch::Reference(r) => self.extract(r, tag)?,
        };
        self.decode(&self.translate(&self.encode(x)?, &style)?)
    }
}

/// Returns its input; the "model" for real-vs-real sanity checks.
pub struct IdentityEditor;

impl Editor for IdentityEditor {
    fn translate_batch(&self, x: &Tensor, _: usize, _: usize, _: &StyleBatch) -> Result<Tensor> {
        Ok(x.shallow_clone())
    }
}

/// Where the test images come from and how styles are drawn.
pub struct Setup<'a> {
    pub dataset: &'a Dataset,
    /// Record indices available to the protocol (normally the test split).
    pub pool: &'a [usize],
    pub image_size: u32,
    pub k: usize,
    pub seed: u64,
    pub batch: usize,
}

/// A conjunction of condition terms, e.g. `Square=1,Light=-1`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Subset {
    pub terms: Vec<LabelTerm>,
}

impl Subset {
    pub fn parse(text: &str) -> Result<Self> {
        let terms = text.split(',').map(str::trim).filter(|t| !t.is_empty()).map(str::parse).collect::<Result<_>>()?;
        Ok(Self { terms })
    }

    /// Record filter for tag `tag`; terms must name that tag's conditions.
    pub fn matcher(&self, schema: &TagSchema, tag: usize) -> Result<impl Fn(&Dataset, usize) -> bool> {
        let spec = schema.tag(tag)?;
        let idx = self
            .terms
            .iter()
            .map(|t| {
                let k = spec.conditions.iter().position(|c| *c == t.label).ok_or_else(|| {
                    HisdError::Config(format!("`{}` is not a condition of tag `{}`", t.label, spec.name))
                })?;
                Ok((k, t.positive))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(move |d: &Dataset, n: usize| idx.iter().all(|&(k, pos)| (d.records[n].conditions[tag][k] > 0.5) == pos))
    }
}

/// One translated source image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pair {
    pub source: usize,
    /// Latent seed, or record index of the reference.
    pub style: u64,
}

/// Sources: pool records with a known attribute other than `target`.
pub fn sources(setup: &Setup<'_>, tag: usize, target: usize, keep: impl Fn(&Dataset, usize) -> bool) -> Vec<usize> {
    setup
        .pool
        .iter()
        .copied()
        .filter(|&n| matches!(setup.dataset.records[n].attributes[tag], Some(j) if j != target) && keep(setup.dataset, n))
        .collect()
}

/// Pool records carrying `target`.
pub fn targets(setup: &Setup<'_>, tag: usize, target: usize, keep: impl Fn(&Dataset, usize) -> bool) -> Vec<usize> {
    setup
        .pool
        .iter()
        .copied()
        .filter(|&n| setup.dataset.records[n].attributes[tag] == Some(target) && keep(setup.dataset, n))
        .collect()
}

/// `k` seeded styles per source. References are drawn uniformly, with
/// replacement, from `references`.
pub fn plan_pairs(sources: &[usize], references: &[usize], k: usize, mode: Mode, seed: u64) -> Result<Vec<Pair>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if mode == Mode::Reference && references.is_empty() {
        return Err(HisdError::Eval("no reference images with the target attribute".into()));
    }
    let mut out = Vec::with_capacity(sources.len() * k);
    for &source in sources {
        for _ in 0..k {
            let style = match mode {
                Mode::Latent => rng.gen(),
                Mode::Reference => *references.choose(&mut rng).expect("non-empty") as u64,
            };
            out.push(Pair { source, style });
        }
    }
    Ok(out)
}

/// Translates `pairs` in batches, handing each `(pairs, sources, outputs)`
/// chunk to `sink`.
pub fn for_each_translated(
    editor: &dyn Editor,
    setup: &Setup<'_>,
    tag: usize,
    target: usize,
    mode: Mode,
    pairs: &[Pair],
    mut sink: impl FnMut(&[Pair], &Tensor, &Tensor) -> Result<()>,
) -> Result<()> {
    for chunk in pairs.chunks(setup.batch.max(1)) {
        let src: Vec<usize> = chunk.iter().map(|p| p.source).collect();
        let x = gather_images(setup.dataset, &src, setup.image_size)?;
        let styles = match mode {
            Mode::Latent => StyleBatch::Latent(chunk.iter().map(|p| p.style).collect()),
            Mode::Reference => {
                let refs: Vec<usize> = chunk.iter().map(|p| p.style as usize).collect();
                StyleBatch::Reference(gather_images(setup.dataset, &refs, setup.image_size)?)
            }
        };
        let y = editor.translate_batch(&x, tag, target, &styles)?;
        sink(chunk, &x, &y)?;
    }
    Ok(())
}

fn embed_records(embedder: &dyn Embedder, setup: &Setup<'_>, records: &[usize]) -> Result<Vec<Vec<f32>>> {
    let mut rows = Vec::with_capacity(records.len());
    for chunk in records.chunks(setup.batch.max(1)) {
        rows.extend(embedder.embed(&gather_images(setup.dataset, chunk, setup.image_size)?)?);
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProtocolResult {
    pub metric: String,
    pub mode: Mode,
    pub value: f64,
    pub sources: usize,
    pub translated: usize,
    pub reals: usize,
}

/// `G = |L − R|`.
pub fn capacity_gap(latent: f64, reference: f64) -> f64 {
    (latent - reference).abs()
}

fn run(
    metric: &str,
    editor: &dyn Editor,
    embedder: &dyn Embedder,
    setup: &Setup<'_>,
    tag: usize,
    target: usize,
    mode: Mode,
    keep: impl Fn(&Dataset, usize) -> bool + Copy,
) -> Result<ProtocolResult> {
    let src = sources(setup, tag, target, keep);
    let reals = targets(setup, tag, target, keep);
    if src.is_empty() || reals.is_empty() {
        return Err(HisdError::Eval(format!(
            "{metric}: {} source and {} target images in the selected subset",
            src.len(),
            reals.len()
        )));
    }
    // References come from the whole target pool, not just the subset.
    let ref_pool = targets(setup, tag, target, |_, _| true);
    let pairs = plan_pairs(&src, &ref_pool, setup.k, mode, setup.seed)?;
    let mut fake_rows = Vec::with_capacity(pairs.len());
    for_each_translated(editor, setup, tag, target, mode, &pairs, |_, _, y| {
        fake_rows.extend(embedder.embed(y)?);
        Ok(())
    })?;
    let value = fid(&FidStats::from_rows(&fake_rows)?, &FidStats::from_rows(&embed_records(embedder, setup, &reals)?)?)?;
    Ok(ProtocolResult { metric: metric.into(), mode, value, sources: src.len(), translated: pairs.len(), reals: reals.len() })
}

/// FID between translated sources and real target-attribute images.
pub fn realism_protocol(editor: &dyn Editor, embedder: &dyn Embedder, setup: &Setup<'_>, tag: usize, target: usize, mode: Mode) -> Result<ProtocolResult> {
    run("realism", editor, embedder, setup, tag, target, mode, |_, _| true)
}

/// As [`realism_protocol`], with both the sources and the real comparison
/// set restricted to `subset`.
pub fn disentanglement_protocol(
    editor: &dyn Editor,
    embedder: &dyn Embedder,
    setup: &Setup<'_>,
    schema: &TagSchema,
    tag: usize,
    target: usize,
    subset: &Subset,
    mode: Mode,
) -> Result<ProtocolResult> {
    let keep = subset.matcher(schema, tag)?;
    run("disentanglement", editor, embedder, setup, tag, target, mode, |d, n| keep(d, n))
}
