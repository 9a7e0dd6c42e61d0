//! JSON reports for `hisd eval`.

use serde::Serialize;
use serde_json::{json, Value};

use crate::error::{HisdError, Result};
use crate::eval::embed::{Embedder, RandomConvEmbedder, ScriptedEmbedder};
use crate::eval::oracle::{aggregate, oracle_metrics, OracleRow};
use crate::eval::protocol::{capacity_gap, disentanglement_protocol, realism_protocol, Mode, Setup, Subset};
use crate::eval::styles::{separate_rows, style_export};
use crate::eval::{DEFAULT_K, FID_NOTE};
use crate::hierarchy::Dataset;
use crate::inference::InferenceModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Realism,
    Disent,
    Oracle,
    Styles,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalRequest {
    pub protocol: Protocol,
    pub tag: Option<String>,
    pub attribute: Option<String>,
    /// Both modes (and their gap) when unset.
    pub mode: Option<Mode>,
    /// Condition terms for the disentanglement protocol, e.g. `Square=1`.
    pub subset: Option<String>,
    pub k: usize,
    pub seed: u64,
    pub batch: usize,
    pub embedder_seed: u64,
    /// TorchScript embedder and its output width, replacing the random one.
    pub embedder_script: Option<(std::path::PathBuf, usize)>,
}

impl Default for EvalRequest {
    fn default() -> Self {
        Self {
            protocol: Protocol::Oracle,
            tag: None,
            attribute: None,
            mode: None,
            subset: None,
            k: DEFAULT_K,
            seed: 0,
            batch: 64,
            embedder_seed: 0,
            embedder_script: None,
        }
    }
}

fn embedder(req: &EvalRequest) -> Result<Box<dyn Embedder>> {
    Ok(match &req.embedder_script {
        Some((path, dim)) => Box::new(ScriptedEmbedder::load(path, *dim)?),
        None => Box::new(RandomConvEmbedder::new(req.embedder_seed)),
    })
}

fn tags(model: &InferenceModel, req: &EvalRequest) -> Result<Vec<usize>> {
    match &req.tag {
        Some(t) => Ok(vec![model.schema.tag_index(t)?]),
        None => Ok((0..model.schema.tag_count()).collect()),
    }
}

fn one_target(model: &InferenceModel, req: &EvalRequest) -> Result<(usize, usize)> {
    let tag = req.tag.as_deref().ok_or_else(|| HisdError::Config("this protocol needs --tag".into()))?;
    let attr = req.attribute.as_deref().ok_or_else(|| HisdError::Config("this protocol needs --attr".into()))?;
    model.schema.resolve(tag, attr)
}

/// Runs one protocol over `pool` and returns the report body.
pub fn run_eval(model: &InferenceModel, dataset: &Dataset, pool: &[usize], req: &EvalRequest) -> Result<Value> {
    let setup = Setup { dataset, pool, image_size: model.image_size(), k: req.k, seed: req.seed, batch: req.batch };
    let modes: Vec<Mode> = req.mode.map_or_else(|| vec![Mode::Latent, Mode::Reference], |m| vec![m]);
    let results = match req.protocol {
        Protocol::Realism | Protocol::Disent => {
            let (tag, target) = one_target(model, req)?;
            let emb = embedder(req)?;
            let subset = Subset::parse(req.subset.as_deref().unwrap_or(""))?;
            if req.protocol == Protocol::Disent && subset.terms.is_empty() {
                return Err(HisdError::Config("the disentanglement protocol needs --subset".into()));
            }
            let runs = modes
                .iter()
                .map(|&m| match req.protocol {
                    Protocol::Realism => realism_protocol(model, emb.as_ref(), &setup, tag, target, m),
                    _ => disentanglement_protocol(model, emb.as_ref(), &setup, &model.schema, tag, target, &subset, m),
                })
                .collect::<Result<Vec<_>>>()?;
            let gap = (runs.len() == 2).then(|| capacity_gap(runs[0].value, runs[1].value));
            json!({ "runs": runs, "gap": gap, "embedder": emb.info(), "note": FID_NOTE })
        }
        Protocol::Oracle => {
            let mut per_tag = Vec::new();
            for tag in tags(model, req)? {
                let targets: Vec<usize> = match &req.attribute {
                    Some(a) if req.tag.is_some() => vec![model.schema.resolve(req.tag.as_deref().unwrap_or_default(), a)?.1],
                    _ => (0..model.schema.tag(tag)?.attributes.len()).collect(),
                };
                let rows = targets.iter().map(|&j| oracle_metrics(model, &setup, tag, j)).collect::<Result<Vec<OracleRow>>>()?;
                per_tag.push(json!({ "tag": model.schema.tag(tag)?.name, "aggregate": aggregate(&rows), "targets": rows }));
            }
            json!({ "tags": per_tag })
        }
        Protocol::Styles => {
            let mut per_tag = Vec::new();
            for tag in tags(model, req)? {
                let rows = style_export(model, dataset, pool, tag, req.batch)?;
                let sep = separate_rows(&rows, &model.schema.tag(tag)?.attributes, req.seed)?;
                per_tag.push(json!({ "tag": model.schema.tag(tag)?.name, "separator": sep, "rows": rows }));
            }
            json!({ "tags": per_tag })
        }
    };
    Ok(json!({
        "request": req,
        "model": { "fingerprint": model.fingerprint, "config": model.config },
        "pool_size": pool.len(),
        "results": results,
    }))
}
