use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use tch::Tensor;

use crate::checkpoint::{Checkpoint, RngState};
use crate::config::HisdConfig;
use crate::error::{HisdError, Result};
use crate::hierarchy::{Dataset, IterationSample, Sampler};
use crate::net::{Ablation, NetworkBundle, ParamStore};
use crate::training::config::TrainConfig;
use crate::training::losses::{loss_d, loss_g, loss_rec, loss_sty, total_g, LossReport};
use crate::training::optim::{ema_update, Adam, AdamSlot};
use crate::training::paths::run_paths;

const D_OPT: &str = "adam_d";
const G_OPT: &str = "adam_g";

/// Owns the bundle and both optimizers.
pub struct Trainer {
    pub bundle: NetworkBundle,
    pub cfg: TrainConfig,
    pub d_opt: Adam,
    pub g_opt: Adam,
    pub iteration: u64,
    gen_names: Vec<String>,
    dis_names: Vec<String>,
}

fn names_and_tensors(store: &ParamStore) -> (Vec<String>, Vec<Tensor>) {
    store.iter().map(|(k, v)| (k.clone(), v.shallow_clone())).unzip()
}

fn scalar(t: &Tensor) -> f64 {
    t.double_value(&[])
}

impl Trainer {
    pub fn new(bundle: NetworkBundle, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let gen_names = bundle.gen_params.names().cloned().collect();
        let dis_names = bundle.dis_params.names().cloned().collect();
        Ok(Self {
            d_opt: Adam::new(cfg.beta1, cfg.beta2, cfg.adam_eps),
            g_opt: Adam::new(cfg.beta1, cfg.beta2, cfg.adam_eps),
            bundle,
            cfg,
            iteration: 0,
            gen_names,
            dis_names,
        })
    }

    /// One D update (hinge + R1), then one update of E, G, T, F, M on the
    /// same sample, then the EMA update.
    pub fn step(&mut self, sample: &IterationSample) -> Result<LossReport> {
        let cfg = &self.cfg;
        let out = run_paths(&self.bundle.main, sample)?;

        let (d_adv, d_r1) = loss_d(&self.bundle, sample, &out, cfg.r1_gamma)?;
        let d_total = &d_adv + &d_r1;
        let mut report = LossReport { d_adv: scalar(&d_adv), d_r1: scalar(&d_r1), d_total: scalar(&d_total), ..Default::default() };
        if !report.d_total.is_finite() {
            return Err(self.non_finite(&report, sample));
        }
        let (_, dis_tensors) = names_and_tensors(&self.bundle.dis_params);
        let d_grads = Tensor::run_backward(&[&d_total], &dis_tensors, false, false);
        self.d_opt.step(&self.bundle.dis_params, &self.dis_names, &d_grads, |_| cfg.lr_main)?;

        let g_adv = loss_g(&self.bundle, sample, &out)?;
        let rec = loss_rec(&out, &sample.x);
        let sty = loss_sty(&out.style_back.codes, &out.style_generated.codes)?;
        let g_total = total_g(&g_adv, &rec, &sty, cfg.lambda_rec, cfg.lambda_sty);
        report.g_adv = scalar(&g_adv);
        report.rec = scalar(&rec);
        report.sty = scalar(&sty);
        report.g_total = scalar(&g_total);
        if !report.is_finite() {
            return Err(self.non_finite(&report, sample));
        }
        let (_, gen_tensors) = names_and_tensors(&self.bundle.gen_params);
        let g_grads = Tensor::run_backward(&[&g_total], &gen_tensors, false, false);
        let (lr_main, lr_mapper) = (cfg.lr_main, cfg.lr_mapper);
        self.g_opt.step(&self.bundle.gen_params, &self.gen_names, &g_grads, |name| {
            if name.starts_with("mapper.") {
                lr_mapper
            } else {
                lr_main
            }
        })?;

        ema_update(&self.bundle.ema_params, &self.bundle.gen_params, cfg.ema_weight)?;
        self.iteration += 1;
        Ok(report)
    }

    fn non_finite(&self, report: &LossReport, sample: &IterationSample) -> HisdError {
        HisdError::NonFinite {
            iteration: self.iteration,
            detail: format!(
                "{} (tag {}, {} -> {}, records {:?})",
                serde_json::to_string(report).unwrap_or_default(),
                sample.tag,
                sample.source,
                sample.target,
                sample.indices
            ),
        }
    }

    pub fn to_checkpoint(&self, rng: Option<&ChaCha8Rng>, seed: Option<u64>) -> Checkpoint {
        let mut ck = Checkpoint::from_bundle(&self.bundle, self.iteration);
        ck.header.train = Some(self.cfg.clone());
        ck.header.rng = rng.map(RngState::capture);
        ck.header.seed = seed;
        for (opt_name, opt) in [(D_OPT, &self.d_opt), (G_OPT, &self.g_opt)] {
            let (mut m, mut v) = (ParamStore::new(), ParamStore::new());
            let mut steps = BTreeMap::new();
            for (name, slot) in &opt.slots {
                m.insert(name.clone(), slot.m.shallow_clone());
                v.insert(name.clone(), slot.v.shallow_clone());
                steps.insert(name.clone(), slot.step);
            }
            ck.tables.insert(format!("{opt_name}.m"), m);
            ck.tables.insert(format!("{opt_name}.v"), v);
            ck.header.optimizer_steps.insert(opt_name.to_string(), steps);
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint, cfg: TrainConfig) -> Result<Self> {
        let mut t = Trainer::new(ck.to_bundle()?, cfg)?;
        t.iteration = ck.header.iteration;
        for (opt_name, opt) in [(D_OPT, &mut t.d_opt), (G_OPT, &mut t.g_opt)] {
            let (Some(m), Some(v)) = (ck.tables.get(&format!("{opt_name}.m")), ck.tables.get(&format!("{opt_name}.v"))) else {
                continue;
            };
            let steps = ck.header.optimizer_steps.get(opt_name);
            for (name, mt) in m.iter() {
                let vt = v.get(name).ok_or_else(|| HisdError::Checkpoint(format!("{opt_name}: missing second moment for `{name}`")))?;
                let step = steps.and_then(|s| s.get(name)).copied().unwrap_or(0);
                opt.slots.insert(name.clone(), AdamSlot { m: mt.shallow_clone(), v: vt.shallow_clone(), step });
            }
        }
        Ok(t)
    }
}

/// One line of the progress log.
#[derive(Debug, Serialize)]
pub struct ProgressLine<'a> {
    pub iteration: u64,
    #[serde(flatten)]
    pub losses: &'a LossReport,
}

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub config: HisdConfig,
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    pub resume: Option<PathBuf>,
    pub seed: u64,
    pub ablation: Option<Ablation>,
    pub quiet: bool,
}

#[derive(Debug)]
pub struct TrainSummary {
    pub final_checkpoint: PathBuf,
    pub iterations: u64,
    pub last: LossReport,
}

pub fn latest_path(out_dir: &Path) -> PathBuf {
    out_dir.join("latest.hisd")
}

/// Runs (or resumes) a full training job, writing periodic checkpoints,
/// `latest.hisd`, `final.hisd` and `progress.jsonl` into `out_dir`.
pub fn train(opts: &TrainOptions, dataset: &Dataset) -> Result<TrainSummary> {
    let mut config = opts.config.clone();
    if opts.ablation.is_some() {
        config.model.ablation = opts.ablation;
    }
    let schema = config.schema()?;
    let cfg = config.train.clone();
    cfg.validate()?;
    if cfg.deterministic {
        tch::set_num_threads(1);
    }
    std::fs::create_dir_all(&opts.out_dir)?;

    let split = crate::config::dataset_split(dataset, &opts.data_dir, cfg.test_count)?;
    let resume_from = opts.resume.clone().or_else(|| Some(latest_path(&opts.out_dir)).filter(|p| p.exists()));
    let (mut trainer, rng) = match resume_from {
        Some(path) => {
            let ck = Checkpoint::read(&path)?;
            if ck.header.schema_fingerprint != schema.fingerprint() {
                return Err(HisdError::Checkpoint(format!("{} was trained with a different schema", path.display())));
            }
            let rng = match &ck.header.rng {
                Some(state) => state.restore()?,
                None => sampler_rng(opts.seed),
            };
            if !opts.quiet {
                log::info!("resuming from {} at iteration {}", path.display(), ck.header.iteration);
            }
            (Trainer::from_checkpoint(&ck, cfg.clone())?, rng)
        }
        None => {
            let mut init_rng = ChaCha8Rng::seed_from_u64(opts.seed);
            let bundle = NetworkBundle::init(&schema, &config.model, &mut init_rng)?;
            (Trainer::new(bundle, cfg.clone())?, sampler_rng(opts.seed))
        }
    };
    let mut sampler = Sampler::new(dataset, &schema, &split.train, rng, config.model.latent_dim as usize, config.model.image_size)?;

    let mut log_file = OpenOptions::new().create(true).append(true).open(opts.out_dir.join("progress.jsonl"))?;
    let mut last = LossReport::default();
    while trainer.iteration < cfg.iterations {
        let sample = sampler.sample_iteration(dataset, cfg.batch)?;
        last = match trainer.step(&sample) {
            Ok(r) => r,
            Err(e @ HisdError::NonFinite { .. }) => {
                let snap = opts.out_dir.join("diagnostic.hisd");
                trainer.to_checkpoint(Some(sampler.rng()), Some(opts.seed)).write(&snap)?;
                std::fs::write(opts.out_dir.join("diagnostic.txt"), e.to_string())?;
                return Err(e);
            }
            Err(e) => return Err(e),
        };
        let it = trainer.iteration;
        if it % cfg.log_every == 0 || it == cfg.iterations {
            let line = serde_json::to_string(&ProgressLine { iteration: it, losses: &last })?;
            writeln!(log_file, "{line}")?;
            if !opts.quiet {
                println!("{line}");
            }
        }
        if it % cfg.checkpoint_every == 0 && it < cfg.iterations {
            let ck = trainer.to_checkpoint(Some(sampler.rng()), Some(opts.seed));
            ck.write(&opts.out_dir.join(format!("ckpt_{it:08}.hisd")))?;
            ck.write(&latest_path(&opts.out_dir))?;
        }
    }
    let ck = trainer.to_checkpoint(Some(sampler.rng()), Some(opts.seed));
    let final_checkpoint = opts.out_dir.join("final.hisd");
    ck.write(&final_checkpoint)?;
    ck.write(&latest_path(&opts.out_dir))?;
    Ok(TrainSummary { final_checkpoint, iterations: trainer.iteration, last })
}

fn sampler_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    rng
}
