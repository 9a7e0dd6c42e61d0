use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use hisd::config::{config_path, dataset_split, load_dataset, HisdConfig};
use hisd::eval::report::{run_eval, EvalRequest, Protocol};
use hisd::eval::Mode;
use hisd::hierarchy::dataset_stats;
use hisd::imageio;
use hisd::inference::{interpolate, EditPlan, EditSpec, EditStep, InferenceModel, StyleFile, StyleSource};
use hisd::net::Ablation;
use hisd::synth::{make_dataset, ImbalanceConfig};
use hisd::training::{train, TrainOptions};
use hisd::Result;

#[derive(Parser)]
#[command(name = "hisd", version, about = "Hierarchical style disentanglement: train, edit, evaluate, serve")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print per-attribute counts and condition rates.
    Stats {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
    },
    /// Write the synthetic benchmark dataset.
    Synth {
        #[arg(long, default_value_t = 8000)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Train (or resume) a model.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        ablation: Option<Ablation>,
        /// Override the configured iteration count.
        #[arg(long)]
        iterations: Option<u64>,
        #[arg(long)]
        quiet: bool,
    },
    /// Apply edits in order to one image. With no edits, writes the
    /// reconstruction.
    Translate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// `tag=…,attr=…,mode=latent|reference|explicit,seed=…|ref=path|style=path`; repeatable.
        #[arg(long = "edit")]
        edits: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the style code of an image for one tag.
    Extract {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        tag: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Translate an image along the line between two style codes.
    Interpolate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        style_a: PathBuf,
        #[arg(long)]
        style_b: PathBuf,
        #[arg(long, default_value_t = 8)]
        steps: usize,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run an evaluation protocol on the test split and write a JSON report.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        protocol: Protocol,
        #[arg(long)]
        tag: Option<String>,
        #[arg(long)]
        attr: Option<String>,
        /// `latent` or `reference`; both when omitted.
        #[arg(long)]
        mode: Option<Mode>,
        /// Condition terms for `disent`, e.g. `Square=1,Light=-1`.
        #[arg(long)]
        subset: Option<String>,
        #[arg(long, default_value_t = hisd::eval::DEFAULT_K)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0)]
        embedder_seed: u64,
        /// TorchScript embedder mapping B×3×H×W in [0,1] to B×D.
        #[arg(long, requires = "embedder_dim")]
        embedder_script: Option<PathBuf>,
        #[arg(long)]
        embedder_dim: Option<usize>,
        /// Evaluate on every record instead of the test split.
        #[arg(long)]
        all: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve the editing API.
    Serve {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, default_value_t = 8000)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: std::net::IpAddr,
        /// Idle seconds before a session expires.
        #[arg(long, default_value_t = 900)]
        session_ttl: u64,
    },
}

fn read_config(explicit: Option<&Path>, data: &Path) -> Result<HisdConfig> {
    HisdConfig::read(&explicit.map(Path::to_path_buf).unwrap_or_else(|| config_path(data)))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Stats { config, data } => {
            let cfg = read_config(config.as_deref(), &data)?;
            let schema = cfg.schema()?;
            let dataset = load_dataset(&data, &schema)?;
            print!("{}", dataset_stats(&dataset, &schema, None));
            let r = &dataset.report;
            println!("conflicts: {} {:?}; ineligible: {:?}", r.conflicts.len(), r.per_tag, r.ineligible_per_tag);
        }
        Command::Synth { n, out, seed } => {
            let set = make_dataset(n, &ImbalanceConfig::default(), seed)?;
            set.write(&out)?;
            println!("wrote {n} images to {}", out.display());
        }
        Command::Train { config, data, out, resume, seed, ablation, iterations, quiet } => {
            let mut cfg = read_config(config.as_deref(), &data)?;
            if let Some(n) = iterations {
                cfg.train.iterations = n;
            }
            let schema = cfg.schema()?;
            let mut dataset = load_dataset(&data, &schema)?;
            dataset.preload(cfg.model.image_size)?;
            let opts = TrainOptions { config: cfg, data_dir: data, out_dir: out, resume, seed, ablation, quiet };
            let summary = train(&opts, &dataset)?;
            println!("finished at iteration {}: {}", summary.iterations, summary.final_checkpoint.display());
        }
        Command::Translate { ckpt, input, edits, out } => {
            let model = InferenceModel::load(&ckpt)?;
            let x = model.read_input(&input)?;
            let y = if edits.is_empty() {
                model.reconstruct(&x)?
            } else {
                let steps = edits
                    .iter()
                    .map(|e| {
                        EditSpec::parse(e)?.resolve(&model.schema, |path| {
                            let img = imageio::read_image(Path::new(path))?;
                            model.check_image(&img)?;
                            Ok(img)
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                model.apply_plan(&x, &EditPlan::new(steps)?)?
            };
            imageio::write_png(&imageio::tensor_to_image(&y)?, &out)?;
        }
        Command::Extract { ckpt, input, tag, out } => {
            let model = InferenceModel::load(&ckpt)?;
            let x = model.read_input(&input)?;
            let style = model.extract(&x, model.schema.tag_index(&tag)?)?;
            model.style_file(&style)?.write(&out)?;
        }
        Command::Interpolate { ckpt, style_a, style_b, steps, input, out } => {
            let model = InferenceModel::load(&ckpt)?;
            let a = model.style_from_file(&StyleFile::read(&style_a)?)?;
            let b = model.style_from_file(&StyleFile::read(&style_b)?)?;
            if steps < 2 {
                return Err(hisd::HisdError::Config("--steps must be at least 2".into()));
            }
            let x = model.read_input(&input)?;
            std::fs::create_dir_all(&out)?;
            for i in 0..steps {
                let s = interpolate(&a, &b, i as f64 / (steps - 1) as f64)?;
                let v = Vec::<f32>::try_from(s.codes.flatten(0, -1))?;
                let step = EditStep { tag: s.tag, attribute: None, source: StyleSource::Explicit(v) };
                let y = model.apply_plan(&x, &EditPlan::new(vec![step])?)?;
                imageio::write_png(&imageio::tensor_to_image(&y)?, &out.join(format!("frame_{i:02}.png")))?;
            }
        }
        Command::Eval { ckpt, data, protocol, tag, attr, mode, subset, k, seed, embedder_seed, embedder_script, embedder_dim, all, out } => {
            let model = InferenceModel::load(&ckpt)?;
            let cfg = read_config(None, &data)?;
            let mut dataset = load_dataset(&data, &model.schema)?;
            dataset.preload(model.image_size())?;
            let pool = if all { (0..dataset.len()).collect() } else { dataset_split(&dataset, &data, cfg.train.test_count)?.test };
            let req = EvalRequest {
                protocol,
                tag,
                attribute: attr,
                mode,
                subset,
                k,
                seed,
                embedder_seed,
                embedder_script: embedder_script.zip(embedder_dim),
                ..EvalRequest::default()
            };
            let mut report = run_eval(&model, &dataset, &pool, &req)?;
            report["checkpoint"] = serde_json::json!(ckpt.display().to_string());
            report["data"] = serde_json::json!(data.display().to_string());
            std::fs::write(&out, serde_json::to_string_pretty(&report)?)?;
            println!("{}", serde_json::to_string_pretty(&report["results"])?.lines().take(60).collect::<Vec<_>>().join("\n"));
        }
        Command::Serve { ckpt, port, host, session_ttl } => {
            let model = InferenceModel::load(&ckpt)?;
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(hisd::service::serve(model, (host, port).into(), std::time::Duration::from_secs(session_ttl)))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
