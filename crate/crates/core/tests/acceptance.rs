//! One line per acceptance criterion.
//!
//! Checks that need no trained model always run and must pass. Desk-scale
//! checks read the reports written by `scripts/desk.sh` under
//! `results/desk/` (or `HISD_DESK_RESULTS`) and print SKIP when a report is
//! missing. Their thresholds are printed as PASS/FAIL; set
//! `HISD_ACCEPT_STRICT=1` to also fail the test on a FAIL line. The CelebA
//! ingestion check runs when `HISD_CELEBA_ANNOTATIONS` names the attribute
//! table.

mod common;

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Duration;

use axum::body::Body;
use axum::http::Request;
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use common::*;
use hisd::checkpoint::Checkpoint;
use hisd::config::HisdConfig;
use hisd::eval::fid::{fid, trace_sqrt_product, FidStats};
use hisd::hierarchy::{dataset_stats, ingest, AnnotationTable};
use hisd::imageio;
use hisd::inference::InferenceModel;
use hisd::net::layers::{adain, instance_norm};
use hisd::net::{blend, ParamStore};
use hisd::service::{router, AppState};
use hisd::training::{loss_d, loss_g, loss_rec, loss_sty, r1_penalty, run_paths, TrainConfig, Trainer};
use http_body_util::BodyExt;
use nalgebra::{DMatrix, DVector};
use serde_json::{json, Value};
use tch::{Kind, Tensor};
use tower::ServiceExt;

#[derive(Clone, Copy, PartialEq)]
enum Outcome {
    Pass,
    Fail,
    Skip,
    Context,
}

struct Line {
    name: &'static str,
    outcome: Outcome,
    detail: String,
    /// Failing this line fails the test even without strict mode.
    hard: bool,
}

impl Line {
    fn print(&self) {
        let tag = match self.outcome {
            Outcome::Pass => "PASS",
            Outcome::Fail => "FAIL",
            Outcome::Skip => "SKIP",
            Outcome::Context => "INFO",
        };
        println!("[{tag}] {}: {}", self.name, self.detail);
    }
}

fn verdict(ok: bool) -> Outcome {
    if ok {
        Outcome::Pass
    } else {
        Outcome::Fail
    }
}

// ---------------------------------------------------------------- context

fn paper_context() -> Line {
    Line {
        name: "paper-scale results",
        outcome: Outcome::Context,
        detail: "CelebA-HQ FIDs (latent 21.37 / reference 21.49; disentanglement 71.85 / 71.48) need ~40 GPU-hours; \
                 recorded only, replaced by the property suite and the desk run"
            .into(),
        hard: false,
    }
}

// ---------------------------------------------------------------- property suite

type Check = (&'static str, fn() -> Result<(), String>);

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn check_mask_algebra() -> Result<(), String> {
    let e = Tensor::randn([2, 3, 4, 4], (Kind::Double, tch::Device::Cpu));
    let f = Tensor::randn([2, 3, 4, 4], (Kind::Double, tch::Device::Cpu));
    let keep = blend(&e, &f, &Tensor::full([1], 40.0, (Kind::Double, tch::Device::Cpu)));
    let swap = blend(&e, &f, &Tensor::full([1], -40.0, (Kind::Double, tch::Device::Cpu)));
    let probe = blend(&Tensor::from(4.0f64), &Tensor::from(0.0f64), &Tensor::from(3f64.ln())).double_value(&[]);
    ensure(max_abs_diff(&keep, &e) < 1e-12, || "σ→1 is not the identity".into())?;
    ensure(max_abs_diff(&swap, &f) < 1e-12, || "σ→0 is not replacement".into())?;
    ensure((probe - 3.0).abs() < 1e-12, || format!("scalar probe gave {probe}"))
}

fn check_adain() -> Result<(), String> {
    tch::manual_seed(1);
    let h = Tensor::randn([2, 5, 8, 8], (Kind::Float, tch::Device::Cpu)) * 3.0 + 2.0;
    let n = instance_norm(&h, 1e-5);
    let mean = n.mean_dim([2i64, 3].as_slice(), false, Kind::Double).abs().max().double_value(&[]);
    let var = (n.var_dim([2i64, 3].as_slice(), false, false).to_kind(Kind::Double) - 1.0).abs().max().double_value(&[]);
    ensure(mean <= 1e-4 && var <= 1e-3, || format!("post-norm mean {mean:e}, variance error {var:e}"))?;
    let ones = Tensor::ones([2, 5, 1, 1], (Kind::Float, tch::Device::Cpu));
    let zeros = Tensor::zeros([2, 5, 1, 1], (Kind::Float, tch::Device::Cpu));
    ensure(max_abs_diff(&adain(&h, &ones, &zeros, 1e-5), &n) < 1e-6, || "unit AdaIN differs from instance norm".into())
}

fn check_loss_zero_cases() -> Result<(), String> {
    let cfg = tiny_config();
    let b = bundle(&cfg, 3);
    let s = sample(&cfg, 0, 0, 1, 2, 3);
    let mut out = run_paths(&b.main, &s).map_err(|e| e.to_string())?;
    out.recon_plain = s.x.copy();
    out.recon_self = s.x.copy();
    out.recon_cycle = s.x.copy();
    let rec = loss_rec(&out, &s.x).double_value(&[]);
    let codes = Tensor::randn([3, 6], (Kind::Float, tch::Device::Cpu));
    let sty = loss_sty(&codes, &codes).map_err(|e| e.to_string())?.double_value(&[]);
    ensure(rec == 0.0 && sty == 0.0, || format!("rec {rec}, sty {sty}"))
}

fn check_hinge() -> Result<(), String> {
    let cfg = tiny_config();
    let b = bundle(&cfg, 4);
    tch::no_grad(|| {
        for (_, p) in b.dis_params.iter() {
            let _ = p.shallow_clone().zero_();
        }
    });
    let s = sample(&cfg, 1, 2, 0, 4, 4);
    let out = run_paths(&b.main, &s).map_err(|e| e.to_string())?;
    let (d_adv, _) = loss_d(&b, &s, &out, 1.0).map_err(|e| e.to_string())?;
    let g = loss_g(&b, &s, &out).map_err(|e| e.to_string())?.double_value(&[]);
    ensure(d_adv.double_value(&[]) == 4.0 && g == 0.0, || format!("d_adv {}, g_adv {g}", d_adv.double_value(&[])))
}

fn check_r1() -> Result<(), String> {
    tch::manual_seed(5);
    let opts = (Kind::Double, tch::Device::Cpu);
    let w = Tensor::randn([12], opts);
    let score = |x: &Tensor| x.flatten(1, -1).sin().matmul(&w);
    let x = Tensor::randn([2, 3, 2, 2], opts);
    let xg = x.detach().set_requires_grad(true);
    let analytic = r1_penalty(&score(&xg), &xg, 1.0).double_value(&[]);
    // d/dx Σ w·sin(x) = w·cos(x), so the penalty has a closed form.
    let grad = x.flatten(1, -1).cos() * &w;
    let closed = 0.5 * grad.square().sum_dim_intlist([1i64].as_slice(), false, Kind::Double).mean(Kind::Double).double_value(&[]);
    ensure(((analytic - closed) / closed).abs() <= 1e-3, || format!("{analytic} vs {closed}"))
}

fn check_isolation() -> Result<(), String> {
    let cfg = tiny_config();
    let b = bundle(&cfg, 6);
    let before: Vec<(String, Tensor)> = b.gen_params.iter().chain(b.dis_params.iter()).map(|(k, v)| (k.clone(), v.copy())).collect();
    let mut t = Trainer::new(b, TrainConfig::default()).map_err(|e| e.to_string())?;
    t.step(&sample(&cfg, 1, 0, 2, 4, 6)).map_err(|e| e.to_string())?;
    let stores: [&ParamStore; 2] = [&t.bundle.gen_params, &t.bundle.dis_params];
    for (name, old) in &before {
        let other_bank = name.starts_with("translator.0.") || name.starts_with("mapper.head.0.") || name.starts_with("discriminator.head.0.");
        let now = stores.iter().find_map(|s| s.get(name)).ok_or_else(|| format!("{name} vanished"))?;
        if other_bank && !bitwise_eq(old, now) {
            return Err(format!("{name} moved on a step of another tag"));
        }
    }
    Ok(())
}

fn check_ema() -> Result<(), String> {
    let cfg = tiny_config();
    let b = bundle(&cfg, 7);
    let shadow: Vec<(String, Tensor)> = b.ema_params.iter().map(|(k, v)| (k.clone(), v.copy())).collect();
    for (name, v) in b.gen_params.iter() {
        ensure(bitwise_eq(v, b.ema_params.get(name).unwrap()), || format!("{name}: shadow is not a copy at init"))?;
    }
    let mut t = Trainer::new(b, TrainConfig::default()).map_err(|e| e.to_string())?;
    t.step(&sample(&cfg, 0, 0, 1, 2, 7)).map_err(|e| e.to_string())?;
    for (name, old) in &shadow {
        let expect = old * 0.999 + t.bundle.gen_params.get(name).unwrap().detach() * 0.001;
        ensure(max_abs_diff(t.bundle.ema_params.get(name).unwrap(), &expect) < 1e-7, || format!("{name}: EMA step is off"))?;
    }
    Ok(())
}

fn check_fid() -> Result<(), String> {
    let one = |mu: f64| FidStats { mean: DVector::from_element(1, mu), cov: DMatrix::from_element(1, 1, 2.0), count: 10 };
    let v = fid(&one(0.0), &one(3.0)).map_err(|e| e.to_string())?;
    ensure((v - 9.0).abs() <= 1e-6, || format!("1-D FID {v}"))?;
    // 4×4: Tr sqrt(A B) against an eigen-free Denman–Beavers iteration.
    let a = DMatrix::from_fn(4, 4, |i, j| if i == j { 2.0 + i as f64 } else { 0.3 });
    let b = DMatrix::from_fn(4, 4, |i, j| if i == j { 1.0 + 0.5 * j as f64 } else { -0.1 });
    let (mut y, mut z) = (&a * &b, DMatrix::<f64>::identity(4, 4));
    for _ in 0..60 {
        let (yi, zi) = (y.clone().try_inverse().unwrap(), z.clone().try_inverse().unwrap());
        (y, z) = ((&y + zi) * 0.5, (&z + yi) * 0.5);
    }
    let got = trace_sqrt_product(&a, &b).map_err(|e| e.to_string())?;
    ensure((got - y.trace()).abs() <= 1e-6, || format!("{got} vs {}", y.trace()))
}

fn check_init() -> Result<(), String> {
    let b = bundle(&tiny_config(), 14);
    for (name, t) in b.gen_params.iter().chain(b.dis_params.iter()) {
        if name.ends_with(".bias") {
            let expect = if name.ends_with(".scale.bias") { 1.0 } else { 0.0 };
            ensure(bool::try_from(t.eq(expect).all()).unwrap(), || format!("{name} is not {expect}"))?;
        }
    }
    Ok(())
}

fn property_suite() -> Line {
    let checks: [Check; 9] = [
        ("mask algebra", check_mask_algebra),
        ("AdaIN normalization", check_adain),
        ("loss zero cases", check_loss_zero_cases),
        ("hinge with D≡0", check_hinge),
        ("R1 closed form", check_r1),
        ("bank isolation", check_isolation),
        ("EMA", check_ema),
        ("FID closed forms", check_fid),
        ("initialization", check_init),
    ];
    let started = std::time::Instant::now();
    let failures: Vec<String> = checks.iter().filter_map(|(name, f)| f().err().map(|e| format!("{name}: {e}"))).collect();
    let secs = started.elapsed().as_secs_f64();
    Line {
        name: "unit/property suite",
        outcome: verdict(failures.is_empty() && secs < 300.0),
        detail: if failures.is_empty() {
            format!("{}/{} checks in {secs:.1}s (full suite: netcore, training, evaluation targets)", checks.len(), checks.len())
        } else {
            failures.join("; ")
        },
        hard: true,
    }
}

// ---------------------------------------------------------------- desk reports

fn results_dir() -> PathBuf {
    std::env::var_os("HISD_DESK_RESULTS")
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../results/desk"))
}

fn report(run: &str, kind: &str) -> Option<Value> {
    let text = std::fs::read_to_string(results_dir().join(run).join(format!("{kind}.json"))).ok()?;
    serde_json::from_str(&text).ok()
}

/// Per-tag aggregate rows of an oracle report.
fn aggregates(r: &Value) -> Vec<(String, Value)> {
    r["results"]["tags"]
        .as_array()
        .map(|tags| tags.iter().map(|t| (t["tag"].as_str().unwrap_or("?").to_string(), t["aggregate"].clone())).collect())
        .unwrap_or_default()
}

/// Translation-weighted mean of one metric over tags.
fn overall(r: &Value, metric: &str) -> f64 {
    let rows = aggregates(r);
    let n: f64 = rows.iter().map(|(_, a)| a["translations"].as_f64().unwrap_or(0.0)).sum();
    rows.iter().map(|(_, a)| a[metric].as_f64().unwrap_or(f64::NAN) * a["translations"].as_f64().unwrap_or(0.0)).sum::<f64>() / n
}

const SEEDS: [&str; 3] = ["full1", "full2", "full3"];

fn skip(name: &'static str, why: String) -> Line {
    Line { name, outcome: Outcome::Skip, detail: why, hard: false }
}

/// `ok(tag_row)` must hold on every tag for ≥2 of 3 seeds.
fn desk_threshold(name: &'static str, metric: &str, bound: &str, ok: impl Fn(f64) -> bool) -> Line {
    let reports: Vec<(&str, Value)> = SEEDS.iter().filter_map(|s| report(s, "oracle").map(|r| (*s, r))).collect();
    if reports.len() < 3 {
        return skip(name, format!("{} of 3 seed reports in {}", reports.len(), results_dir().display()));
    }
    let mut passing = 0;
    let mut parts = Vec::new();
    for (seed, r) in &reports {
        let vals: Vec<(String, f64)> = aggregates(r).into_iter().map(|(t, a)| (t, a[metric].as_f64().unwrap_or(f64::NAN))).collect();
        let seed_ok = !vals.is_empty() && vals.iter().all(|(_, v)| ok(*v));
        passing += usize::from(seed_ok);
        parts.push(format!("{seed} {}", vals.iter().map(|(t, v)| format!("{t}={v:.3}")).collect::<Vec<_>>().join(" ")));
    }
    Line { name, outcome: verdict(passing >= 2), detail: format!("{bound}, {passing}/3 seeds: {}", parts.join("; ")), hard: false }
}

fn style_separator() -> Line {
    let name = "style separator ≥0.95 per tag, shuffled ≤0.6";
    let reports: Vec<(&str, Value)> = SEEDS.iter().filter_map(|s| report(s, "styles").map(|r| (*s, r))).collect();
    if reports.len() < 3 {
        return skip(name, format!("{} of 3 style reports", reports.len()));
    }
    let mut passing = 0;
    let mut parts = Vec::new();
    for (seed, r) in &reports {
        let tags = r["results"]["tags"].as_array().cloned().unwrap_or_default();
        let vals: Vec<(String, f64, f64)> = tags
            .iter()
            .map(|t| {
                let s = &t["separator"];
                (t["tag"].as_str().unwrap_or("?").to_string(), s["accuracy"].as_f64().unwrap_or(0.0), s["shuffled_accuracy"].as_f64().unwrap_or(1.0))
            })
            .collect();
        passing += usize::from(!vals.is_empty() && vals.iter().all(|(_, a, s)| *a >= 0.95 && *s <= 0.6));
        parts.push(format!("{seed} {}", vals.iter().map(|(t, a, s)| format!("{t}={a:.3}/{s:.3}")).collect::<Vec<_>>().join(" ")));
    }
    Line { name, outcome: verdict(passing >= 2), detail: format!("{passing}/3 seeds: {}", parts.join("; ")), hard: false }
}

fn ablation_direction(name: &'static str, run: &str, metric: &str, lower: bool) -> Line {
    let (Some(full), Some(abl)) = (report("full1", "oracle"), report(run, "oracle")) else {
        return skip(name, format!("needs full1 and {run} oracle reports"));
    };
    let (f, a) = (overall(&full, metric), overall(&abl, metric));
    let margin = if lower { f - a } else { a - f };
    Line { name, outcome: verdict(margin >= 0.02), detail: format!("{metric}: full {f:.3}, {run} {a:.3}, margin {margin:+.3} (need ≥0.02)"), hard: false }
}

// ---------------------------------------------------------------- CelebA

fn celeba_ingestion() -> Line {
    let name = "CelebA-HQ ingestion proportions ±0.02, split 27000/3000";
    let Some(path) = std::env::var_os("HISD_CELEBA_ANNOTATIONS").map(PathBuf::from) else {
        return skip(name, "HISD_CELEBA_ANNOTATIONS not set".into());
    };
    let run = || -> hisd::Result<(bool, String)> {
        let cfg = HisdConfig::read(&Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/celeba-hq.toml"))?;
        let schema = cfg.schema()?;
        let dataset = ingest(&AnnotationTable::read(&path)?, &schema, Path::new("."))?;
        let stats = dataset_stats(&dataset, &schema, None);
        let mut ok = true;
        let mut parts = Vec::new();
        for (attr, male, aged) in [("with", 0.833, 0.657), ("without", 0.360, 0.200)] {
            let row = stats.get("Eyeglasses", attr).ok_or_else(|| hisd::HisdError::Eval("no Eyeglasses row".into()))?;
            let m = row.rate("Male").map_or(f64::NAN, |c| c.positive);
            let a = row.rate("Young").map_or(f64::NAN, |c| c.negative);
            ok &= (m - male).abs() <= 0.02 && (a - aged).abs() <= 0.02;
            parts.push(format!("{attr}: male {m:.3} (want {male}), aged {a:.3} (want {aged})"));
        }
        let split = dataset.split_tail(cfg.train.test_count)?;
        ok &= split.train.len() == 27000 && split.test.len() == 3000;
        parts.push(format!("split {}/{}", split.train.len(), split.test.len()));
        Ok((ok, parts.join("; ")))
    };
    match run() {
        Ok((ok, detail)) => Line { name, outcome: verdict(ok), detail, hard: false },
        Err(e) => Line { name, outcome: Outcome::Fail, detail: e.to_string(), hard: false },
    }
}

// ---------------------------------------------------------------- parity

async fn call(app: &axum::Router, method: &str, uri: &str, body: Value) -> Value {
    let req = Request::builder().method(method).uri(uri).header("content-type", "application/json").body(Body::from(body.to_string())).unwrap();
    let bytes = app.clone().oneshot(req).await.unwrap().into_body().collect().await.unwrap().to_bytes();
    serde_json::from_slice(&bytes).unwrap_or(Value::Null)
}

fn cli_parity(rt: &tokio::runtime::Runtime) -> Line {
    let name = "CLI/service parity (two-edit replay, 16 concurrent = serial)";
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config();
    let ckpt = dir.path().join("m.hisd");
    Checkpoint::from_bundle(&bundle(&cfg, 21), 0).write(&ckpt).unwrap();
    let input = dir.path().join("in.png");
    let png = imageio::encode_png(&imageio::tensor_to_image(&images(1, 16, 1)).unwrap()).unwrap();
    std::fs::write(&input, &png).unwrap();
    let inputs: Vec<String> = (0..4).map(|k| B64.encode(imageio::encode_png(&imageio::tensor_to_image(&images(1, 16, 100 + k)).unwrap()).unwrap())).collect();

    let app = router(AppState::new(Some(InferenceModel::load(&ckpt).unwrap()), Duration::from_secs(60)));
    let (served, edits, serial, concurrent) = rt.block_on(async {
        let s = call(&app, "POST", "/session", json!({ "image": B64.encode(&png) })).await;
        let id = s["session_id"].as_str().unwrap().to_string();
        call(&app, "POST", &format!("/session/{id}/apply"), json!({ "tag": "Hat", "attr": "with", "seed": 7 })).await;
        call(&app, "POST", &format!("/session/{id}/apply"), json!({ "tag": "Frame", "attr": "blue", "seed": 3 })).await;
        let info = call(&app, "GET", &format!("/session/{id}"), Value::Null).await;
        let served = imageio::decode_png(&B64.decode(info["preview"].as_str().unwrap()).unwrap()).unwrap().into_raw();

        let work = |k: usize| {
            let (app, image) = (app.clone(), inputs[k % 4].clone());
            async move {
                let s = call(&app, "POST", "/session", json!({ "image": image })).await;
                let id = s["session_id"].as_str().unwrap().to_string();
                let (tag, attr) = if k % 2 == 0 { ("Hat", "without") } else { ("Frame", "green") };
                call(&app, "POST", &format!("/session/{id}/apply"), json!({ "tag": tag, "attr": attr, "seed": k })).await["preview"].clone()
            }
        };
        let mut serial = Vec::new();
        for k in 0..16 {
            serial.push(work(k).await);
        }
        let handles: Vec<_> = (0..16).map(|k| tokio::spawn(work(k))).collect();
        let mut concurrent = Vec::new();
        for h in handles {
            concurrent.push(h.await.unwrap());
        }
        (served, info["edits"].clone(), serial, concurrent)
    });

    // Replay the session's edit list through the binary.
    let out = dir.path().join("out.png");
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_hisd"));
    cmd.args(["translate", "--ckpt"]).arg(&ckpt).arg("--input").arg(&input).arg("--out").arg(&out);
    for e in edits.as_array().unwrap() {
        cmd.arg("--edit").arg(format!("tag={},attr={},seed={}", e["tag"].as_str().unwrap(), e["attribute"].as_str().unwrap(), e["seed"]));
    }
    let status = cmd.status().unwrap();
    let replayed = status.success().then(|| imageio::read_image(&out).unwrap().into_raw());
    let same = replayed.as_deref() == Some(served.as_slice());
    let parallel = serial == concurrent && serial.iter().all(Value::is_string);
    Line {
        name,
        outcome: verdict(same && parallel),
        detail: format!("replay bitwise equal: {same}; concurrent equal serial: {parallel}"),
        hard: true,
    }
}

// ---------------------------------------------------------------- driver

#[test]
fn acceptance() {
    tch::set_num_threads(1);
    let rt = tokio::runtime::Builder::new_multi_thread().worker_threads(4).enable_all().build().unwrap();
    let lines = vec![
        paper_context(),
        property_suite(),
        desk_threshold("desk (a) latent accuracy ≥0.90", "accuracy_latent", "every tag ≥0.90", |v| v >= 0.90),
        desk_threshold("desk (b) outside-region change ≤0.08", "outside_change", "every tag ≤0.08", |v| v <= 0.08),
        desk_threshold("desk (c) cycle L1 ≤0.05", "cycle_l1", "every tag ≤0.05", |v| v <= 0.05),
        desk_threshold("desk (d) condition preservation ≥0.90", "condition_preservation", "every tag ≥0.90", |v| v >= 0.90),
        desk_threshold("desk (e) latent/reference gap ≤0.05", "gap", "every tag ≤0.05", |v| v <= 0.05),
        style_separator(),
        ablation_direction("ablation w/o Con lowers condition preservation", "con", "condition_preservation", true),
        ablation_direction("ablation w/o Cyc lowers reference accuracy", "cyc", "accuracy_reference", true),
        ablation_direction("ablation w/o Att raises outside change", "att", "outside_change", false),
        celeba_ingestion(),
        cli_parity(&rt),
    ];
    println!();
    for l in &lines {
        l.print();
    }
    let strict = std::env::var("HISD_ACCEPT_STRICT").is_ok_and(|v| v == "1");
    let failed: Vec<&str> = lines.iter().filter(|l| l.outcome == Outcome::Fail && (l.hard || strict)).map(|l| l.name).collect();
    assert!(failed.is_empty(), "failed: {failed:?}");
}
