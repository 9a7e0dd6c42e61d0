mod common;

use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use common::{bundle, images, schema, tiny_config};
use hisd::imageio;
use hisd::inference::{EditPlan, EditSpec, InferenceModel};
use hisd::service::{router, AppState};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

fn model() -> InferenceModel {
    let cfg = tiny_config();
    InferenceModel::from_params(&schema(), &cfg, &bundle(&cfg, 21).ema_params).unwrap()
}

fn png_b64(seed: i64) -> String {
    let img = imageio::tensor_to_image(&images(1, 16, seed)).unwrap();
    B64.encode(imageio::encode_png(&img).unwrap())
}

fn decode(b64: &str) -> Vec<u8> {
    imageio::decode_png(&B64.decode(b64).unwrap()).unwrap().into_raw()
}

async fn call(app: &axum::Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri).header("content-type", "application/json");
    let req = req.body(body.map_or_else(Body::empty, |b| Body::from(b.to_string()))).unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

/// What the CLI writes for the same input and edits.
fn cli_output(m: &InferenceModel, image_b64: &str, edits: &[&str]) -> Vec<u8> {
    let x = imageio::image_to_tensor(&imageio::decode_png(&B64.decode(image_b64).unwrap()).unwrap());
    let y = if edits.is_empty() {
        m.reconstruct(&x).unwrap()
    } else {
        let steps = edits.iter().map(|e| EditSpec::parse(e).unwrap().resolve(&m.schema, |_| unreachable!()).unwrap()).collect();
        m.apply_plan(&x, &EditPlan::new(steps).unwrap()).unwrap()
    };
    imageio::tensor_to_image(&y).unwrap().into_raw()
}

#[tokio::test]
async fn schema_needs_a_model() {
    let app = router(AppState::new(None, Duration::from_secs(60)));
    let (status, body) = call(&app, "GET", "/schema", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["code"], "no_model");
    let app = router(AppState::new(Some(model()), Duration::from_secs(60)));
    let (status, body) = call(&app, "GET", "/schema", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["tags"].as_array().unwrap().len(), 2);
    assert_eq!(body["tags"][1]["attributes"], json!(["red", "green", "blue"]));
    assert_eq!(body["fingerprint"], schema().fingerprint());
    assert_eq!(body["style_dim"], 6);
}

#[tokio::test]
async fn session_edits_match_the_cli() {
    let m = model();
    let app = router(AppState::new(Some(model()), Duration::from_secs(60)));
    let img = png_b64(1);
    let (status, s) = call(&app, "POST", "/session", Some(json!({ "image": img }))).await;
    assert_eq!(status, StatusCode::OK);
    let id = s["session_id"].as_str().unwrap().to_string();
    let recon = decode(s["preview"].as_str().unwrap());
    assert_eq!(recon, cli_output(&m, &img, &[]));
    assert_eq!(recon.len(), 16 * 16 * 3);

    let apply = format!("/session/{id}/apply");
    let (status, a) = call(&app, "POST", &apply, Some(json!({ "tag": "Hat", "attr": "with", "seed": 7 }))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(a["edit_index"], 0);
    let one = decode(a["preview"].as_str().unwrap());
    let (_, b) = call(&app, "POST", &apply, Some(json!({ "tag": "Frame", "attr": "blue", "mode": "latent", "seed": 3 }))).await;
    assert_eq!(b["edit_index"], 1);
    let two = decode(b["preview"].as_str().unwrap());
    assert_eq!(two, cli_output(&m, &img, &["tag=Hat,attr=with,seed=7", "tag=Frame,attr=blue,seed=3"]));

    let (status, e) = call(&app, "POST", &apply, Some(json!({ "tag": "Hat", "attr": "without", "seed": 1 }))).await;
    assert_eq!((status, e["code"].as_str()), (StatusCode::CONFLICT, Some("duplicate_tag")));
    let (status, e) = call(&app, "POST", &apply, Some(json!({ "tag": "Beard", "attr": "with", "seed": 1 }))).await;
    assert_eq!((status, e["code"].as_str()), (StatusCode::BAD_REQUEST, Some("unknown_tag")));

    let (_, info) = call(&app, "GET", &format!("/session/{id}"), None).await;
    assert_eq!(info["edits"].as_array().unwrap().len(), 2);
    assert_eq!(decode(info["preview"].as_str().unwrap()), two);

    let rebase = format!("/session/{id}/rebase");
    let (status, r) = call(&app, "POST", &rebase, Some(json!({ "edits": [{ "tag": "Hat", "attr": "with", "seed": 7 }] }))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(decode(r["preview"].as_str().unwrap()), one);
    let (_, r) = call(&app, "POST", &rebase, Some(json!({ "edits": [] }))).await;
    assert_eq!((decode(r["preview"].as_str().unwrap()), r["edit_index"].as_i64()), (recon, Some(-1)));
    let dup = json!({ "edits": [{ "tag": "Hat", "attr": "with", "seed": 7 }, { "tag": "Hat", "attr": "with", "seed": 8 }] });
    assert_eq!(call(&app, "POST", &rebase, Some(dup)).await.0, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn sessions_are_independent_and_bad_images_are_refused() {
    let app = router(AppState::new(Some(model()), Duration::from_secs(60)));
    let img = png_b64(2);
    let (_, a) = call(&app, "POST", "/session", Some(json!({ "image": img }))).await;
    let (_, b) = call(&app, "POST", "/session", Some(json!({ "image": img }))).await;
    assert_ne!(a["session_id"], b["session_id"]);
    let ida = a["session_id"].as_str().unwrap();
    call(&app, "POST", &format!("/session/{ida}/apply"), Some(json!({ "tag": "Hat", "attr": "with", "seed": 7 }))).await;
    let (_, binfo) = call(&app, "GET", &format!("/session/{}", b["session_id"].as_str().unwrap()), None).await;
    assert_eq!(binfo["edits"], json!([]));
    assert_eq!(binfo["preview"], b["preview"]);

    let (status, e) = call(&app, "POST", "/session", Some(json!({ "image": "!!" }))).await;
    assert_eq!((status, e["code"].as_str()), (StatusCode::BAD_REQUEST, Some("bad_image")));
    let big = B64.encode(imageio::encode_png(&imageio::tensor_to_image(&images(1, 32, 1)).unwrap()).unwrap());
    let (status, e) = call(&app, "POST", "/session", Some(json!({ "image": big }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(e["message"].as_str().unwrap().contains("model expects"));
    assert_eq!(call(&app, "GET", "/session/nope", None).await.0, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn idle_sessions_expire_with_410() {
    let app = router(AppState::new(Some(model()), Duration::from_millis(50)));
    let (_, s) = call(&app, "POST", "/session", Some(json!({ "image": png_b64(3) }))).await;
    let uri = format!("/session/{}", s["session_id"].as_str().unwrap());
    assert_eq!(call(&app, "GET", &uri, None).await.0, StatusCode::OK);
    tokio::time::sleep(Duration::from_millis(120)).await;
    let (status, e) = call(&app, "GET", &uri, None).await;
    assert_eq!((status, e["code"].as_str()), (StatusCode::GONE, Some("session_expired")));
}

#[tokio::test]
async fn extract_and_interpolate() {
    let m = model();
    let app = router(AppState::new(Some(model()), Duration::from_secs(60)));
    let (ia, ib) = (png_b64(4), png_b64(5));
    let (status, a) = call(&app, "POST", "/extract", Some(json!({ "image": ia, "tag": "Frame" }))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(a["vector"].as_array().unwrap().len(), 6);
    let x = imageio::image_to_tensor(&imageio::decode_png(&B64.decode(&ia).unwrap()).unwrap());
    let expected = m.style_file(&m.extract(&x, 1).unwrap()).unwrap();
    assert_eq!(serde_json::from_value::<hisd::inference::StyleFile>(a.clone()).unwrap(), expected);
    assert_eq!(call(&app, "POST", "/extract", Some(json!({ "image": ia, "tag": "Beard" }))).await.0, StatusCode::BAD_REQUEST);

    let (_, b) = call(&app, "POST", "/extract", Some(json!({ "image": ib, "tag": "Frame" }))).await;
    let (status, t0) = call(&app, "POST", "/interpolate", Some(json!({ "style_a": a, "style_b": b, "t": 0.0 }))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(t0, a);
    let (_, hat) = call(&app, "POST", "/extract", Some(json!({ "image": ib, "tag": "Hat" }))).await;
    assert_eq!(call(&app, "POST", "/interpolate", Some(json!({ "style_a": a, "style_b": hat, "t": 0.5 }))).await.0, StatusCode::BAD_REQUEST);

    // An extracted style applied explicitly.
    let (_, s) = call(&app, "POST", "/session", Some(json!({ "image": ib }))).await;
    let uri = format!("/session/{}/apply", s["session_id"].as_str().unwrap());
    let (status, _) = call(&app, "POST", &uri, Some(json!({ "tag": "Frame", "mode": "explicit", "style": a["vector"] }))).await;
    assert_eq!(status, StatusCode::OK);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_requests_equal_serial_ones() {
    tch::set_num_threads(1);
    let app = router(AppState::new(Some(model()), Duration::from_secs(60)));
    // Inputs are made up front: the torch rng is global.
    let inputs: Vec<String> = (0..4).map(|k| png_b64(100 + k)).collect();
    let work = |k: i64| {
        let app = app.clone();
        let image = inputs[(k % 4) as usize].clone();
        async move {
            let (_, s) = call(&app, "POST", "/session", Some(json!({ "image": image }))).await;
            let id = s["session_id"].as_str().unwrap().to_string();
            let tag = if k % 2 == 0 { "Hat" } else { "Frame" };
            let attr = if k % 2 == 0 { "without" } else { "green" };
            let (_, r) = call(&app, "POST", &format!("/session/{id}/apply"), Some(json!({ "tag": tag, "attr": attr, "seed": k }))).await;
            r["preview"].as_str().unwrap().to_string()
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
    assert_eq!(serial, concurrent);
}
