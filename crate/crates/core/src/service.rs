//! HTTP editing service.
//!
//! A session holds the uploaded image, its encoder feature after the edits
//! applied so far, and the edit list itself. Applying an edit runs one
//! translator and one decode on the cached feature; a rebase replays a new
//! edit list from the stored source. Every preview can therefore be
//! reproduced by running the session's edit list through `hisd translate`.

use std::collections::{HashMap, HashSet};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use axum::extract::{DefaultBodyLimit, Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tch::Tensor;

use crate::error::HisdError;
use crate::imageio;
use crate::inference::{interpolate, EditPlan, EditSpec, InferenceModel, StyleFile};

/// Request bodies above this are refused before decoding.
pub const MAX_BODY_BYTES: usize = 16 << 20;
pub const DEFAULT_TTL: Duration = Duration::from_secs(900);

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self { status, code, message: message.into() }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }
}

impl From<HisdError> for ApiError {
    fn from(e: HisdError) -> Self {
        match e {
            HisdError::Torch(_) | HisdError::Io(_) | HisdError::Checkpoint(_) => Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()),
            HisdError::Image(_) => Self::new(StatusCode::BAD_REQUEST, "bad_image", e.to_string()),
            _ => Self::bad_request(e.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "code": self.code, "message": self.message }))).into_response()
    }
}

type ApiResult<T> = std::result::Result<Json<T>, ApiError>;

struct Session {
    source: Tensor,
    feature: Tensor,
    edits: Vec<EditSpec>,
    last_used: Instant,
}

#[derive(Default)]
struct Registry {
    live: HashMap<String, Arc<tokio::sync::Mutex<Session>>>,
    expired: HashSet<String>,
}

/// Shared by all handlers. The model is read-only; sessions are locked
/// individually.
pub struct AppState {
    model: Option<Arc<InferenceModel>>,
    ttl: Duration,
    registry: Mutex<Registry>,
}

impl AppState {
    pub fn new(model: Option<InferenceModel>, ttl: Duration) -> Arc<Self> {
        Arc::new(Self { model: model.map(Arc::new), ttl, registry: Mutex::default() })
    }

    fn model(&self) -> Result<Arc<InferenceModel>, ApiError> {
        self.model.clone().ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "no_model", "no checkpoint is loaded"))
    }

    fn registry(&self) -> std::sync::MutexGuard<'_, Registry> {
        self.registry.lock().unwrap_or_else(|p| p.into_inner())
    }

    /// Moves idle sessions to the expired set. The session's own lock is
    /// not taken here; a session busy with a request counts as used.
    fn sweep(&self) {
        let now = Instant::now();
        let mut reg = self.registry();
        let stale: Vec<String> = reg
            .live
            .iter()
            .filter(|(_, s)| s.try_lock().is_ok_and(|s| now.duration_since(s.last_used) > self.ttl))
            .map(|(id, _)| id.clone())
            .collect();
        for id in stale {
            reg.live.remove(&id);
            reg.expired.insert(id);
        }
    }

    fn session(&self, id: &str) -> Result<Arc<tokio::sync::Mutex<Session>>, ApiError> {
        self.sweep();
        let reg = self.registry();
        if let Some(s) = reg.live.get(id) {
            return Ok(s.clone());
        }
        if reg.expired.contains(id) {
            return Err(ApiError::new(StatusCode::GONE, "session_expired", format!("session {id} expired")));
        }
        Err(ApiError::new(StatusCode::NOT_FOUND, "unknown_session", format!("no session {id}")))
    }

    pub fn session_count(&self) -> usize {
        self.registry().live.len()
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/schema", get(schema))
        .route("/session", post(create_session))
        .route("/session/{id}", get(session_info))
        .route("/session/{id}/apply", post(apply))
        .route("/session/{id}/rebase", post(rebase))
        .route("/extract", post(extract))
        .route("/interpolate", post(interpolate_styles))
        .layer(DefaultBodyLimit::max(MAX_BODY_BYTES))
        .with_state(state)
}

/// Binds `addr` and serves until the process ends. Torch runs single
/// threaded so that responses do not depend on how requests interleave.
pub async fn serve(model: InferenceModel, addr: std::net::SocketAddr, ttl: Duration) -> crate::Result<()> {
    tch::set_num_threads(1);
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(AppState::new(Some(model), ttl))).await?;
    Ok(())
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
}

pub fn decode_image(model: &InferenceModel, b64: &str) -> Result<Tensor, ApiError> {
    let bytes = B64.decode(b64.trim()).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "bad_image", format!("image is not base64: {e}")))?;
    let img = imageio::decode_png(&bytes).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "bad_image", format!("image is not a PNG: {e}")))?;
    model.check_image(&img).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "bad_image", e.to_string()))?;
    Ok(imageio::image_to_tensor(&img))
}

pub fn encode_preview(t: &Tensor) -> Result<String, ApiError> {
    Ok(B64.encode(imageio::encode_png(&imageio::tensor_to_image(t)?)?))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SchemaTag {
    pub name: String,
    pub attributes: Vec<String>,
    pub conditions: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SchemaResponse {
    pub fingerprint: String,
    pub tags: Vec<SchemaTag>,
    pub style_dim: i64,
    pub latent_dim: i64,
    pub image_size: u32,
}

async fn schema(State(st): State<Arc<AppState>>) -> ApiResult<SchemaResponse> {
    let m = st.model()?;
    Ok(Json(SchemaResponse {
        fingerprint: m.fingerprint.clone(),
        tags: m
            .schema
            .tags()
            .iter()
            .map(|t| SchemaTag { name: t.name.clone(), attributes: t.attributes.clone(), conditions: t.conditions.clone() })
            .collect(),
        style_dim: m.config.style_dim,
        latent_dim: m.config.latent_dim,
        image_size: m.image_size(),
    }))
}

#[derive(Debug, Deserialize)]
pub struct ImageRequest {
    pub image: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SessionResponse {
    pub session_id: String,
    pub preview: String,
    pub edits: Vec<EditSpec>,
}

async fn create_session(State(st): State<Arc<AppState>>, Json(req): Json<ImageRequest>) -> ApiResult<SessionResponse> {
    let m = st.model()?;
    let (source, feature, preview) = blocking(move || {
        let x = decode_image(&m, &req.image)?;
        let e = m.encode(&x)?;
        let preview = encode_preview(&m.decode(&e)?)?;
        Ok((x, e, preview))
    })
    .await?;
    let id = format!("{:032x}", rand::thread_rng().gen::<u128>());
    let session = Session { source, feature, edits: vec![], last_used: Instant::now() };
    st.sweep();
    st.registry().live.insert(id.clone(), Arc::new(tokio::sync::Mutex::new(session)));
    Ok(Json(SessionResponse { session_id: id, preview, edits: vec![] }))
}

async fn session_info(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<SessionResponse> {
    let m = st.model()?;
    let handle = st.session(&id)?;
    let mut s = handle.lock_owned().await;
    s.last_used = Instant::now();
    let (preview, s) = blocking(move || Ok((encode_preview(&m.decode(&s.feature)?)?, s))).await?;
    Ok(Json(SessionResponse { session_id: id, preview, edits: s.edits.clone() }))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EditResponse {
    pub preview: String,
    /// Position of the newest edit, or `-1` when the list is empty.
    pub edit_index: i64,
}

fn step_for(m: &InferenceModel, spec: &EditSpec) -> Result<crate::inference::EditStep, ApiError> {
    m.schema.tag_index(&spec.tag).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "unknown_tag", e.to_string()))?;
    let step = spec.resolve(&m.schema, |b64| {
        let bytes = B64.decode(b64.trim()).map_err(|e| HisdError::Contract(format!("reference is not base64: {e}")))?;
        let img = imageio::decode_png(&bytes)?;
        m.check_image(&img)?;
        Ok(img)
    })?;
    Ok(step)
}

async fn apply(State(st): State<Arc<AppState>>, Path(id): Path<String>, Json(spec): Json<EditSpec>) -> ApiResult<EditResponse> {
    let m = st.model()?;
    let handle = st.session(&id)?;
    let mut s = handle.lock_owned().await;
    s.last_used = Instant::now();
    let (resp, s) = blocking(move || {
        let step = step_for(&m, &spec)?;
        if s.edits.iter().any(|e| m.schema.tag_index(&e.tag).ok() == Some(step.tag)) {
            return Err(ApiError::new(
                StatusCode::CONFLICT,
                "duplicate_tag",
                format!("tag `{}` is already edited in this session; rebase to change it", spec.tag),
            ));
        }
        let feature = m.translate(&s.feature, &m.resolve_style(&step)?)?;
        let preview = encode_preview(&m.decode(&feature)?)?;
        s.feature = feature;
        s.edits.push(spec);
        let edit_index = s.edits.len() as i64 - 1;
        Ok((EditResponse { preview, edit_index }, s))
    })
    .await?;
    drop(s);
    Ok(Json(resp))
}

#[derive(Debug, Deserialize)]
pub struct RebaseRequest {
    pub edits: Vec<EditSpec>,
}

async fn rebase(State(st): State<Arc<AppState>>, Path(id): Path<String>, Json(req): Json<RebaseRequest>) -> ApiResult<EditResponse> {
    let m = st.model()?;
    let handle = st.session(&id)?;
    let mut s = handle.lock_owned().await;
    s.last_used = Instant::now();
    let (resp, s) = blocking(move || {
        let steps = req.edits.iter().map(|e| step_for(&m, e)).collect::<Result<Vec<_>, _>>()?;
        let mut e = m.encode(&s.source)?;
        if !steps.is_empty() {
            // Validates distinct tags.
            let plan = EditPlan::new(steps)?;
            for step in plan.steps() {
                e = m.translate(&e, &m.resolve_style(step)?)?;
            }
        }
        let preview = encode_preview(&m.decode(&e)?)?;
        s.feature = e;
        s.edits = req.edits;
        let edit_index = s.edits.len() as i64 - 1;
        Ok((EditResponse { preview, edit_index }, s))
    })
    .await?;
    drop(s);
    Ok(Json(resp))
}

#[derive(Debug, Deserialize)]
pub struct ExtractRequest {
    pub image: String,
    pub tag: String,
}

async fn extract(State(st): State<Arc<AppState>>, Json(req): Json<ExtractRequest>) -> ApiResult<StyleFile> {
    let m = st.model()?;
    let style = blocking(move || {
        let tag = m.schema.tag_index(&req.tag).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "unknown_tag", e.to_string()))?;
        let x = decode_image(&m, &req.image)?;
        Ok(m.style_file(&m.extract(&x, tag)?)?)
    })
    .await?;
    Ok(Json(style))
}

#[derive(Debug, Deserialize)]
pub struct InterpolateRequest {
    pub style_a: StyleFile,
    pub style_b: StyleFile,
    pub t: f64,
}

async fn interpolate_styles(State(st): State<Arc<AppState>>, Json(req): Json<InterpolateRequest>) -> ApiResult<StyleFile> {
    let m = st.model()?;
    let (a, b) = (m.style_from_file(&req.style_a)?, m.style_from_file(&req.style_b)?);
    Ok(Json(m.style_file(&interpolate(&a, &b, req.t)?)?))
}
