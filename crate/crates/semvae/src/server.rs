//! HTTP/JSON service backing the interactive editor.
//!
//! Uploaded masks live in per-session stores keyed by the `x-session-id`
//! header (requests without it share the `default` session). Mask ids are
//! only visible inside the session that created them.

use std::collections::HashMap;
use std::path::Path as FsPath;
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use semvae_core::latent::{embed, interpolation_sweep, ClassRef, EditPlan};
use semvae_core::mask::render_color;
use semvae_core::{ClassEmbeddings, LabelMap};

use crate::checkpoint::{self, Checkpoint};
use crate::edit::run_edit_codes;
use crate::error::CliError;
use crate::io::{decode_gray8, encode_label_png, encode_rgb_png};

pub const CHECKPOINT_ENV: &str = "SEMVAE_CHECKPOINT";
pub const SESSION_HEADER: &str = "x-session-id";
const PREVIEW_MAX: usize = 128;
const MAX_SWEEP_STEPS: usize = 64;

struct StoredMask {
    labels: LabelMap,
    codes: Option<Arc<ClassEmbeddings<f32>>>,
}

#[derive(Default)]
struct Session {
    masks: HashMap<String, StoredMask>,
}

pub struct AppState {
    model: Option<Arc<Checkpoint>>,
    load_error: Option<String>,
    sessions: Mutex<HashMap<String, Session>>,
}

impl AppState {
    pub fn new(model: Option<Checkpoint>) -> Self {
        Self { model: model.map(Arc::new), load_error: None, sessions: Mutex::new(HashMap::new()) }
    }

    /// Loads the checkpoint named by `SEMVAE_CHECKPOINT`; a missing or broken
    /// checkpoint leaves the service up but answering 503.
    pub fn from_env() -> Self {
        match std::env::var_os(CHECKPOINT_ENV) {
            Some(p) => Self::from_path(FsPath::new(&p)),
            None => Self { load_error: Some(format!("{CHECKPOINT_ENV} is not set")), ..Self::new(None) },
        }
    }

    pub fn from_path(path: &FsPath) -> Self {
        match checkpoint::load(path) {
            Ok(ck) => Self::new(Some(ck)),
            Err(e) => Self { load_error: Some(e.to_string()), ..Self::new(None) },
        }
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self { status, code, message: message.into() }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }

    fn invalid_plan(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "invalid_plan", message)
    }

    fn unknown_mask(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "unknown_mask", format!("no mask `{id}` in this session"))
    }

    fn mismatch(message: impl Into<String>) -> Self {
        Self::new(StatusCode::CONFLICT, "config_mismatch", message)
    }

    fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "code": self.code, "message": self.message }))).into_response()
    }
}

impl From<CliError> for ApiError {
    fn from(e: CliError) -> Self {
        use semvae_core::Error as E;
        match e {
            CliError::Core(E::EditPlan(_) | E::UnknownClass(_)) => Self::invalid_plan(e.to_string()),
            CliError::Core(E::Shape(_) | E::Palette(_) | E::Config(_) | E::Checkpoint(_)) => {
                Self::mismatch(e.to_string())
            }
            CliError::Core(E::LabelOutOfRange { .. }) => Self::mismatch(e.to_string()),
            CliError::Format(_) | CliError::Usage(_) => Self::bad_request(e.to_string()),
            _ => Self::internal(e.to_string()),
        }
    }
}

impl From<semvae_core::Error> for ApiError {
    fn from(e: semvae_core::Error) -> Self {
        CliError::Core(e).into()
    }
}

type ApiResult<T> = Result<T, ApiError>;

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/classes", get(classes))
        .route("/masks", post(upload))
        .route("/masks/{id}/encode", post(encode))
        .route("/masks/{id}/edit", post(edit))
        .route("/interpolate", post(interpolate))
        .with_state(state)
}

fn model(state: &AppState) -> ApiResult<Arc<Checkpoint>> {
    state.model.clone().ok_or_else(|| {
        ApiError::new(
            StatusCode::SERVICE_UNAVAILABLE,
            "model_not_loaded",
            state.load_error.clone().unwrap_or_else(|| "no model loaded".into()),
        )
    })
}

fn session_id(headers: &HeaderMap) -> ApiResult<String> {
    match headers.get(SESSION_HEADER) {
        None => Ok("default".into()),
        Some(v) => {
            let s = v.to_str().map_err(|_| ApiError::bad_request("session id must be ASCII"))?;
            if s.is_empty() || s.len() > 128 {
                return Err(ApiError::bad_request("session id must be 1 to 128 characters"));
            }
            Ok(s.to_string())
        }
    }
}

fn b64_png(bytes: Vec<u8>) -> String {
    B64.encode(bytes)
}

fn preview(ck: &Checkpoint, labels: &LabelMap) -> ApiResult<String> {
    let side = labels.height().max(labels.width());
    let small = if side > PREVIEW_MAX {
        let f = side.div_ceil(PREVIEW_MAX);
        labels.resize_nearest(labels.height() / f, labels.width() / f)?
    } else {
        labels.clone()
    };
    Ok(b64_png(encode_rgb_png(&render_color(&small, &ck.meta.palette)?)?))
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError::internal(e.to_string()))?
}

async fn healthz(State(state): State<Arc<AppState>>) -> Json<Value> {
    Json(json!({
        "status": "ok",
        "model_loaded": state.model.is_some(),
        "checkpoint": state.model.as_ref().map(|m| m.dir.display().to_string()),
    }))
}

async fn classes(State(state): State<Arc<AppState>>) -> ApiResult<Json<Value>> {
    let ck = model(&state)?;
    let entries: Vec<Value> = ck
        .meta
        .palette
        .entries()
        .iter()
        .map(|e| json!({"index": e.index, "name": e.name, "color": format!("#{:02X}{:02X}{:02X}", e.color[0], e.color[1], e.color[2])}))
        .collect();
    Ok(Json(json!({ "classes": entries, "mask_size": ck.meta.model.mask_size })))
}

async fn upload(State(state): State<Arc<AppState>>, headers: HeaderMap, body: Bytes) -> ApiResult<Json<Value>> {
    let ck = model(&state)?;
    let session = session_id(&headers)?;
    let (w, h, data) = decode_gray8(&body).map_err(|e| ApiError::bad_request(e.to_string()))?;
    let size = ck.meta.model.mask_size;
    if w != size || h != size {
        return Err(ApiError::mismatch(format!("mask is {w}x{h}, model expects {size}x{size}")));
    }
    let labels = LabelMap::new(h, w, ck.meta.palette.len(), data)?;
    let prev = preview(&ck, &labels)?;
    let id = uuid::Uuid::new_v4().simple().to_string();
    let mut sessions = state.sessions.lock().map_err(|_| ApiError::internal("session store poisoned"))?;
    sessions.entry(session).or_default().masks.insert(id.clone(), StoredMask { labels, codes: None });
    Ok(Json(json!({ "mask_id": id, "width": w, "height": h, "preview": prev })))
}

fn stored_labels(state: &AppState, session: &str, id: &str) -> ApiResult<(LabelMap, Option<Arc<ClassEmbeddings<f32>>>)> {
    let sessions = state.sessions.lock().map_err(|_| ApiError::internal("session store poisoned"))?;
    let m = sessions.get(session).and_then(|s| s.masks.get(id)).ok_or_else(|| ApiError::unknown_mask(id))?;
    Ok((m.labels.clone(), m.codes.clone()))
}

/// Codes of a stored mask, computed once per mask and cached.
fn codes_for(state: &AppState, ck: &Checkpoint, session: &str, id: &str) -> ApiResult<Arc<ClassEmbeddings<f32>>> {
    let (labels, cached) = stored_labels(state, session, id)?;
    if let Some(c) = cached {
        return Ok(c);
    }
    let codes = Arc::new(embed(&ck.model, &labels)?);
    let mut sessions = state.sessions.lock().map_err(|_| ApiError::internal("session store poisoned"))?;
    if let Some(m) = sessions.get_mut(session).and_then(|s| s.masks.get_mut(id)) {
        m.codes = Some(codes.clone());
    }
    Ok(codes)
}

async fn encode(State(state): State<Arc<AppState>>, headers: HeaderMap, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let ck = model(&state)?;
    let session = session_id(&headers)?;
    let st = state.clone();
    let codes = blocking(move || codes_for(&st, &ck, &session, &id).map(|c| (id, c))).await?;
    let (id, codes) = codes;
    Ok(Json(json!({
        "mask_id": id,
        "latent": id,
        "class_count": codes.class_count,
        "dim": codes.dim,
    })))
}

async fn edit(
    State(state): State<Arc<AppState>>,
    headers: HeaderMap,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Json<Value>> {
    let ck = model(&state)?;
    let session = session_id(&headers)?;
    let plan: EditPlan = serde_json::from_slice(&body).map_err(|e| ApiError::invalid_plan(e.to_string()))?;
    plan.resolve(&ck.meta.palette).map_err(|e| ApiError::invalid_plan(e.to_string()))?;
    let st = state.clone();
    blocking(move || {
        let codes = codes_for(&st, &ck, &session, &id)?;
        let mut target = |t: Option<&str>| -> crate::error::Result<LabelMap> {
            let t = t.ok_or_else(|| CliError::Core(semvae_core::Error::EditPlan("interpolate needs a target mask id".into())))?;
            stored_labels(&st, &session, t)
                .map(|(l, _)| l)
                .map_err(|e| CliError::Core(semvae_core::Error::EditPlan(e.message)))
        };
        let outcome = run_edit_codes(&ck.model, &ck.meta.palette, &codes, &plan, &mut target)?;
        let changed: serde_json::Map<String, Value> = ck
            .meta
            .palette
            .names()
            .iter()
            .zip(&outcome.changed_pixels)
            .map(|(n, c)| (n.to_string(), json!(c)))
            .collect();
        Ok(Json(json!({
            "mask_id": id,
            "mask_png": b64_png(encode_label_png(&outcome.edited)?),
            "preview": preview(&ck, &outcome.edited)?,
            "changed_pixels": changed,
        })))
    })
    .await
}

#[derive(Debug, Deserialize, Serialize)]
pub struct InterpolateRequest {
    pub source_id: String,
    pub target_id: String,
    pub class: ClassRef,
    pub alpha: Option<f64>,
    pub steps: Option<usize>,
}

async fn interpolate(State(state): State<Arc<AppState>>, headers: HeaderMap, body: Bytes) -> ApiResult<Json<Value>> {
    let ck = model(&state)?;
    let session = session_id(&headers)?;
    let req: InterpolateRequest = serde_json::from_slice(&body).map_err(|e| ApiError::bad_request(e.to_string()))?;
    let class = req.class.resolve(&ck.meta.palette).map_err(|e| ApiError::invalid_plan(e.to_string()))?;
    let alphas: Vec<f64> = match (req.alpha, req.steps) {
        (Some(a), None) if (0.0..=1.0).contains(&a) => vec![a],
        (Some(a), None) => return Err(ApiError::invalid_plan(format!("alpha must be in [0, 1], got {a}"))),
        (None, Some(n)) if (2..=MAX_SWEEP_STEPS).contains(&n) => (0..n).map(|i| i as f64 / (n - 1) as f64).collect(),
        (None, Some(n)) => return Err(ApiError::invalid_plan(format!("steps must be in 2..={MAX_SWEEP_STEPS}, got {n}"))),
        _ => return Err(ApiError::invalid_plan("give exactly one of alpha or steps")),
    };
    let st = state.clone();
    blocking(move || {
        let src = codes_for(&st, &ck, &session, &req.source_id)?;
        let tgt = codes_for(&st, &ck, &session, &req.target_id)?;
        let masks = if alphas.len() == 1 {
            let codes = semvae_core::latent::interpolate_part(&src, &tgt, class, alphas[0])?;
            vec![ck.model.synthesize(&codes)?.to_labels()]
        } else {
            interpolation_sweep(&ck.model, &src, &tgt, class, alphas.len())?
        };
        let pngs = masks.iter().map(|m| encode_label_png(m).map(b64_png)).collect::<Result<Vec<_>, _>>()?;
        Ok(Json(json!({ "alphas": alphas, "masks": pngs })))
    })
    .await
}

/// Binds `addr` and serves until interrupted.
pub async fn serve(state: AppState, addr: &str) -> crate::error::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await.map_err(|e| CliError::Runtime(format!("bind {addr}: {e}")))?;
    eprintln!("listening on http://{}", listener.local_addr().map(|a| a.to_string()).unwrap_or_else(|_| addr.into()));
    axum::serve(listener, router(Arc::new(state)))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| CliError::Runtime(e.to_string()))
}

impl AppState {
    pub fn has_model(&self) -> bool {
        self.model.is_some()
    }
}
