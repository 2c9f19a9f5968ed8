//! HTTP JSON API for interactive annotation.
//!
//! * `POST /api/segment` with `{"image_id"|"image", "points"}` returns an RLE
//!   mask and opens a session.
//! * `POST /api/refine` with `{"session_id", "point"}` re-predicts with a
//!   corrective click.
//! * `GET /api/images`, `GET /api/images/{id}`, `GET /api/health`.

use std::collections::{HashMap, HashSet};
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path as UrlPath, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tower_http::cors::{Any, CorsLayer};

use crate::error::{Error, Result};
use crate::geometry::{ExtremePointSet, Point};
use crate::harness::dataset::{image_path, list_ids, load_sample};
use crate::objective::iou;
use crate::raster::{rle_encode, Raster, RleMask};
use crate::trainer::{ModelBundle, Prediction};

/// Largest accepted inline image, in base64 characters.
pub const MAX_INLINE_IMAGE: usize = 4 * 1024 * 1024;
pub const DEFAULT_SESSION_TTL: Duration = Duration::from_secs(15 * 60);
const BODY_LIMIT: usize = 8 * 1024 * 1024;
const MAX_TOMBSTONES: usize = 10_000;

#[derive(Clone, Debug)]
pub struct ServiceConfig {
    pub data_root: Option<PathBuf>,
    pub session_ttl: Duration,
    /// Report IoU against the dataset mask in responses.
    pub dev: bool,
    /// Allowed CORS origin; any origin when unset.
    pub cors_origin: Option<String>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            data_root: None,
            session_ttl: DEFAULT_SESSION_TTL,
            dev: false,
            cors_origin: None,
        }
    }
}

struct Session {
    image: Arc<Raster>,
    image_id: Option<String>,
    points: ExtremePointSet,
    created: Instant,
    last_used: Instant,
}

#[derive(Default)]
struct Sessions {
    live: HashMap<String, Session>,
    expired: HashSet<String>,
}

impl Sessions {
    fn sweep(&mut self, ttl: Duration) {
        let now = Instant::now();
        let dead: Vec<String> = self
            .live
            .iter()
            .filter(|(_, s)| now.duration_since(s.last_used) > ttl)
            .map(|(k, _)| k.clone())
            .collect();
        if self.expired.len() + dead.len() > MAX_TOMBSTONES {
            self.expired.clear();
        }
        for k in dead {
            self.live.remove(&k);
            self.expired.insert(k);
        }
    }
}

pub struct AppState {
    model: Option<Arc<ModelBundle>>,
    fingerprint: Option<String>,
    config: ServiceConfig,
    sessions: Mutex<Sessions>,
}

impl AppState {
    pub fn new(model: Option<ModelBundle>, config: ServiceConfig) -> Result<Self> {
        let fingerprint = model.as_ref().map(|m| m.fingerprint()).transpose()?;
        Ok(AppState {
            model: model.map(Arc::new),
            fingerprint,
            config,
            sessions: Mutex::new(Sessions::default()),
        })
    }

    fn sessions(&self) -> std::sync::MutexGuard<'_, Sessions> {
        self.sessions.lock().unwrap_or_else(|p| p.into_inner())
    }
}

/// An error response: status plus `{"error", "field"?}`.
#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
    field: Option<String>,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError {
            status,
            message: message.into(),
            field: None,
        }
    }

    fn field(mut self, f: impl Into<String>) -> Self {
        self.field = Some(f.into());
        self
    }

    fn bad(field: &str, message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, message).field(field)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({ "error": self.message });
        if let Some(f) = self.field {
            body["field"] = json!(f);
        }
        (self.status, Json(body)).into_response()
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::Invalid(_) | Error::Parse { .. } | Error::Shape(_) | Error::Type(_) => {
                StatusCode::BAD_REQUEST
            }
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError::new(status, e.to_string())
    }
}

type ApiResult<T> = std::result::Result<T, ApiError>;

fn parse_body<T: for<'de> Deserialize<'de>>(body: &[u8]) -> ApiResult<T> {
    let de = &mut serde_json::Deserializer::from_slice(body);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let field = if path == "." { String::new() } else { path };
        ApiError::new(StatusCode::BAD_REQUEST, e.inner().to_string()).field(field)
    })
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SegmentRequest {
    #[serde(default)]
    image_id: Option<String>,
    /// Base64-encoded binary PPM/PGM.
    #[serde(default)]
    image: Option<String>,
    points: ExtremePointSet,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RefineRequest {
    session_id: String,
    point: Point,
}

#[derive(Serialize)]
struct SegmentResponse {
    session_id: String,
    width: usize,
    height: usize,
    mask: RleMask,
    #[serde(skip_serializing_if = "Option::is_none")]
    iou: Option<f64>,
    inference_ms: f64,
}

fn check_points(points: &ExtremePointSet, image: &Raster) -> ApiResult<()> {
    if let Some((role, p)) = points.out_of_frame(image.width(), image.height()) {
        return Err(ApiError::bad(
            &format!("points.{}", role),
            format!(
                "point ({}, {}) is outside the {}x{} image",
                p.x,
                p.y,
                image.width(),
                image.height()
            ),
        ));
    }
    if !points.is_ordered() {
        return Err(ApiError::bad(
            "points",
            "left must not be right of right and top must not be below bottom",
        ));
    }
    Ok(())
}

fn model(state: &AppState) -> ApiResult<Arc<ModelBundle>> {
    state
        .model
        .clone()
        .ok_or_else(|| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "no model loaded"))
}

fn valid_id(id: &str) -> bool {
    !id.is_empty()
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

fn load_image(state: &AppState, id: &str) -> ApiResult<Raster> {
    let root = state
        .config
        .data_root
        .as_ref()
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "no dataset configured"))?;
    let path = image_path(root, id);
    if !valid_id(id) || !path.is_file() {
        return Err(
            ApiError::new(StatusCode::NOT_FOUND, format!("unknown image '{}'", id))
                .field("image_id"),
        );
    }
    crate::raster::load_raster(path)
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))
}

async fn run_predict(
    bundle: Arc<ModelBundle>,
    image: Arc<Raster>,
    points: ExtremePointSet,
) -> ApiResult<(Prediction, f64)> {
    tokio::task::spawn_blocking(move || {
        let t = Instant::now();
        let p = bundle.predict(&image, &points)?;
        Ok::<_, Error>((p, t.elapsed().as_secs_f64() * 1e3))
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
    .map_err(ApiError::from)
}

fn dev_iou(state: &AppState, image_id: Option<&str>, pred: &Prediction) -> Option<f64> {
    if !state.config.dev {
        return None;
    }
    let root = state.config.data_root.as_ref()?;
    let sample = load_sample(root, image_id?).ok()?;
    iou(&pred.mask, &sample.mask).ok()
}

async fn segment(
    State(state): State<Arc<AppState>>,
    body: Bytes,
) -> ApiResult<Json<SegmentResponse>> {
    let req: SegmentRequest = parse_body(&body)?;
    let bundle = model(&state)?;
    let image = match (&req.image_id, &req.image) {
        (Some(_), Some(_)) => {
            return Err(ApiError::bad(
                "image",
                "give either image_id or image, not both",
            ))
        }
        (None, None) => return Err(ApiError::bad("image_id", "image_id or image is required")),
        (Some(id), None) => load_image(&state, id)?,
        (None, Some(b64)) => {
            if b64.len() > MAX_INLINE_IMAGE {
                return Err(ApiError::new(
                    StatusCode::PAYLOAD_TOO_LARGE,
                    format!("inline image exceeds {} bytes", MAX_INLINE_IMAGE),
                )
                .field("image"));
            }
            let bytes = base64::engine::general_purpose::STANDARD
                .decode(b64.trim())
                .map_err(|e| ApiError::bad("image", format!("invalid base64: {}", e)))?;
            Raster::from_pnm_bytes(&bytes).map_err(|e| ApiError::bad("image", e.to_string()))?
        }
    };
    check_points(&req.points, &image)?;
    if req.points.extra.is_some() && !bundle.pipeline.five_point {
        return Err(
            ApiError::new(StatusCode::CONFLICT, "model does not accept a fifth click")
                .field("points.extra"),
        );
    }
    let image = Arc::new(image);
    let (pred, ms) = run_predict(bundle, image.clone(), req.points).await?;
    let iou = dev_iou(&state, req.image_id.as_deref(), &pred);
    let mask = rle_encode(&pred.mask);
    let id = uuid::Uuid::new_v4().to_string();
    let now = Instant::now();
    {
        let mut sessions = state.sessions();
        sessions.sweep(state.config.session_ttl);
        sessions.live.insert(
            id.clone(),
            Session {
                image: image.clone(),
                image_id: req.image_id.clone(),
                points: req.points,
                created: now,
                last_used: now,
            },
        );
    }
    Ok(Json(SegmentResponse {
        session_id: id,
        width: image.width(),
        height: image.height(),
        mask,
        iou,
        inference_ms: ms,
    }))
}

async fn refine(
    State(state): State<Arc<AppState>>,
    body: Bytes,
) -> ApiResult<Json<SegmentResponse>> {
    let req: RefineRequest = parse_body(&body)?;
    let bundle = model(&state)?;
    let (image, image_id, mut points) = {
        let mut sessions = state.sessions();
        sessions.sweep(state.config.session_ttl);
        if sessions.expired.contains(&req.session_id) {
            return Err(ApiError::new(StatusCode::GONE, "session expired").field("session_id"));
        }
        let s = sessions.live.get_mut(&req.session_id).ok_or_else(|| {
            ApiError::new(StatusCode::NOT_FOUND, "unknown session").field("session_id")
        })?;
        s.last_used = Instant::now();
        (s.image.clone(), s.image_id.clone(), s.points)
    };
    if !bundle.pipeline.five_point {
        return Err(ApiError::new(
            StatusCode::CONFLICT,
            "model does not accept a fifth click",
        ));
    }
    if !req.point.in_frame(image.width(), image.height()) {
        return Err(ApiError::bad(
            "point",
            format!(
                "point ({}, {}) is outside the {}x{} image",
                req.point.x,
                req.point.y,
                image.width(),
                image.height()
            ),
        ));
    }
    points.extra = Some(req.point);
    let (pred, ms) = run_predict(bundle, image.clone(), points).await?;
    let iou = dev_iou(&state, image_id.as_deref(), &pred);
    let mask = rle_encode(&pred.mask);
    {
        let mut sessions = state.sessions();
        if let Some(s) = sessions.live.get_mut(&req.session_id) {
            s.points = points;
            s.last_used = Instant::now();
        }
    }
    Ok(Json(SegmentResponse {
        session_id: req.session_id,
        width: image.width(),
        height: image.height(),
        mask,
        iou,
        inference_ms: ms,
    }))
}

async fn images(State(state): State<Arc<AppState>>) -> ApiResult<Json<serde_json::Value>> {
    let ids = match &state.config.data_root {
        Some(root) => list_ids(root)
            .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?,
        None => Vec::new(),
    };
    Ok(Json(json!({ "count": ids.len(), "ids": ids })))
}

async fn image(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
) -> ApiResult<Response> {
    let root = state
        .config
        .data_root
        .as_ref()
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "no dataset configured"))?;
    let path = image_path(root, &id);
    if !valid_id(&id) || !path.is_file() {
        return Err(ApiError::new(
            StatusCode::NOT_FOUND,
            format!("unknown image '{}'", id),
        ));
    }
    let bytes = std::fs::read(path)
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    Ok(([(header::CONTENT_TYPE, "image/x-portable-pixmap")], bytes).into_response())
}

async fn health(State(state): State<Arc<AppState>>) -> Json<serde_json::Value> {
    let (live, oldest) = {
        let s = state.sessions();
        let oldest = s
            .live
            .values()
            .map(|v| v.created.elapsed().as_secs_f64())
            .fold(0.0, f64::max);
        (s.live.len(), oldest)
    };
    Json(json!({
        "status": "ok",
        "model_loaded": state.model.is_some(),
        "fingerprint": state.fingerprint,
        "config": state.model.as_ref().map(|m| json!({
            "segmenter": m.model.config(),
            "pipeline": m.pipeline,
        })),
        "five_point": state.model.as_ref().map(|m| m.pipeline.five_point),
        "sessions": live,
        "oldest_session_s": oldest,
    }))
}

pub fn router(state: Arc<AppState>) -> Router {
    let cors = match state
        .config
        .cors_origin
        .as_deref()
        .map(HeaderValue::from_str)
    {
        Some(Ok(origin)) => CorsLayer::new().allow_origin(origin),
        _ => CorsLayer::new().allow_origin(Any),
    }
    .allow_methods(Any)
    .allow_headers(Any);
    Router::new()
        .route("/api/segment", post(segment))
        .route("/api/refine", post(refine))
        .route("/api/images", get(images))
        .route("/api/images/{id}", get(image))
        .route("/api/health", get(health))
        .layer(DefaultBodyLimit::max(BODY_LIMIT))
        .layer(cors)
        .with_state(state)
}

/// Bind and serve until the process is stopped.
pub async fn serve(addr: SocketAddr, state: AppState) -> Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(Arc::new(state))).await?;
    Ok(())
}
