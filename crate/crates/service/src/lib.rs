//! HTTP facade over the segmentation pipeline.

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, State};
use axum::http::{HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine;
use geokonvex::error::Error;
use geokonvex::evolution::{evolve_into, EvolutionConfig, EvolutionTrace};
use geokonvex::io::{annotation_from_value, decode_image, ContourFile, RunStatus};
use geokonvex::metrics::ModelKind;
use geokonvex::raster::Image;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};
use tokio::sync::Semaphore;
use tower_http::cors::{AllowOrigin, CorsLayer};

pub const API_SCHEMA_VERSION: &str = "geokonvex.api/1";
pub const MAX_UPLOAD_BYTES: usize = 32 * 1024 * 1024;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub workers: usize,
    pub budget: Duration,
    pub session_ttl: Duration,
    /// Allowed browser origin; any origin when `None`.
    pub ui_origin: Option<String>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            workers: std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
            budget: Duration::from_secs(60),
            session_ttl: Duration::from_secs(3600),
            ui_origin: None,
        }
    }
}

struct Session {
    image: Arc<Image>,
    created: Instant,
}

#[derive(Clone)]
pub struct AppState {
    sessions: Arc<Mutex<HashMap<String, Session>>>,
    workers: Arc<Semaphore>,
    cfg: Arc<ServiceConfig>,
}

impl AppState {
    pub fn new(cfg: ServiceConfig) -> Self {
        AppState {
            sessions: Arc::default(),
            workers: Arc::new(Semaphore::new(cfg.workers.max(1))),
            cfg: Arc::new(cfg),
        }
    }

    fn store(&self, image: Image) -> String {
        let id = uuid::Uuid::new_v4().simple().to_string();
        let mut map = self.sessions.lock().expect("session lock");
        let ttl = self.cfg.session_ttl;
        map.retain(|_, s| s.created.elapsed() < ttl);
        map.insert(id.clone(), Session { image: Arc::new(image), created: Instant::now() });
        id
    }

    fn fetch(&self, id: &str) -> Option<Arc<Image>> {
        let map = self.sessions.lock().expect("session lock");
        map.get(id).filter(|s| s.created.elapsed() < self.cfg.session_ttl).map(|s| s.image.clone())
    }
}

pub fn router(state: AppState) -> Router {
    let cors = match &state.cfg.ui_origin {
        Some(o) => match HeaderValue::from_str(o) {
            Ok(v) => CorsLayer::new().allow_origin(AllowOrigin::exact(v)),
            Err(_) => CorsLayer::new(),
        },
        None => CorsLayer::new().allow_origin(AllowOrigin::any()),
    }
    .allow_methods([axum::http::Method::GET, axum::http::Method::POST])
    .allow_headers([axum::http::header::CONTENT_TYPE]);
    Router::new()
        .route("/api/v1/health", get(|| async { "ok" }))
        .route("/api/v1/models", get(models))
        .route("/api/v1/images", post(upload))
        .route("/api/v1/segment", post(segment))
        .layer(DefaultBodyLimit::max(MAX_UPLOAD_BYTES))
        .layer(cors)
        .with_state(state)
}

#[derive(Debug, Serialize)]
struct ErrorBody {
    code: String,
    message: String,
    issues: Vec<geokonvex::error::ValidationIssue>,
    #[serde(skip_serializing_if = "Option::is_none")]
    trace: Option<Vec<IterationSummary>>,
}

struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        ApiError { status, body: ErrorBody { code: code.into(), message: message.into(), issues: Vec::new(), trace: None } }
    }

    fn from_error(e: Error, trace: Option<Vec<IterationSummary>>) -> Self {
        let status = match &e {
            Error::Deadline => StatusCode::GATEWAY_TIMEOUT,
            Error::Image(_) => StatusCode::BAD_REQUEST,
            e if e.is_input_error() => StatusCode::UNPROCESSABLE_ENTITY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let issues = match &e {
            Error::Validation(list) => list.clone(),
            _ => Vec::new(),
        };
        ApiError { status, body: ErrorBody { code: e.code(), message: e.to_string(), issues, trace } }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(serde_json::json!({ "error": self.body }))).into_response()
    }
}

#[derive(Serialize)]
struct ModelEntry {
    name: String,
    family: String,
    convexity_constrained: bool,
}

async fn models() -> Json<serde_json::Value> {
    let defaults = EvolutionConfig::default();
    let models: Vec<ModelEntry> = ModelKind::all()
        .into_iter()
        .map(|m| ModelEntry {
            name: m.to_string(),
            family: m.family.short_name().to_string(),
            convexity_constrained: m.convexity_constrained,
        })
        .collect();
    Json(serde_json::json!({
        "schema_version": API_SCHEMA_VERSION,
        "models": models,
        "defaults": {
            "beta": defaults.params.beta,
            "ntheta": defaults.ntheta,
            "config": defaults,
        },
        "ranges": {
            "beta": { "exclusive_minimum": 0.0 },
            "eps_relax": { "exclusive_minimum": 0.0, "exclusive_maximum": 1.0 },
            "quad_points": { "minimum": 1 },
            "alpha": { "exclusive_minimum": 0.0 },
            "mu": { "minimum": 0.0 },
            "ntheta": { "minimum": 4 },
            "tube_radius": { "exclusive_minimum": 0.0 },
            "max_iters": { "minimum": 0 },
            "gmm_components": { "minimum": 1 },
        },
        "appearance": ["gmm", "piecewise_constant"],
        "limits": { "max_upload_bytes": MAX_UPLOAD_BYTES },
    }))
}

async fn upload(State(state): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let image = tokio::task::spawn_blocking(move || decode_image(&body))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "image.decode", e.to_string()))?;
    let (width, height, channels) = (image.width, image.height, image.channels);
    let id = state.store(image);
    let body = serde_json::json!({ "image_id": id, "width": width, "height": height, "channels": channels });
    Ok((StatusCode::CREATED, Json(body)).into_response())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentRequest {
    /// Base64-encoded PNG or NetPBM.
    #[serde(default)]
    pub image: Option<String>,
    #[serde(default)]
    pub image_id: Option<String>,
    pub annotation: serde_json::Value,
    #[serde(default)]
    pub params: serde_json::Value,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterationSummary {
    pub energy: f64,
    pub displacement: Option<f64>,
    pub accepted_nodes: usize,
    pub vertices: usize,
    pub is_convex: bool,
    pub is_simple: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Timing {
    pub queue_ms: f64,
    pub compute_ms: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SegmentResponse {
    #[serde(flatten)]
    pub contour: ContourFile,
    pub trace: Vec<IterationSummary>,
    pub timing: Timing,
}

fn summarize(trace: &EvolutionTrace) -> Vec<IterationSummary> {
    trace
        .iterations
        .iter()
        .map(|r| IterationSummary {
            energy: r.energy,
            displacement: r.displacement,
            accepted_nodes: r.accepted_nodes,
            vertices: r.contour.vertices.len(),
            is_convex: r.contour.diagnostics.is_convex,
            is_simple: r.contour.diagnostics.is_simple,
        })
        .collect()
}

fn unprocessable(code: &str, message: impl Into<String>) -> ApiError {
    ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, code, message)
}

async fn segment(State(state): State<AppState>, body: Bytes) -> Result<Json<SegmentResponse>, ApiError> {
    let req: SegmentRequest = serde_json::from_slice(&body).map_err(|e| unprocessable("request.invalid", e.to_string()))?;
    let image = match (&req.image, &req.image_id) {
        (Some(b64), None) => {
            let bytes = base64::engine::general_purpose::STANDARD
                .decode(b64.trim())
                .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "image.base64", e.to_string()))?;
            Arc::new(decode_image(&bytes).map_err(|e| ApiError::from_error(e, None))?)
        }
        (None, Some(id)) => state
            .fetch(id)
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "image.unknown", format!("no stored image '{id}'")))?,
        _ => return Err(unprocessable("request.image", "give exactly one of image and image_id")),
    };
    let ann = annotation_from_value(req.annotation).map_err(|e| ApiError::from_error(e, None))?;
    let params = if req.params.is_null() { serde_json::json!({}) } else { req.params };
    let cfg: EvolutionConfig =
        serde_json::from_value(params).map_err(|e| unprocessable("params.invalid", e.to_string()))?;
    cfg.validate().map_err(|e| ApiError::from_error(e, None))?;

    let queued = Instant::now();
    let permit = state
        .workers
        .clone()
        .acquire_owned()
        .await
        .map_err(|e| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "workers.closed", e.to_string()))?;
    let queue_ms = queued.elapsed().as_secs_f64() * 1e3;
    let budget = state.cfg.budget;
    let job = tokio::task::spawn_blocking(move || {
        let _permit = permit;
        let started = Instant::now();
        let mut trace = EvolutionTrace::default();
        let result = evolve_into(&image, &ann, &cfg, Some(started + budget), &mut trace);
        (result, trace, cfg, started.elapsed())
    });
    let (result, trace, cfg, elapsed) =
        job.await.map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?;
    let summary = summarize(&trace);
    match result {
        Ok(contour) => Ok(Json(SegmentResponse {
            contour: ContourFile::new(&contour, &cfg, Some(RunStatus::from(&trace))),
            trace: summary,
            timing: Timing { queue_ms, compute_ms: elapsed.as_secs_f64() * 1e3 },
        })),
        Err(e) => Err(ApiError::from_error(e, Some(summary))),
    }
}
