//! HTTP job service.
//!
//! | method | path                 | response                                    |
//! |--------|----------------------|---------------------------------------------|
//! | POST   | `/jobs`              | 202 `{job_id, status}` or 400               |
//! | GET    | `/jobs/{id}`         | job record plus the submitted request       |
//! | GET    | `/jobs/{id}/video`   | video bytes, 409 until the job is done      |
//! | GET    | `/jobs/{id}/strip`   | control strip PNG, 409 until the job is done |
//! | POST   | `/preview/tween`     | `{frame_count, strip_png_base64, ...}`      |
//! | GET    | `/healthz`           | `{status: "ok"}`                            |

pub mod store;
pub mod worker;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path as UrlPath, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine;
use serde::Serialize;
use serde_json::{json, Value};
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::mpsc::Sender;
use std::sync::{Arc, Mutex};

use stf_core::model::resolve_model_id;
use stf_core::raster::encode_png_gray;
use stf_core::request::FieldError;
use stf_core::tween::interpolate_sequence;
use stf_core::{validate_sequence, RequestDocument, ValidationErrors};

use store::{JobRecord, JobStatus, JobStore, StoreError};
use worker::Worker;

const MAX_BODY_BYTES: usize = 32 * 1024 * 1024;

#[derive(Clone, Debug)]
pub struct ServiceConfig {
    pub data_dir: PathBuf,
    pub model_dir: Option<PathBuf>,
    pub prefer_mp4: bool,
}

#[derive(Clone)]
pub struct AppState {
    store: Arc<JobStore>,
    queue: Arc<Mutex<Sender<String>>>,
    model_dir: Option<PathBuf>,
}

/// Opens the store, sweeps orphaned jobs, starts the worker and returns the
/// router. Jobs still queued from a previous run are re-enqueued in order.
pub fn build(config: &ServiceConfig) -> Result<Router, StoreError> {
    let store = Arc::new(JobStore::open(&config.data_dir)?);
    let pending = store.sweep()?;
    let (tx, rx) = std::sync::mpsc::channel();
    for id in pending {
        tx.send(id).expect("worker receiver is alive");
    }
    Worker::new(store.clone(), config.model_dir.clone(), config.prefer_mp4).spawn(rx);
    let state = AppState {
        store,
        queue: Arc::new(Mutex::new(tx)),
        model_dir: config.model_dir.clone(),
    };
    Ok(router(state))
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/jobs", post(submit_job))
        .route("/jobs/{id}", get(get_status))
        .route("/jobs/{id}/video", get(get_video))
        .route("/jobs/{id}/strip", get(get_strip))
        .route("/preview/tween", post(preview_tween))
        .layer(DefaultBodyLimit::max(MAX_BODY_BYTES))
        .with_state(state)
}

/// Binds `addr`, prints the bound address on stdout and serves until Ctrl-C.
pub async fn serve(config: ServiceConfig, addr: SocketAddr) -> std::io::Result<()> {
    let app = build(&config).map_err(std::io::Error::other)?;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    println!("listening on http://{}", listener.local_addr()?);
    use std::io::Write;
    std::io::stdout().flush()?;
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

#[derive(Debug)]
pub enum ApiError {
    Validation(ValidationErrors),
    UnknownJob(String),
    NotReady {
        status: JobStatus,
        error_message: Option<String>,
    },
    Internal(String),
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    error: &'a str,
    message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    fields: Option<&'a [FieldError]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    status: Option<JobStatus>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error_message: Option<&'a str>,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (code, body) = match &self {
            ApiError::Validation(v) => (
                StatusCode::BAD_REQUEST,
                ErrorBody {
                    error: "ValidationError",
                    message: v.to_string(),
                    fields: Some(&v.errors),
                    status: None,
                    error_message: None,
                },
            ),
            ApiError::UnknownJob(id) => (
                StatusCode::NOT_FOUND,
                ErrorBody {
                    error: "UnknownJob",
                    message: format!("no job with id `{id}`"),
                    fields: None,
                    status: None,
                    error_message: None,
                },
            ),
            ApiError::NotReady { status, error_message } => (
                StatusCode::CONFLICT,
                ErrorBody {
                    error: "NotReady",
                    message: format!("job is {}", serde_json::to_value(status).unwrap_or_default().as_str().unwrap_or("")),
                    fields: None,
                    status: Some(*status),
                    error_message: error_message.as_deref(),
                },
            ),
            ApiError::Internal(m) => (
                StatusCode::INTERNAL_SERVER_ERROR,
                ErrorBody {
                    error: "Internal",
                    message: m.clone(),
                    fields: None,
                    status: None,
                    error_message: None,
                },
            ),
        };
        (code, Json(body)).into_response()
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        ApiError::Internal(e.to_string())
    }
}

async fn healthz() -> Json<Value> {
    Json(json!({"status": "ok"}))
}

async fn submit_job(State(state): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let doc = RequestDocument::from_json(&body).map_err(ApiError::Validation)?;
    let model_dir = state.model_dir.clone();
    let doc = tokio::task::spawn_blocking(move || -> Result<RequestDocument, ValidationErrors> {
        let mut errs = match doc.resolve() {
            Ok(_) => ValidationErrors::default(),
            Err(e) => e,
        };
        if let Err(e) = resolve_model_id(&doc.model, model_dir.as_deref()) {
            errs.errors.push(FieldError {
                field: "model".into(),
                code: e.code().into(),
                message: e.to_string(),
            });
        }
        if errs.is_empty() {
            Ok(doc)
        } else {
            Err(errs)
        }
    })
    .await
    .map_err(|e| ApiError::Internal(e.to_string()))?
    .map_err(ApiError::Validation)?;

    let record = state.store.create(&body)?;
    state
        .queue
        .lock()
        .expect("queue lock")
        .send(record.job_id.clone())
        .map_err(|_| ApiError::Internal("worker has stopped".into()))?;
    log::info!("job {} queued (model {})", record.job_id, doc.model);
    Ok((
        StatusCode::ACCEPTED,
        Json(json!({"job_id": record.job_id, "status": record.status})),
    )
        .into_response())
}

fn load_record(state: &AppState, id: &str) -> Result<JobRecord, ApiError> {
    state.store.load(id)?.ok_or_else(|| ApiError::UnknownJob(id.to_string()))
}

async fn get_status(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> Result<Json<Value>, ApiError> {
    let record = load_record(&state, &id)?;
    let mut doc = serde_json::to_value(&record).map_err(|e| ApiError::Internal(e.to_string()))?;
    let request = state.store.request_bytes(&id)?;
    let request: Value = serde_json::from_slice(&request).unwrap_or(Value::Null);
    doc["request"] = request;
    Ok(Json(doc))
}

fn done_record(state: &AppState, id: &str) -> Result<JobRecord, ApiError> {
    let record = load_record(state, id)?;
    if record.status != JobStatus::Done {
        return Err(ApiError::NotReady {
            status: record.status,
            error_message: record.error_message,
        });
    }
    Ok(record)
}

async fn get_video(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> Result<Response, ApiError> {
    let record = done_record(&state, &id)?;
    let name = record
        .artifact_paths
        .video
        .ok_or_else(|| ApiError::Internal("done job has no video".into()))?;
    let bytes = tokio::fs::read(state.store.job_dir(&id).join(name))
        .await
        .map_err(|e| ApiError::Internal(e.to_string()))?;
    let content_type = record.video_content_type.unwrap_or_else(|| "application/octet-stream".into());
    Ok(([(header::CONTENT_TYPE, content_type)], bytes).into_response())
}

async fn get_strip(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> Result<Response, ApiError> {
    let record = done_record(&state, &id)?;
    let name = record
        .artifact_paths
        .control_strip
        .ok_or_else(|| ApiError::Internal("done job has no control strip".into()))?;
    let bytes = tokio::fs::read(state.store.job_dir(&id).join(name))
        .await
        .map_err(|e| ApiError::Internal(e.to_string()))?;
    Ok(([(header::CONTENT_TYPE, "image/png")], bytes).into_response())
}

#[derive(Serialize)]
struct PreviewResponse {
    frame_count: usize,
    tile_height: usize,
    tile_width: usize,
    strip_png_base64: String,
    /// Stroke centroid `(x, y)` of each tile.
    centroids: Vec<Option<(f64, f64)>>,
}

/// Only the settings and keyframes are validated; prompt and model are not needed.
async fn preview_tween(body: Bytes) -> Result<Json<PreviewResponse>, ApiError> {
    let doc = RequestDocument::from_json(&body).map_err(ApiError::Validation)?;
    tokio::task::spawn_blocking(move || {
        let cfg = doc.config().map_err(ApiError::Validation)?;
        let sketches = doc.keyframe_sketches(cfg.resolution).map_err(ApiError::Validation)?;
        let seq = validate_sequence(sketches, cfg.total_frames)
            .map_err(|e| ApiError::Validation(ValidationErrors::single("keyframes", e.code(), e.to_string())))?;
        let control = interpolate_sequence(&seq, cfg.band)
            .map_err(|e| ApiError::Validation(ValidationErrors::single("band", e.code(), e.to_string())))?;
        let strip = control.contact_strip().map_err(|e| ApiError::Internal(e.to_string()))?;
        let png = encode_png_gray(&strip).map_err(|e| ApiError::Internal(e.to_string()))?;
        Ok(Json(PreviewResponse {
            frame_count: control.len(),
            tile_height: cfg.resolution.0,
            tile_width: cfg.resolution.1,
            strip_png_base64: base64::engine::general_purpose::STANDARD.encode(png),
            centroids: control.frames().iter().map(|f| f.centroid()).collect(),
        }))
    })
    .await
    .map_err(|e| ApiError::Internal(e.to_string()))?
}
