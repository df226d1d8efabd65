//! HTTP prediction service.
//!
//! | method | path             | body                                      |
//! |--------|------------------|-------------------------------------------|
//! | POST   | /api/predict     | WAV bytes, or multipart with field `audio` |
//! | GET    | /api/health      |                                           |
//! | GET    | /api/model-info  |                                           |
//! | GET    | /                | static UI (if configured)                 |
//!
//! Errors are JSON `{"error": {"code": ..., "message": ...}}` with a stable
//! `code`. Server-side failures return only an opaque id; details go to the log.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use axum::extract::{DefaultBodyLimit, FromRequest, Multipart, Request, State};
use axum::http::{header, StatusCode};
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Serialize;
use serde_json::json;
use thiserror::Error;
use tower_http::cors::CorsLayer;
use tower_http::services::ServeDir;

use crate::audio_io::AudioError;
use crate::dataset::ClassLabel;
use crate::dsp::MelExtractor;
use crate::model::{Architecture, LayerSummary, ModelError, SerModel};
use crate::pipeline::{features_from_wav, PipelineError};

/// 10 MiB
pub const DEFAULT_MAX_UPLOAD_BYTES: usize = 10 * 1024 * 1024;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub bind: SocketAddr,
    pub model_path: PathBuf,
    pub max_upload_bytes: usize,
    pub static_asset_dir: Option<PathBuf>,
}

impl ServiceConfig {
    pub fn new(model_path: impl Into<PathBuf>) -> Self {
        Self {
            bind: SocketAddr::from(([127, 0, 0, 1], 8080)),
            model_path: model_path.into(),
            max_upload_bytes: DEFAULT_MAX_UPLOAD_BYTES,
            static_asset_dir: None,
        }
    }
}

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("invalid service config: {0}")]
    Config(String),
    #[error("loading model: {0}")]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Shared, read-only request state.
pub struct AppState {
    pub model: SerModel,
    pub extractor: MelExtractor,
    pub max_upload_bytes: usize,
}

impl AppState {
    pub fn new(model: SerModel, max_upload_bytes: usize) -> Self {
        Self {
            model,
            extractor: MelExtractor::default(),
            max_upload_bytes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankedEntry {
    pub gender: &'static str,
    pub emotion: &'static str,
    pub probability: f64,
}

impl RankedEntry {
    fn new(label: ClassLabel, probability: f64) -> Self {
        Self {
            gender: label.gender.as_str(),
            emotion: label.emotion.as_str(),
            probability,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PredictResponse {
    pub top1: RankedEntry,
    pub ranked: Vec<RankedEntry>,
    pub model_version: u32,
    /// Audio span the model actually looked at.
    pub window_seconds: f64,
    /// Duration of the uploaded clip after resampling.
    pub input_seconds: f64,
    pub cropped: bool,
    pub padded: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

static ERROR_COUNTER: AtomicU64 = AtomicU64::new(1);

impl ApiError {
    fn bad_request(code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::BAD_REQUEST,
            code,
            message: message.into(),
        }
    }

    /// Opaque 500. The cause is logged under the returned id.
    fn internal(cause: &dyn std::fmt::Display) -> Self {
        let id = format!(
            "{:x}-{:x}",
            std::process::id(),
            ERROR_COUNTER.fetch_add(1, Ordering::Relaxed)
        );
        tracing::error!(error_id = %id, %cause, "internal error");
        Self {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            code: "internal_error",
            message: format!("internal error (id {id})"),
        }
    }
}

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Audio(AudioError::MalformedContainer(m)) => ApiError::bad_request("malformed_wav", m),
            PipelineError::Audio(AudioError::EmptyAudio) => {
                ApiError::bad_request("empty_audio", "WAV file contains no audio frames")
            }
            PipelineError::Audio(AudioError::UnsupportedEncoding(m)) => ApiError {
                status: StatusCode::UNSUPPORTED_MEDIA_TYPE,
                code: "unsupported_encoding",
                message: m,
            },
            other => ApiError::internal(&other),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({ "error": { "code": self.code, "message": self.message } });
        (self.status, Json(body)).into_response()
    }
}

/// WAV bytes → ranked prediction. Pure given `state`.
pub fn predict_endpoint_pipeline(state: &AppState, bytes: &[u8]) -> Result<PredictResponse, ApiError> {
    if bytes.len() > state.max_upload_bytes {
        return Err(ApiError::bad_request(
            "payload_too_large",
            format!("upload exceeds {} bytes", state.max_upload_bytes),
        ));
    }
    let processed = features_from_wav(bytes, &state.extractor)?;
    let prediction = state
        .model
        .predict(&processed.features)
        .map_err(|e| ApiError::internal(&e))?;
    let ranked: Vec<RankedEntry> = prediction
        .ranked
        .iter()
        .map(|r| RankedEntry::new(r.label, r.probability))
        .collect();
    Ok(PredictResponse {
        top1: ranked[0].clone(),
        ranked,
        model_version: state.model.version,
        window_seconds: processed.window_seconds,
        input_seconds: processed.input_seconds,
        cropped: processed.cropped,
        padded: processed.padded,
    })
}

async fn read_upload(state: &AppState, req: Request) -> Result<Vec<u8>, ApiError> {
    let is_multipart = req
        .headers()
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.starts_with("multipart/form-data"));
    let too_large = || {
        ApiError::bad_request(
            "payload_too_large",
            format!("upload exceeds {} bytes", state.max_upload_bytes),
        )
    };

    if !is_multipart {
        return axum::body::to_bytes(req.into_body(), state.max_upload_bytes)
            .await
            .map(|b| b.to_vec())
            .map_err(|_| too_large());
    }

    let mut multipart = Multipart::from_request(req, &())
        .await
        .map_err(|e| ApiError::bad_request("invalid_multipart", e.body_text()))?;
    loop {
        let field = multipart.next_field().await.map_err(|e| {
            if e.status() == StatusCode::PAYLOAD_TOO_LARGE {
                too_large()
            } else {
                ApiError::bad_request("invalid_multipart", e.body_text())
            }
        })?;
        let Some(field) = field else {
            return Err(ApiError::bad_request(
                "missing_audio_field",
                "multipart body has no \"audio\" field",
            ));
        };
        if field.name() == Some("audio") {
            let bytes = field.bytes().await.map_err(|e| {
                if e.status() == StatusCode::PAYLOAD_TOO_LARGE {
                    too_large()
                } else {
                    ApiError::bad_request("invalid_multipart", e.body_text())
                }
            })?;
            return Ok(bytes.to_vec());
        }
    }
}

async fn predict_handler(State(state): State<Arc<AppState>>, req: Request) -> Result<Json<PredictResponse>, ApiError> {
    let bytes = read_upload(&state, req).await?;
    let response = tokio::task::spawn_blocking(move || predict_endpoint_pipeline(&state, &bytes))
        .await
        .map_err(|e| ApiError::internal(&e))??;
    Ok(Json(response))
}

async fn health_handler(State(state): State<Arc<AppState>>) -> impl IntoResponse {
    Json(json!({
        "status": "ok",
        "model_version": state.model.version,
        "classes": state.model.class_labels.len(),
    }))
}

#[derive(Serialize)]
struct ModelInfo<'a> {
    model_version: u32,
    architecture: &'a Architecture,
    class_labels: Vec<String>,
    parameters: usize,
    layers: Vec<LayerSummary>,
    sample_rate: u32,
}

async fn model_info_handler(State(state): State<Arc<AppState>>) -> impl IntoResponse {
    let m = &state.model;
    Json(json!(ModelInfo {
        model_version: m.version,
        architecture: &m.architecture,
        class_labels: m.class_labels.iter().map(|c| c.to_string()).collect(),
        parameters: m.parameter_count(),
        layers: m.summary(),
        sample_rate: state.extractor.mel.sample_rate,
    }))
}

const PLACEHOLDER_INDEX: &str = "<!doctype html>\n<html><head><meta charset=\"utf-8\"><title>Speech emotion recognition</title></head>\n<body><h1>Speech emotion recognition</h1>\n<p>The web UI is not installed. Start the server with <code>--ui-dir</code> pointing at the built UI, or POST a WAV file to <code>/api/predict</code>.</p></body></html>\n";

async fn placeholder_index() -> Html<&'static str> {
    Html(PLACEHOLDER_INDEX)
}

async fn api_not_found() -> ApiError {
    ApiError {
        status: StatusCode::NOT_FOUND,
        code: "not_found",
        message: "no such endpoint".into(),
    }
}

/// All routes over `state`. Static files come from `static_dir` when given.
pub fn router(state: Arc<AppState>, static_dir: Option<&Path>) -> Router {
    // multipart framing overhead on top of the raw cap
    let body_limit = state.max_upload_bytes.saturating_add(64 * 1024);
    let api = Router::new()
        .route("/api/predict", post(predict_handler))
        .route("/api/health", get(health_handler))
        .route("/api/model-info", get(model_info_handler))
        .route("/api/*rest", get(api_not_found).post(api_not_found))
        .layer(DefaultBodyLimit::max(body_limit))
        .with_state(state);
    let app = match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api.route("/", get(placeholder_index)),
    };
    app.layer(CorsLayer::permissive())
}

/// Load the model (failing fast) and build the router.
pub fn app_from_config(config: &ServiceConfig) -> Result<Router, ServiceError> {
    if config.max_upload_bytes == 0 {
        return Err(ServiceError::Config("max_upload_bytes must be positive".into()));
    }
    if let Some(dir) = &config.static_asset_dir {
        if !dir.is_dir() {
            return Err(ServiceError::Config(format!(
                "static asset dir {} does not exist",
                dir.display()
            )));
        }
    }
    let model = SerModel::load(&config.model_path)?;
    let state = Arc::new(AppState::new(model, config.max_upload_bytes));
    Ok(router(state, config.static_asset_dir.as_deref()))
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        if let Ok(mut s) = tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            s.recv().await;
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
    tracing::info!("shutting down");
}

/// Serve until SIGINT/SIGTERM.
pub async fn serve(config: ServiceConfig) -> Result<(), ServiceError> {
    let app = app_from_config(&config)?;
    let listener = tokio::net::TcpListener::bind(config.bind).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, app)
        .with_graceful_shutdown(shutdown_signal())
        .await?;
    Ok(())
}
