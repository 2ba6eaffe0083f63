//! Feedback service: the HTTP boundary between the training loop and the
//! operator's browser.
//!
//! All state lives in the experiment directory. Tickets come from
//! `pairs.jsonl`, labels are appended to `preferences.jsonl` through a single
//! writer, and orbit frames are rendered on demand from stored voxel grids.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use prefview_core::experiment::{
    load_config, load_reconstruction, load_scene, render_orbit, status_snapshot, ExperimentConfig, ZOOM_MAX, ZOOM_MIN,
};
use prefview_core::image_io::encode_png;
use prefview_core::labels::{LabelStore, SharedLabels};
use prefview_core::pref::Labeler;
use prefview_core::sim::SceneModel;
use prefview_core::Error;
use serde::{Deserialize, Serialize};
use tower_http::cors::{Any, CorsLayer};
use tower_http::services::ServeDir;

pub const DEFAULT_PORT: u16 = 8377;
const FRAME_CACHE_CAP: usize = 1024;

/// Shared handler state.
pub struct AppState {
    dir: PathBuf,
    config: ExperimentConfig,
    scene: SceneModel,
    labels: Arc<SharedLabels>,
    frames: Mutex<HashMap<FrameKey, Arc<Vec<u8>>>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct FrameKey {
    id: String,
    azimuth: u64,
    elevation: u64,
    zoom: u64,
}

impl AppState {
    /// Loads the experiment at `dir`. Pass the orchestrator's label store to share
    /// its notifications when running in one process.
    pub fn open(dir: &Path, labels: Option<Arc<SharedLabels>>) -> Result<Self, Error> {
        let config = load_config(dir)?;
        let scene = load_scene(dir)?;
        let labels = match labels {
            Some(l) => l,
            None => Arc::new(SharedLabels::new(LabelStore::open(dir)?)),
        };
        Ok(Self {
            dir: dir.to_path_buf(),
            config,
            scene,
            labels,
            frames: Mutex::new(HashMap::new()),
        })
    }

    pub fn labels(&self) -> Arc<SharedLabels> {
        self.labels.clone()
    }
}

/// JSON error body with a status mapped from the core error kind.
#[derive(Debug)]
pub struct ApiError(StatusCode, String);

#[derive(Serialize)]
struct ErrorBody<'a> {
    error: &'a str,
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::NotFound(_) => StatusCode::NOT_FOUND,
            Error::Conflict(_) => StatusCode::CONFLICT,
            Error::Validation(_) => StatusCode::UNPROCESSABLE_ENTITY,
            Error::Locked(_) => StatusCode::LOCKED,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(status, e.to_string())
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        ApiError(StatusCode::UNPROCESSABLE_ENTITY, r.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(ErrorBody { error: &self.1 })).into_response()
    }
}

type Shared = Arc<AppState>;

async fn next_pair(State(app): State<Shared>) -> Result<Response, ApiError> {
    let ticket = {
        let mut store = app.labels.lock();
        store.refresh()?;
        store.next_open(Labeler::Human).cloned()
    };
    Ok(match ticket {
        Some(t) => Json(t).into_response(),
        None => StatusCode::NO_CONTENT.into_response(),
    })
}

#[derive(Debug, Deserialize)]
pub struct LabelRequest {
    pub pair_id: String,
    pub mu: i64,
}

#[derive(Debug, Serialize)]
struct LabelAck {
    ok: bool,
    pair_id: String,
    mu: u8,
}

async fn post_label(
    State(app): State<Shared>,
    body: Result<Json<LabelRequest>, JsonRejection>,
) -> Result<Json<LabelAck>, ApiError> {
    let Json(req) = body?;
    let labels = app.labels.clone();
    let record = tokio::task::spawn_blocking(move || labels.label(&req.pair_id, req.mu, Labeler::Human))
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok(Json(LabelAck {
        ok: true,
        pair_id: record.pair_id,
        mu: record.mu.into(),
    }))
}

#[derive(Debug, Deserialize)]
pub struct FrameQuery {
    #[serde(default)]
    pub azimuth: f64,
    #[serde(default = "default_elevation")]
    pub elevation: f64,
    #[serde(default = "default_zoom")]
    pub zoom: f64,
}

fn default_elevation() -> f64 {
    30.0
}

fn default_zoom() -> f64 {
    1.0
}

async fn frame(
    State(app): State<Shared>,
    UrlPath(id): UrlPath<String>,
    query: Result<Query<FrameQuery>, axum::extract::rejection::QueryRejection>,
) -> Result<Response, ApiError> {
    let Query(q) = query.map_err(|r| ApiError(StatusCode::UNPROCESSABLE_ENTITY, r.body_text()))?;
    if !(q.azimuth.is_finite() && q.elevation.is_finite() && q.zoom.is_finite()) {
        return Err(Error::Validation("azimuth, elevation and zoom must be finite".into()).into());
    }
    let key = FrameKey {
        id: id.clone(),
        azimuth: q.azimuth.rem_euclid(360.0).to_bits(),
        elevation: q.elevation.clamp(-89.0, 89.0).to_bits(),
        zoom: q.zoom.clamp(ZOOM_MIN, ZOOM_MAX).to_bits(),
    };
    let cached = app.frames.lock().unwrap_or_else(|p| p.into_inner()).get(&key).cloned();
    let bytes = match cached {
        Some(b) => b,
        None => {
            let app2 = app.clone();
            let png = tokio::task::spawn_blocking(move || -> Result<Vec<u8>, Error> {
                let recon = load_reconstruction(&app2.dir, &id)?;
                let img = render_orbit(&recon, &app2.config, &app2.scene, q.azimuth, q.elevation, q.zoom)?;
                encode_png(&img)
            })
            .await
            .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
            let png = Arc::new(png);
            let mut cache = app.frames.lock().unwrap_or_else(|p| p.into_inner());
            if cache.len() >= FRAME_CACHE_CAP {
                cache.clear();
            }
            cache.insert(key, png.clone());
            png
        }
    };
    Ok((
        [
            (header::CONTENT_TYPE, HeaderValue::from_static("image/png")),
            (header::CACHE_CONTROL, HeaderValue::from_static("public, max-age=31536000, immutable")),
        ],
        bytes.as_ref().clone(),
    )
        .into_response())
}

async fn status(State(app): State<Shared>) -> Result<Response, ApiError> {
    let app2 = app.clone();
    let snap = tokio::task::spawn_blocking(move || status_snapshot(&app2.dir, &app2.labels))
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok(Json(snap).into_response())
}

const PLACEHOLDER: &str = r#"<!doctype html>
<html><head><meta charset="utf-8"><title>prefview</title></head>
<body>
<h1>prefview feedback service</h1>
<p>No UI bundle is installed. Start the service with <code>--static DIR</code> to serve one.</p>
<ul>
<li><a href="/api/status">GET /api/status</a></li>
<li><a href="/api/pairs/next">GET /api/pairs/next</a></li>
<li>POST /api/labels {"pair_id": "...", "mu": 1|2}</li>
<li>GET /api/reconstructions/{id}/frames?azimuth=&amp;elevation=&amp;zoom=</li>
</ul>
</body></html>
"#;

async fn placeholder() -> Html<&'static str> {
    Html(PLACEHOLDER)
}

/// Routes under `/api`, plus `/` (a UI bundle directory, or a placeholder page).
pub fn router(app: Arc<AppState>, static_dir: Option<&Path>) -> Router {
    let cors = CorsLayer::new()
        .allow_origin(Any)
        .allow_methods([Method::GET, Method::POST])
        .allow_headers([header::CONTENT_TYPE]);
    let api = Router::new()
        .route("/api/pairs/next", get(next_pair))
        .route("/api/labels", post(post_label))
        .route("/api/reconstructions/{id}/frames", get(frame))
        .route("/api/status", get(status))
        .with_state(app);
    let root = match static_dir {
        Some(d) => api.fallback_service(ServeDir::new(d)),
        None => api.route("/", get(placeholder)),
    };
    root.layer(cors)
}

/// Binds `addr` and serves until the future is dropped or the process receives Ctrl-C.
pub async fn serve(app: Arc<AppState>, addr: SocketAddr, static_dir: Option<PathBuf>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(app, static_dir.as_deref()))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
