//! HTTP front end of a [`ReviewSession`].

use std::collections::HashSet;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;
use tokio::net::TcpListener;
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

use crate::session::{LabelRequest, ReviewSession};
use crate::ReviewError;

const INDEX_HTML: &str = include_str!("../ui/index.html");

pub const DEFAULT_BIND: &str = "127.0.0.1:8765";
pub const DEFAULT_ALPHA: f64 = 0.5;
pub const DEFAULT_SATURATION: f64 = 0.3;

type Shared = Arc<ReviewSession>;

impl IntoResponse for ReviewError {
    fn into_response(self) -> Response {
        let status = match &self {
            ReviewError::UnknownFrame(_) => StatusCode::NOT_FOUND,
            ReviewError::BadVerdict(_) | ReviewError::BadParameter(_) => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(json!({ "error": self.to_string() }))).into_response()
    }
}

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, ReviewError> + Send + 'static,
) -> Result<T, ReviewError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ReviewError::BadParameter(format!("worker panicked: {e}")))?
}

async fn list_frames(State(s): State<Shared>) -> impl IntoResponse {
    Json(json!({ "frames": s.frames(), "progress": s.progress() }))
}

async fn get_frame(State(s): State<Shared>, Path(id): Path<String>) -> Result<impl IntoResponse, ReviewError> {
    Ok(Json(s.frame(&id)?))
}

#[derive(Deserialize)]
struct OverlayParams {
    alpha: Option<f64>,
    saturation: Option<f64>,
}

async fn get_overlay(
    State(s): State<Shared>,
    Path(file): Path<String>,
    Query(q): Query<OverlayParams>,
) -> Result<impl IntoResponse, ReviewError> {
    let id = file.strip_suffix(".png").unwrap_or(&file).to_string();
    let alpha = q.alpha.unwrap_or(DEFAULT_ALPHA);
    let saturation = q.saturation.unwrap_or(DEFAULT_SATURATION);
    let png = blocking(move || s.overlay_png(&id, alpha, saturation)).await?;
    Ok(([(header::CONTENT_TYPE, "image/png"), (header::CACHE_CONTROL, "no-store")], png))
}

#[derive(Deserialize)]
struct NextParams {
    /// Comma-separated frame ids to pass over.
    skip: Option<String>,
}

async fn queue_next(State(s): State<Shared>, Query(q): Query<NextParams>) -> impl IntoResponse {
    let skip: HashSet<String> = q
        .skip
        .iter()
        .flat_map(|v| v.split(','))
        .filter(|v| !v.is_empty())
        .map(str::to_string)
        .collect();
    let progress = s.progress();
    Json(json!({ "frame": s.next(&skip), "remaining": progress.remaining, "progress": progress }))
}

async fn post_label(State(s): State<Shared>, body: axum::body::Bytes) -> Result<impl IntoResponse, ReviewError> {
    let req: LabelRequest =
        serde_json::from_slice(&body).map_err(|e| ReviewError::BadParameter(format!("malformed label: {e}")))?;
    Ok(Json(blocking(move || s.submit(req)).await?))
}

async fn get_progress(State(s): State<Shared>) -> impl IntoResponse {
    Json(s.progress())
}

async fn index() -> Html<&'static str> {
    Html(INDEX_HTML)
}

/// Routes of the review API. With `ui_dir`, static files come from that
/// directory; otherwise the built-in page is served at `/`.
pub fn router(session: Shared, ui_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/frames", get(list_frames))
        .route("/api/frames/{id}", get(get_frame))
        .route("/api/overlay/{file}", get(get_overlay))
        .route("/api/queue/next", get(queue_next))
        .route("/api/labels", post(post_label))
        .route("/api/progress", get(get_progress))
        .with_state(session);
    match ui_dir {
        Some(dir) => api.fallback_service(tower_http::services::ServeDir::new(dir)),
        None => api.route("/", get(index)),
    }
}

/// A running service.
pub struct ReviewHandle {
    pub addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    task: JoinHandle<std::io::Result<()>>,
}

impl ReviewHandle {
    /// Stops accepting connections and waits for in-flight requests.
    pub async fn stop(mut self) -> std::io::Result<()> {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        self.task.await.unwrap_or_else(|e| Err(std::io::Error::other(e)))
    }

    /// Runs until the server exits on its own.
    pub async fn wait(self) -> std::io::Result<()> {
        let ReviewHandle { task, shutdown, .. } = self;
        let _keep_open = shutdown;
        task.await.unwrap_or_else(|e| Err(std::io::Error::other(e)))
    }
}

/// Binds `bind` and serves `session` in the background.
pub async fn start_review(session: Shared, bind: &str, ui_dir: Option<PathBuf>) -> Result<ReviewHandle, ReviewError> {
    let listener = TcpListener::bind(bind).await.map_err(|e| ReviewError::Bind {
        addr: bind.to_string(),
        source: e,
    })?;
    let addr = listener.local_addr().map_err(|e| ReviewError::Bind {
        addr: bind.to_string(),
        source: e,
    })?;
    let (tx, rx) = oneshot::channel::<()>();
    let app = router(session, ui_dir);
    let task = tokio::spawn(async move {
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = rx.await;
            })
            .await
    });
    Ok(ReviewHandle {
        addr,
        shutdown: Some(tx),
        task,
    })
}
