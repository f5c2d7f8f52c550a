//! Annotation HTTP API over a dataset directory.
//!
//! Reads clone an immutable manifest snapshot; writes go through a single
//! writer that persists atomically and then publishes a new snapshot.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, State};
use axum::http::{header, StatusCode};
use axum::response::{Html, IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use cownter_core::manifest::DatasetManifest;
use cownter_core::raster::validate_annotations;
use cownter_core::{Point, TileLabel};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::Mutex;
use tower_http::services::ServeDir;

use crate::error::{CliError, CliResult};

pub struct AppState {
    dir: PathBuf,
    snapshot: RwLock<Arc<DatasetManifest>>,
    writer: Mutex<()>,
}

impl AppState {
    pub fn open(dir: &Path) -> CliResult<Self> {
        let manifest = DatasetManifest::load(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            snapshot: RwLock::new(Arc::new(manifest)),
            writer: Mutex::new(()),
        })
    }

    pub fn snapshot(&self) -> Arc<DatasetManifest> {
        self.snapshot.read().expect("snapshot lock").clone()
    }

    fn publish(&self, m: DatasetManifest) {
        *self.snapshot.write().expect("snapshot lock") = Arc::new(m);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileSummary {
    pub id: String,
    pub labeled: bool,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotations {
    pub points: Vec<Point>,
    pub label: TileLabel,
    pub revision: u64,
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(json!({ "error": message.into() }))).into_response()
}

fn unknown(id: &str) -> Response {
    error(StatusCode::NOT_FOUND, format!("unknown tile {id}"))
}

async fn list_tiles(State(st): State<Arc<AppState>>) -> Json<Vec<TileSummary>> {
    let m = st.snapshot();
    Json(
        m.tiles
            .iter()
            .map(|t| TileSummary {
                id: t.id.clone(),
                labeled: t.labeled,
                count: t.points.len(),
            })
            .collect(),
    )
}

async fn tile_image(State(st): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Response {
    let m = st.snapshot();
    let Some(t) = m.get(&id) else {
        return unknown(&id);
    };
    match tokio::fs::read(st.dir.join(&t.image)).await {
        Ok(bytes) => ([(header::CONTENT_TYPE, "image/png")], bytes).into_response(),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, format!("{}: {e}", t.image)),
    }
}

async fn get_annotations(State(st): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Response {
    let m = st.snapshot();
    match m.get(&id) {
        Some(t) => Json(Annotations {
            points: t.points.clone(),
            label: t.label,
            revision: t.revision,
        })
        .into_response(),
        None => unknown(&id),
    }
}

async fn put_annotations(
    State(st): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    body: Bytes,
) -> Response {
    let _writer = st.writer.lock().await;
    let current = st.snapshot();
    let Some(index) = current.tiles.iter().position(|t| t.id == id) else {
        return unknown(&id);
    };
    let req: Annotations = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return error(StatusCode::BAD_REQUEST, format!("invalid body: {e}")),
    };
    let tile = &current.tiles[index];
    let violations = validate_annotations(&req.points, req.label, tile.width, tile.height, None);
    if !violations.is_empty() {
        let messages: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
        return (
            StatusCode::BAD_REQUEST,
            Json(json!({ "error": "invalid annotations", "violations": messages })),
        )
            .into_response();
    }
    if req.revision != tile.revision {
        return (
            StatusCode::CONFLICT,
            Json(json!({
                "error": format!("revision {} is stale", req.revision),
                "revision": tile.revision,
            })),
        )
            .into_response();
    }

    let mut next = (*current).clone();
    let entry = &mut next.tiles[index];
    entry.points = req.points;
    entry.label = req.label;
    entry.labeled = true;
    entry.revision += 1;
    let stored = Annotations {
        points: entry.points.clone(),
        label: entry.label,
        revision: entry.revision,
    };
    let dir = st.dir.clone();
    let to_save = next.clone();
    match tokio::task::spawn_blocking(move || to_save.save_atomic(&dir)).await {
        Ok(Ok(())) => {
            st.publish(next);
            Json(stored).into_response()
        }
        Ok(Err(e)) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

const PLACEHOLDER: &str = "<!doctype html><html><head><title>cownter</title></head>\
<body><h1>cownter annotation service</h1><p>No frontend bundle configured; \
start with <code>--ui DIR</code>. The API lives under <code>/api/tiles</code>.</p></body></html>";

async fn placeholder() -> Html<&'static str> {
    Html(PLACEHOLDER)
}

pub fn router(state: Arc<AppState>, ui: Option<&Path>) -> Router {
    let api = Router::new()
        .route("/api/tiles", get(list_tiles))
        .route("/api/tiles/{id}/image", get(tile_image))
        .route("/api/tiles/{id}/annotations", get(get_annotations).put(put_annotations))
        .with_state(state);
    match ui {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api.route("/", get(placeholder)),
    }
}

/// Binds, reports the bound address through `on_ready`, and serves forever.
pub async fn serve(
    dir: &Path,
    addr: SocketAddr,
    ui: Option<&Path>,
    on_ready: impl FnOnce(SocketAddr),
) -> CliResult<()> {
    let state = Arc::new(AppState::open(dir)?);
    if let Some(u) = ui {
        if !u.join("index.html").is_file() {
            return Err(CliError::data(format!("{} has no index.html", u.display())));
        }
    }
    let app = router(state, ui);
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| CliError::data(format!("cannot bind {addr}: {e}")))?;
    on_ready(listener.local_addr()?);
    axum::serve(listener, app).await?;
    Ok(())
}
