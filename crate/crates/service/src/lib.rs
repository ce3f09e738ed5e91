//! Read-only HTTP JSON API over a crowdscope store.
//!
//! | Route | Response |
//! |---|---|
//! | `GET /datasets` | manifests of every stored dataset |
//! | `GET /datasets/{id}/series?mode=…` | one scented-widget point per step |
//! | `GET /datasets/{id}/window?mode=…&start=…&len=…&view=…` | one layout scene per day |
//! | `GET /datasets/{id}/node/{step}/{node}` | tags, size, sentiment and top centroid terms |
//!
//! Errors are JSON objects `{"status": <code>, "error": <message>}`.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::{Arc, RwLock};

use axum::extract::rejection::QueryRejection;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::Router;
use crowdscope_core::layout::SceneStyle;
use crowdscope_core::query::{self, QueryParams};
use crowdscope_core::store::{Dataset, Store};
use crowdscope_core::Error;
use serde::Serialize;
use tower_http::cors::{AllowOrigin, CorsLayer};

/// Shared state: the store plus a read-through cache of loaded datasets.
pub struct AppState {
    store: Store,
    style: SceneStyle,
    cache: RwLock<HashMap<String, Arc<Dataset>>>,
}

impl AppState {
    pub fn new(store: Store) -> Self {
        Self::with_style(store, SceneStyle::default())
    }

    pub fn with_style(store: Store, style: SceneStyle) -> Self {
        Self {
            store,
            style,
            cache: RwLock::new(HashMap::new()),
        }
    }

    fn dataset(&self, id: &str) -> Result<Arc<Dataset>, ApiError> {
        if let Some(ds) = self.cache.read().expect("cache lock").get(id) {
            return Ok(ds.clone());
        }
        if !self.store.has_dataset(id) {
            return Err(ApiError::new(
                StatusCode::NOT_FOUND,
                format!("unknown dataset `{id}`"),
            ));
        }
        let ds = Arc::new(self.store.load_dataset(id)?);
        let mut cache = self.cache.write().expect("cache lock");
        Ok(cache.entry(id.to_string()).or_insert(ds).clone())
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Invalid(_) | Error::Config(_) => StatusCode::BAD_REQUEST,
            Error::UnknownNode { .. } => StatusCode::NOT_FOUND,
            Error::MissingStep(_) | Error::IncompleteStore(_) => StatusCode::CONFLICT,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        if status.is_server_error() {
            log::error!("{e}");
        }
        Self::new(status, e.to_string())
    }
}

impl From<QueryRejection> for ApiError {
    fn from(r: QueryRejection) -> Self {
        Self::new(StatusCode::BAD_REQUEST, r.body_text())
    }
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    status: u16,
    error: &'a str,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            status: self.status.as_u16(),
            error: &self.message,
        };
        (self.status, json(&body)).into_response()
    }
}

fn json<T: Serialize>(value: &T) -> Response {
    (
        [(
            header::CONTENT_TYPE,
            HeaderValue::from_static("application/json"),
        )],
        query::to_json_bytes(value),
    )
        .into_response()
}

type Params = Result<Query<QueryParams>, QueryRejection>;

async fn list_datasets(State(state): State<Arc<AppState>>) -> Result<Response, ApiError> {
    Ok(json(&state.store.list()?))
}

async fn series(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    params: Params,
) -> Result<Response, ApiError> {
    let Query(params) = params?;
    let mode = params.score_mode()?;
    let ds = state.dataset(&id)?;
    let range = match (params.start, params.len) {
        (None, None) => None,
        (start, len) => Some((
            start.unwrap_or(0),
            len.unwrap_or(ds.step_count().saturating_sub(start.unwrap_or(0))),
        )),
    };
    Ok(json(&query::series(&ds, &mode, params.theta, range)?))
}

async fn window(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    params: Params,
) -> Result<Response, ApiError> {
    let Query(params) = params?;
    let q = params.window_query()?;
    let ds = state.dataset(&id)?;
    Ok(json(&query::window(&ds, &q, &state.style)?))
}

async fn node(
    State(state): State<Arc<AppState>>,
    Path((id, step, node)): Path<(String, usize, usize)>,
) -> Result<Response, ApiError> {
    let ds = state.dataset(&id)?;
    if step >= ds.step_count() {
        return Err(ApiError::new(
            StatusCode::NOT_FOUND,
            format!("unknown step {step}"),
        ));
    }
    Ok(json(&query::node_detail(&ds, step, node)?))
}

async fn fallback() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "no such route")
}

/// Builds the API router. `origins` restricts CORS; empty allows any origin.
pub fn router(state: Arc<AppState>, origins: &[String]) -> Router {
    let allow = if origins.is_empty() {
        AllowOrigin::any()
    } else {
        AllowOrigin::list(origins.iter().filter_map(|o| HeaderValue::from_str(o).ok()))
    };
    let cors = CorsLayer::new()
        .allow_origin(allow)
        .allow_methods([Method::GET]);
    Router::new()
        .route("/datasets", get(list_datasets))
        .route("/datasets/{id}/series", get(series))
        .route("/datasets/{id}/window", get(window))
        .route("/datasets/{id}/node/{step}/{node}", get(node))
        .fallback(fallback)
        .layer(cors)
        .with_state(state)
}

/// Serves the API until the process is stopped.
pub async fn serve(
    addr: SocketAddr,
    state: Arc<AppState>,
    origins: &[String],
) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state, origins)).await
}
