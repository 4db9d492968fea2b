//! HTTP front end over the map engine.
//!
//! Maps live in memory keyed by content hash. Each session keeps the field
//! and candidates of its most recent query so heatmap and select requests
//! can refer back to it.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use langmap::affordance::{affordance_search, AffordanceRequest, ChatClient, DEFAULT_SYSTEM_PROMPT};
use langmap::geometry::{GridSpec, RotoTranslation};
use langmap::io::{export_heatmap, mapfile, HeatmapFormat, LoadMode, ManifestEntry, TrajectoryReader};
use langmap::map::{build_map_from_records, BuildStats, FeatureMap, MapConfig};
use langmap::query::{multi_object_search, QuerySpec, SearchOptions, SimilarityField, DEFAULT_SNAP_RADIUS, DEFAULT_TEMPERATURE};
use langmap::{EmbeddingProvider, Error, FrameRecord};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::schema::{
    map_id, plan_to, run_query, AffordanceHttpRequest, CandidateOut, ErrorBody, LegsResponse,
    MapInfo, MultiQueryRequest, QueryRequest, SelectRequest, SelectResponse,
};

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    /// Grid used when building from a manifest without an explicit size.
    pub grid_size: usize,
    pub resolution: f64,
    pub snap_radius: usize,
    pub system_prompt: String,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            grid_size: 256,
            resolution: 0.1,
            snap_radius: DEFAULT_SNAP_RADIUS,
            system_prompt: DEFAULT_SYSTEM_PROMPT.to_owned(),
        }
    }
}

struct LastQuery {
    query: QuerySpec,
    candidates: Vec<CandidateOut>,
    field: SimilarityField,
}

pub struct Session {
    pub map_id: String,
    pub map: Arc<FeatureMap>,
    last: Mutex<Option<LastQuery>>,
    agent_cell: Mutex<Option<langmap::Cell>>,
}

impl Session {
    fn new(map_id: String, map: FeatureMap) -> Self {
        Session {
            map_id,
            map: Arc::new(map),
            last: Mutex::new(None),
            agent_cell: Mutex::new(None),
        }
    }

    /// Where the last selection left the agent.
    pub fn agent_cell(&self) -> Option<langmap::Cell> {
        *self.agent_cell.lock().expect("agent lock")
    }
}

pub struct AppState {
    pub provider: Arc<dyn EmbeddingProvider>,
    pub chat: Option<Arc<dyn ChatClient>>,
    pub config: ServiceConfig,
    sessions: RwLock<HashMap<String, Arc<Session>>>,
}

impl AppState {
    pub fn new(
        provider: Arc<dyn EmbeddingProvider>,
        chat: Option<Arc<dyn ChatClient>>,
        config: ServiceConfig,
    ) -> Self {
        AppState {
            provider,
            chat,
            config,
            sessions: RwLock::new(HashMap::new()),
        }
    }

    /// Registers `map`, replacing any session with the same content.
    pub fn insert_map(&self, map: FeatureMap) -> Arc<Session> {
        let id = map_id(&map);
        let session = Arc::new(Session::new(id.clone(), map));
        self.sessions
            .write()
            .expect("sessions lock")
            .insert(id, session.clone());
        session
    }

    pub fn session(&self, id: &str) -> Option<Arc<Session>> {
        self.sessions.read().expect("sessions lock").get(id).cloned()
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, msg: impl Into<String>) -> Self {
        ApiError {
            status,
            body: ErrorBody {
                error: msg.into(),
                raw_response: None,
            },
        }
    }
}

/// Status code for an engine error.
pub fn status_of(e: &Error) -> StatusCode {
    match e {
        Error::Input(_)
        | Error::OutOfBounds { .. }
        | Error::Json(_)
        | Error::Format { .. }
        | Error::Frame { .. } => StatusCode::BAD_REQUEST,
        Error::Lookup(_) => StatusCode::NOT_FOUND,
        Error::Provider { .. }
        | Error::NoGoal
        | Error::NoOrientation
        | Error::NoPath { .. }
        | Error::Snap { .. }
        | Error::Parse { .. } => StatusCode::UNPROCESSABLE_ENTITY,
        Error::Client(_) => StatusCode::BAD_GATEWAY,
        Error::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let raw_response = match &e {
            Error::Parse { raw_response, .. } => Some(raw_response.clone()),
            _ => None,
        };
        ApiError {
            status: status_of(&e),
            body: ErrorBody {
                error: e.to_string(),
                raw_response,
            },
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn parse<T: DeserializeOwned>(body: &[u8]) -> ApiResult<T> {
    serde_json::from_slice(body)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, format!("malformed request: {e}")))
}

fn lookup(state: &AppState, id: &str) -> ApiResult<Arc<Session>> {
    state
        .session(id)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown map {id}")))
}

async fn blocking<T, F>(f: F) -> ApiResult<T>
where
    F: FnOnce() -> ApiResult<T> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
}

/// JSON form of `POST /maps`. Exactly one of `manifest` or `frames` is set.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct BuildRequest {
    /// Path of a JSONL manifest readable by the server.
    #[serde(default)]
    pub manifest: Option<PathBuf>,
    /// Inline manifest entries; relative paths resolve against `base_dir`.
    #[serde(default)]
    pub frames: Option<Vec<ManifestEntry>>,
    #[serde(default)]
    pub base_dir: Option<PathBuf>,
    #[serde(default)]
    pub grid_size: Option<usize>,
    #[serde(default)]
    pub resolution: Option<f64>,
    /// Row-major map origin; identity when absent.
    #[serde(default)]
    pub origin: Option<Vec<f64>>,
    #[serde(default)]
    pub mode: Option<LoadMode>,
}

fn build_from_request(state: &AppState, req: BuildRequest) -> ApiResult<(FeatureMap, BuildStats)> {
    let origin = match &req.origin {
        Some(v) => RotoTranslation::from_row_major(v)?,
        None => RotoTranslation::identity(),
    };
    let spec = GridSpec::new(
        req.grid_size.unwrap_or(state.config.grid_size),
        req.resolution.unwrap_or(state.config.resolution),
        origin,
    )?;
    let mode = req.mode.unwrap_or(LoadMode::Strict);
    let records: Box<dyn Iterator<Item = langmap::Result<FrameRecord>>> =
        match (req.manifest, req.frames) {
            (Some(path), None) => Box::new(TrajectoryReader::open(&path)?),
            (None, Some(frames)) => {
                if frames.is_empty() {
                    return Err(ApiError::new(StatusCode::BAD_REQUEST, "manifest is empty"));
                }
                let base = req.base_dir.unwrap_or_else(|| PathBuf::from("."));
                Box::new(frames.into_iter().map(move |e| e.into_record(&base)))
            }
            _ => {
                return Err(ApiError::new(
                    StatusCode::BAD_REQUEST,
                    "give exactly one of manifest or frames",
                ))
            }
        };
    let records = records.filter(move |r| match (r, mode) {
        (Err(e), LoadMode::Lenient) => {
            log::warn!("skipping frame: {e}");
            false
        }
        _ => true,
    });
    let p = &state.provider;
    let config = MapConfig::new(spec, p.rnr_dim(), p.clip_dim());
    build_map_from_records(records, p.as_ref(), &config).map_err(|e| match e {
        Error::Input(ref m) if m.contains("empty") => ApiError::new(StatusCode::BAD_REQUEST, "manifest is empty"),
        Error::Io(_) | Error::Frame { .. } | Error::Provider { .. } => ApiError {
            status: StatusCode::UNPROCESSABLE_ENTITY,
            body: ErrorBody {
                error: e.to_string(),
                raw_response: None,
            },
        },
        other => other.into(),
    })
}

async fn health() -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok" }))
}

async fn post_map(
    State(state): State<Arc<AppState>>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<Json<MapInfo>> {
    let is_json = headers
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.starts_with("application/json"));
    blocking(move || {
        let (map, stats) = if is_json {
            let req: BuildRequest = parse(&body)?;
            build_from_request(&state, req)?
        } else {
            let map = mapfile::from_bytes(&body)?;
            let stats = BuildStats {
                registered_cells: map.registered_cells() as u64,
                ..BuildStats::default()
            };
            (map, stats)
        };
        let session = state.insert_map(map);
        Ok(Json(MapInfo::new(session.map_id.clone(), &session.map, stats)))
    })
    .await
}

async fn post_query(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Response> {
    let session = lookup(&state, &id)?;
    let req: QueryRequest = parse(&body)?;
    blocking(move || {
        let (resp, field) = run_query(&session.map_id, &session.map, &req, state.provider.as_ref())?;
        let bytes = serde_json::to_vec(&resp).expect("response serializes");
        *session.last.lock().expect("query lock") = Some(LastQuery {
            query: resp.query,
            candidates: resp.candidates,
            field,
        });
        Ok(([(header::CONTENT_TYPE, "application/json")], bytes).into_response())
    })
    .await
}

#[derive(Debug, Deserialize)]
struct HeatmapParams {
    fmt: Option<String>,
}

async fn get_heatmap(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(params): Query<HeatmapParams>,
) -> ApiResult<Response> {
    let session = lookup(&state, &id)?;
    let fmt: HeatmapFormat = params.fmt.as_deref().unwrap_or("pgm").parse()?;
    let last = session.last.lock().expect("query lock");
    let Some(last) = last.as_ref() else {
        return Err(ApiError::new(StatusCode::NOT_FOUND, "no query has been run on this map"));
    };
    let mime = match fmt {
        HeatmapFormat::Csv => "text/csv",
        HeatmapFormat::Pgm => "image/x-portable-graymap",
    };
    Ok(([(header::CONTENT_TYPE, mime)], export_heatmap(&last.field, fmt)).into_response())
}

async fn post_select(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Json<SelectResponse>> {
    let session = lookup(&state, &id)?;
    let req: SelectRequest = parse(&body)?;
    let (query, candidate) = {
        let last = session.last.lock().expect("query lock");
        let found = last.as_ref().and_then(|l| {
            l.candidates
                .iter()
                .find(|c| c.id == req.candidate_id)
                .map(|c| (l.query.clone(), c.clone()))
        });
        found.ok_or_else(|| {
            ApiError::new(
                StatusCode::CONFLICT,
                format!("candidate {} is not from the latest query", req.candidate_id),
            )
        })?
    };
    blocking(move || {
        let plan = plan_to(
            &session.map,
            req.start_cell,
            candidate.cell,
            Some((&query, state.provider.as_ref())),
            state.config.snap_radius,
        )?;
        *session.agent_cell.lock().expect("agent lock") = Some(plan.goal);
        Ok(Json(SelectResponse {
            candidate_id: candidate.id,
            plan,
        }))
    })
    .await
}

fn template(negatives: &[String], temperature: Option<f64>) -> QuerySpec {
    QuerySpec {
        positive: String::new(),
        negatives: negatives
            .iter()
            .map(|n| n.trim().to_owned())
            .filter(|n| !n.is_empty())
            .collect(),
        temperature: temperature.unwrap_or(DEFAULT_TEMPERATURE),
    }
}

async fn post_multi_query(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Json<LegsResponse>> {
    let session = lookup(&state, &id)?;
    let req: MultiQueryRequest = parse(&body)?;
    blocking(move || {
        let legs = multi_object_search(
            &session.map,
            &req.prompt,
            req.start_cell,
            &template(&req.negatives, req.temperature),
            state.provider.as_ref(),
            &SearchOptions {
                snap_radius: state.config.snap_radius,
            },
        )?;
        Ok(Json(LegsResponse { legs }))
    })
    .await
}

async fn post_affordance(State(state): State<Arc<AppState>>, body: Bytes) -> ApiResult<Response> {
    let req: AffordanceHttpRequest = parse(&body)?;
    let session = lookup(&state, &req.map_id)?;
    let Some(chat) = state.chat.clone() else {
        return Err(ApiError::new(
            StatusCode::SERVICE_UNAVAILABLE,
            "no chat endpoint configured",
        ));
    };
    blocking(move || {
        let mut areq = AffordanceRequest::new(req.query.clone());
        if let Some(m) = req.model {
            areq.model = m;
        }
        if let Some(k) = req.max_targets {
            areq.max_targets = k;
        }
        let search = affordance_search(
            &session.map,
            &areq,
            chat.as_ref(),
            &state.config.system_prompt,
            req.start_cell,
            &template(&req.negatives, None),
            state.provider.as_ref(),
            &SearchOptions {
                snap_radius: state.config.snap_radius,
            },
        )?;
        let bytes = serde_json::to_vec(&search).expect("response serializes");
        Ok(([(header::CONTENT_TYPE, "application/json")], bytes).into_response())
    })
    .await
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/maps", post(post_map))
        .route("/maps/{id}/query", post(post_query))
        .route("/maps/{id}/heatmap", get(get_heatmap))
        .route("/maps/{id}/select", post(post_select))
        .route("/maps/{id}/multi_query", post(post_multi_query))
        .route("/affordance", post(post_affordance))
        .with_state(state)
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
    log::info!("shutting down");
}

/// Serves until `shutdown` resolves.
pub async fn serve_with_shutdown<F>(
    listener: tokio::net::TcpListener,
    state: Arc<AppState>,
    shutdown: F,
) -> std::io::Result<()>
where
    F: std::future::Future<Output = ()> + Send + 'static,
{
    axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown)
        .await
}

/// Binds `addr` and serves until SIGINT or SIGTERM.
pub async fn serve(addr: SocketAddr, state: Arc<AppState>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    serve_with_shutdown(listener, state, shutdown_signal()).await
}
