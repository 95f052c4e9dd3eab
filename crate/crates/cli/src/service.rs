//! HTTP query service over loaded canonical models.

use std::collections::HashMap;
use std::path::Path as FsPath;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use boxcf::{presort_dimensions, read_canonical, CfQuery, EnsembleModel, Explainer, PresortIndex, SearchOptions};
use serde::Deserialize;
use serde_json::{json, Value};
use tokio::sync::Semaphore;

use crate::args::{self, QueryFlags};
use crate::render;
use crate::request::{answer_cf, answer_projection, answer_set, CfRequest, Reply};

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    /// Time budget of one search.
    pub budget: Duration,
    /// Search workers of a request that does not ask for a count.
    pub default_workers: usize,
    /// Worker threads shared by all running searches.
    pub pool_size: usize,
    pub max_body_bytes: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            budget: Duration::from_secs(30),
            default_workers: 1,
            pool_size: std::thread::available_parallelism().map_or(4, |n| n.get()),
            max_body_bytes: 512 << 20,
        }
    }
}

pub struct Session {
    pub model: EnsembleModel,
    pub index: PresortIndex,
    /// Seconds since the Unix epoch.
    pub created_at: u64,
}

impl Session {
    pub fn new(model: EnsembleModel) -> Session {
        let index = presort_dimensions(&model);
        let created_at = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_secs());
        Session {
            model,
            index,
            created_at,
        }
    }

    fn metadata(&self, id: &str) -> Value {
        let mut body = render::model_summary(&self.model);
        body["model_id"] = json!(id);
        body["created_at"] = json!(self.created_at);
        body
    }
}

#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

struct Inner {
    models: RwLock<HashMap<String, Arc<Session>>>,
    next_id: AtomicU64,
    config: ServiceConfig,
    pool: Arc<Semaphore>,
}

impl AppState {
    pub fn new(config: ServiceConfig) -> AppState {
        let permits = config.pool_size.max(1);
        AppState {
            inner: Arc::new(Inner {
                models: RwLock::new(HashMap::new()),
                next_id: AtomicU64::new(1),
                pool: Arc::new(Semaphore::new(permits)),
                config,
            }),
        }
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.inner.config
    }

    /// Registers a model under a fresh id.
    pub fn insert(&self, model: EnsembleModel) -> String {
        let id = format!("m{}", self.inner.next_id.fetch_add(1, Ordering::Relaxed));
        self.insert_with_id(id.clone(), model);
        id
    }

    pub fn insert_with_id(&self, id: String, model: EnsembleModel) {
        let session = Arc::new(Session::new(model));
        self.inner
            .models
            .write()
            .expect("model table lock poisoned")
            .insert(id, session);
    }

    pub fn get(&self, id: &str) -> Option<Arc<Session>> {
        self.inner
            .models
            .read()
            .expect("model table lock poisoned")
            .get(id)
            .cloned()
    }

    /// Loads every `*.json` canonical model of `dir`, keyed by file stem.
    pub fn load_dir(&self, dir: &FsPath) -> anyhow::Result<Vec<String>> {
        let mut ids = Vec::new();
        let mut paths: Vec<_> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "json"))
            .collect();
        paths.sort();
        for path in paths {
            let text = std::fs::read_to_string(&path)?;
            let model = read_canonical(&text)
                .map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
            let id = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            self.insert_with_id(id.clone(), model);
            ids.push(id);
        }
        Ok(ids)
    }

    fn base_options(&self) -> SearchOptions {
        SearchOptions {
            workers: self.inner.config.default_workers.max(1),
            deadline: Some(Instant::now() + self.inner.config.budget),
            ..SearchOptions::default()
        }
    }
}

pub fn router(state: AppState) -> Router {
    let limit = state.config().max_body_bytes;
    Router::new()
        .route("/models", post(post_model))
        .route("/models/{id}", get(get_model))
        .route("/models/{id}/cf", post(post_cf))
        .route("/models/{id}/cfset", post(post_cfset))
        .route("/models/{id}/evaluate", post(post_evaluate))
        .route("/models/{id}/projection", get(get_projection))
        .layer(DefaultBodyLimit::max(limit))
        .with_state(state)
}

fn respond(reply: Reply) -> Response {
    let status = StatusCode::from_u16(reply.http_status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
    json_response(status, &reply.body())
}

fn json_response(status: StatusCode, body: &Value) -> Response {
    (
        status,
        [(axum::http::header::CONTENT_TYPE, "application/json")],
        render::to_line(body),
    )
        .into_response()
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    json_response(status, &json!({"status": "error", "message": message.into()}))
}

fn unknown_model(id: &str) -> Response {
    error(StatusCode::NOT_FOUND, format!("unknown model `{id}`"))
}

async fn post_model(State(state): State<AppState>, body: Bytes) -> Response {
    let text = match std::str::from_utf8(&body) {
        Ok(t) => t,
        Err(_) => return error(StatusCode::BAD_REQUEST, "model body is not UTF-8"),
    };
    let model = match read_canonical(text) {
        Ok(m) => m,
        Err(e) => return error(StatusCode::BAD_REQUEST, e.to_string()),
    };
    let id = state.insert(model);
    let session = state.get(&id).expect("model just inserted");
    json_response(StatusCode::CREATED, &session.metadata(&id))
}

async fn get_model(State(state): State<AppState>, Path(id): Path<String>) -> Response {
    match state.get(&id) {
        Some(session) => json_response(StatusCode::OK, &session.metadata(&id)),
        None => unknown_model(&id),
    }
}

/// Runs a search on the blocking pool once enough worker permits are free.
async fn run_search<F>(state: &AppState, session: Arc<Session>, workers: usize, f: F) -> Response
where
    F: FnOnce(&Explainer, SearchOptions) -> Reply + Send + 'static,
{
    let permits = workers.clamp(1, state.config().pool_size.max(1)) as u32;
    let Ok(_permit) = state.inner.pool.clone().acquire_many_owned(permits).await else {
        return error(StatusCode::SERVICE_UNAVAILABLE, "worker pool closed");
    };
    let base = state.base_options();
    let result = tokio::task::spawn_blocking(move || {
        let explainer = Explainer::new(&session.model, &session.index);
        f(&explainer, base)
    })
    .await;
    match result {
        Ok(reply) => respond(reply),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, format!("search task failed: {e}")),
    }
}

fn parse_request(body: &[u8]) -> Result<CfRequest, Response> {
    serde_json::from_slice(body).map_err(|e| error(StatusCode::BAD_REQUEST, format!("malformed query: {e}")))
}

async fn post_cf(State(state): State<AppState>, Path(id): Path<String>, body: Bytes) -> Response {
    let Some(session) = state.get(&id) else {
        return unknown_model(&id);
    };
    let request = match parse_request(&body) {
        Ok(r) => r,
        Err(resp) => return resp,
    };
    let workers = request.workers.unwrap_or(state.config().default_workers);
    run_search(&state, session, workers, move |ex, base| answer_cf(ex, &request, &base)).await
}

async fn post_cfset(State(state): State<AppState>, Path(id): Path<String>, body: Bytes) -> Response {
    let Some(session) = state.get(&id) else {
        return unknown_model(&id);
    };
    let request = match parse_request(&body) {
        Ok(r) => r,
        Err(resp) => return resp,
    };
    if request.query.radius.is_none() {
        return error(StatusCode::BAD_REQUEST, "counterfactual sets need a radius");
    }
    run_search(&state, session, 1, move |ex, base| answer_set(ex, &request, &base)).await
}

#[derive(Deserialize)]
struct EvaluateBody {
    x: Vec<f64>,
}

async fn post_evaluate(State(state): State<AppState>, Path(id): Path<String>, body: Bytes) -> Response {
    let Some(session) = state.get(&id) else {
        return unknown_model(&id);
    };
    let body: EvaluateBody = match serde_json::from_slice(&body) {
        Ok(b) => b,
        Err(e) => return error(StatusCode::BAD_REQUEST, format!("malformed body: {e}")),
    };
    match session.model.evaluate(&body.x) {
        Ok(p) => json_response(StatusCode::OK, &render::prediction(&p)),
        Err(e) => error(StatusCode::BAD_REQUEST, e.to_string()),
    }
}

/// Query-string form of a projection request:
/// `dims=i,j&radius=r&x=a,b,..` plus one of `target_class=c`,
/// `target_interval=lo:hi` or `threshold=eps[:side]`, and optionally
/// `fixed=d,..`, `weights=w,..` and `epsilon=e`.
fn projection_request(params: &HashMap<String, String>, dims: usize) -> Result<(CfRequest, (usize, usize)), String> {
    let get = |k: &str| params.get(k).map(String::as_str);
    let plane = args::parse_dims(get("dims").ok_or("missing `dims`")?)?;
    let radius: f64 = get("radius")
        .ok_or("missing `radius`")?
        .parse()
        .map_err(|_| "`radius` is not a number")?;
    let mut flags = QueryFlags {
        x: Some(args::parse_point(get("x").ok_or("missing `x`")?)?),
        radius: Some(radius),
        ..QueryFlags::default()
    };
    if let Some(c) = get("target_class") {
        flags.target_class = Some(c.parse().map_err(|_| format!("bad class `{c}`"))?);
    }
    if let Some(i) = get("target_interval") {
        flags.target_interval = Some(args::parse_interval(i)?);
    }
    if let Some(t) = get("threshold") {
        flags.threshold = Some(args::parse_threshold(t)?);
    }
    if let Some(e) = get("epsilon") {
        flags.epsilon = Some(e.parse().map_err(|_| format!("bad tolerance `{e}`"))?);
    }
    if let Some(f) = get("fixed").filter(|f| !f.is_empty()) {
        flags.fixed_dims = f
            .split(',')
            .map(|d| d.trim().parse().map_err(|_| format!("bad dimension `{d}`")))
            .collect::<Result<_, _>>()?;
    }
    if let Some(w) = get("weights") {
        flags.weights = Some(args::parse_point(w)?);
    }
    let query: CfQuery = flags.build(None, dims)?;
    Ok((CfRequest::new(query), plane))
}

async fn get_projection(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(params): Query<HashMap<String, String>>,
) -> Response {
    let Some(session) = state.get(&id) else {
        return unknown_model(&id);
    };
    let (request, plane) = match projection_request(&params, session.model.dims) {
        Ok(r) => r,
        Err(m) => return error(StatusCode::BAD_REQUEST, m),
    };
    run_search(&state, session, 1, move |ex, base| {
        answer_projection(ex, &request, &base, plane)
    })
    .await
}
