//! JSON-over-HTTP service over a runs directory.
//!
//! Everything except in-flight progress is read back from disk on each
//! request, so any number the service returns can be reproduced from the
//! run directory alone. Runs started here execute on blocking threads; at
//! most one synthesis per run id is active at a time.

use std::collections::{BTreeMap, HashMap};
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderName, HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use medmsa::intervene::{intervene, InterventionRequest};
use medmsa::ppl::Edit;
use medmsa::runner::{execute_run_as, RunRequest};
use medmsa::store::{RunRecord, RunStore, SCHEMA_VERSION};
use medmsa::synthesis::{CandidateStage, ProgressSink, SynthesisConfig, Vignette};
use serde::Deserialize;
use serde_json::{json, Value};
use tower_http::cors::{AllowOrigin, CorsLayer};
use tower_http::services::ServeDir;

use crate::backend::{BackendKind, ClockMode, LmOptions};
use crate::error::{ApiError, ErrorCode};
use crate::views::{self, ModelView};

pub const SCHEMA_HEADER: &str = "x-medmsa-schema-version";

#[derive(Debug, Clone, Default)]
pub struct ServiceConfig {
    /// Runs directory.
    pub root: PathBuf,
    pub lm: LmOptions,
    /// Where `POST /runs` looks up vignettes given by id.
    pub vignettes: Option<PathBuf>,
    /// Canonicalization overrides used when a request brings none.
    pub overrides: BTreeMap<String, String>,
    pub cors_origins: Vec<String>,
    /// Built web UI, served under `/ui`.
    pub static_dir: Option<PathBuf>,
    pub clock: ClockMode,
}

/// Per-candidate stages of an active run; stages only move forward.
#[derive(Debug)]
pub struct RunProgress {
    k: usize,
    stages: Mutex<Vec<CandidateStage>>,
}

impl RunProgress {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            stages: Mutex::new(vec![CandidateStage::Pending; k]),
        }
    }

    pub fn snapshot(&self) -> Vec<CandidateStage> {
        self.stages.lock().expect("progress lock").clone()
    }
}

impl ProgressSink for RunProgress {
    fn candidate(&self, index: usize, stage: CandidateStage) {
        let mut stages = self.stages.lock().expect("progress lock");
        if let Some(slot) = index.checked_sub(1).and_then(|i| stages.get_mut(i)) {
            if stage.ordinal() >= slot.ordinal() {
                *slot = stage;
            }
        }
    }
}

pub struct AppState {
    pub store: RunStore,
    pub config: ServiceConfig,
    active: Mutex<HashMap<String, Arc<RunProgress>>>,
    failed: Mutex<HashMap<String, ApiError>>,
}

impl AppState {
    pub fn new(config: ServiceConfig) -> Arc<Self> {
        Arc::new(Self {
            store: RunStore::new(&config.root),
            config,
            active: Mutex::new(HashMap::new()),
            failed: Mutex::new(HashMap::new()),
        })
    }

    fn progress(&self, run_id: &str) -> Option<Arc<RunProgress>> {
        self.active.lock().expect("active lock").get(run_id).cloned()
    }

    fn ensure_idle(&self, run_id: &str) -> Result<(), ApiError> {
        if self.progress(run_id).is_some() {
            return Err(ApiError::new(ErrorCode::RunInProgress, format!("run {run_id} is still running")));
        }
        Ok(())
    }
}

type Shared = Arc<AppState>;
type ApiResult<T = Response> = Result<T, ApiError>;

/// Runs `f` on the blocking pool; store access and inference are
/// synchronous.
async fn blocking<T, F>(f: F) -> ApiResult<T>
where
    F: FnOnce() -> ApiResult<T> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(format!("worker failed: {e}")))?
}

fn load(state: &Shared, run_id: &str) -> ApiResult<RunRecord> {
    state.ensure_idle(run_id)?;
    Ok(state.store.load(run_id)?)
}

fn ok(body: Value) -> Response {
    Json(body).into_response()
}

fn json_body<T>(body: Result<Json<T>, JsonRejection>, data_code: ErrorCode) -> ApiResult<T> {
    match body {
        Ok(Json(v)) => Ok(v),
        Err(JsonRejection::JsonDataError(e)) => Err(ApiError::new(data_code, e.body_text())),
        Err(e) => Err(ApiError::bad_request(e.body_text())),
    }
}

fn query_params<T>(q: Result<Query<T>, QueryRejection>) -> ApiResult<T> {
    q.map(|Query(v)| v).map_err(|e| ApiError::bad_request(e.body_text()))
}

pub fn router(state: Shared) -> Router {
    let mut app = Router::new()
        .route("/health", get(health))
        .route("/runs", get(list_runs).post(create_run))
        .route("/runs/{id}", get(run_status))
        .route("/runs/{id}/models", get(list_models))
        .route("/runs/{id}/models/{model}/source", get(model_source))
        .route("/runs/{id}/models/{model}/edits", post(create_edit))
        .route("/runs/{id}/differential", get(differential))
        .route("/runs/{id}/interventions", get(list_interventions))
        .fallback(|| async { ApiError::new(ErrorCode::NotFound, "no such endpoint") });
    if let Some(dir) = &state.config.static_dir {
        app = app.nest_service("/ui", ServeDir::new(dir));
    }
    if !state.config.cors_origins.is_empty() {
        let origins: Vec<HeaderValue> = state
            .config
            .cors_origins
            .iter()
            .filter_map(|o| HeaderValue::from_str(o).ok())
            .collect();
        app = app.layer(
            CorsLayer::new()
                .allow_origin(AllowOrigin::list(origins))
                .allow_methods([Method::GET, Method::POST])
                .allow_headers([header::CONTENT_TYPE]),
        );
    }
    app.layer(axum::middleware::map_response(stamp_schema)).with_state(state)
}

async fn stamp_schema(mut response: Response) -> Response {
    response
        .headers_mut()
        .insert(HeaderName::from_static(SCHEMA_HEADER), HeaderValue::from(SCHEMA_VERSION));
    response
}

async fn health() -> Response {
    ok(json!({
        "schema_version": SCHEMA_VERSION,
        "status": "ok",
        "version": env!("CARGO_PKG_VERSION"),
    }))
}

async fn list_runs(State(state): State<Shared>) -> ApiResult {
    let active: Vec<String> = {
        let mut ids: Vec<String> = state.active.lock().expect("active lock").keys().cloned().collect();
        ids.sort();
        ids
    };
    let failed: BTreeMap<String, ApiError> =
        state.failed.lock().expect("failed lock").iter().map(|(k, v)| (k.clone(), v.clone())).collect();
    let s = state.clone();
    let listing = blocking(move || Ok(s.store.list()?)).await?;
    let runs: Vec<Value> = listing
        .runs
        .iter()
        .map(|m| {
            json!({
                "run_id": m.run_id,
                "vignette_id": m.vignette.id,
                "k": m.k,
                "seed": m.seed,
                "lm_backend": m.lm_backend,
                "n_valid": m.n_valid,
                "no_valid_models": m.no_valid_models,
                "started_ms": m.started_ms,
                "finished_ms": m.finished_ms,
            })
        })
        .collect();
    Ok(ok(json!({
        "schema_version": SCHEMA_VERSION,
        "runs": runs,
        "active": active,
        "failed": failed,
        "incomplete": listing.incomplete,
        "warnings": listing.warnings,
    })))
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum VignetteInput {
    Id(String),
    Inline(Vignette),
}

fn default_k() -> usize {
    20
}

fn default_seed() -> u64 {
    7
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateRun {
    vignette: VignetteInput,
    /// Replaces the vignette's questions.
    #[serde(default)]
    queries: Option<Vec<String>>,
    #[serde(default = "default_k")]
    k: usize,
    #[serde(default = "default_seed")]
    seed: u64,
    #[serde(default)]
    backend: BackendKind,
    #[serde(default)]
    config: Option<SynthesisConfig>,
    #[serde(default)]
    target_samples: Option<u64>,
    #[serde(default)]
    overrides: Option<BTreeMap<String, String>>,
}

fn resolve_vignette(state: &AppState, input: VignetteInput, queries: Option<Vec<String>>) -> ApiResult<Vignette> {
    let v = match input {
        VignetteInput::Inline(v) => v,
        VignetteInput::Id(id) => {
            let dir = state
                .config
                .vignettes
                .as_ref()
                .ok_or_else(|| ApiError::bad_request("no vignette directory configured; send the vignette inline"))?;
            let ok_id = !id.is_empty() && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_');
            let path = dir.join(format!("{id}.json"));
            if !ok_id || !path.is_file() {
                return Err(ApiError::bad_request(format!("unknown vignette `{id}`")));
            }
            Vignette::load(&path).map_err(|e| ApiError::bad_request(e.to_string()))?
        }
    };
    match queries {
        Some(q) => Vignette::new(v.id, v.sentences, q).map_err(|e| ApiError::bad_request(e.to_string())),
        None => Ok(v),
    }
}

async fn create_run(State(state): State<Shared>, body: Result<Json<CreateRun>, JsonRejection>) -> ApiResult {
    let body = json_body(body, ErrorCode::BadRequest)?;
    if body.k == 0 {
        return Err(ApiError::bad_request("k must be at least 1"));
    }
    let vignette = resolve_vignette(&state, body.vignette, body.queries)?;
    let mut config = body.config.unwrap_or_default();
    if let Some(n) = body.target_samples {
        if n == 0 {
            return Err(ApiError::bad_request("target_samples must be at least 1"));
        }
        config.target_samples = n;
    }
    let request = RunRequest {
        vignette,
        k: body.k,
        seed: body.seed,
        config,
        overrides: body.overrides.unwrap_or_else(|| state.config.overrides.clone()),
    };
    let clock = state.config.clock.clock(body.backend);
    let run_id = request.run_id(&clock);
    let progress = Arc::new(RunProgress::new(request.k));
    {
        let mut active = state.active.lock().expect("active lock");
        if active.contains_key(&run_id) {
            return Err(ApiError::new(ErrorCode::RunInProgress, format!("run {run_id} is already running")));
        }
        if state.store.run_dir(&run_id).exists() {
            return Err(ApiError::new(ErrorCode::RunExists, format!("run {run_id} already exists"))
                .with_details(json!({ "run_id": run_id })));
        }
        active.insert(run_id.clone(), progress.clone());
    }
    // The blocking HTTP client owns a runtime, so it is built (and later
    // dropped) on the blocking pool, never on an async worker.
    let lm_options = state.config.lm.clone();
    let backend = body.backend;
    let lm = match blocking(move || lm_options.build(backend)).await {
        Ok(lm) => lm,
        Err(e) => {
            state.active.lock().expect("active lock").remove(&run_id);
            return Err(e);
        }
    };
    state.failed.lock().expect("failed lock").remove(&run_id);
    tracing::info!(%run_id, vignette = %request.vignette.id, k = request.k, "run started");

    let worker = state.clone();
    let id = run_id.clone();
    tokio::task::spawn_blocking(move || {
        let outcome = execute_run_as(id.clone(), &request, lm.as_ref(), &clock, &worker.store, progress.as_ref());
        if let Err(e) = outcome {
            tracing::warn!(run_id = %id, error = %e, "run failed");
            worker.failed.lock().expect("failed lock").insert(id.clone(), e.into());
        } else {
            tracing::info!(run_id = %id, "run complete");
        }
        worker.active.lock().expect("active lock").remove(&id);
    });

    Ok((
        StatusCode::ACCEPTED,
        Json(json!({ "schema_version": SCHEMA_VERSION, "run_id": run_id, "state": "running" })),
    )
        .into_response())
}

fn stage_json(index: usize, stage: CandidateStage) -> Value {
    let mut v = serde_json::to_value(stage).unwrap_or(Value::Null);
    if let Value::Object(m) = &mut v {
        m.insert("index".into(), index.into());
    }
    v
}

async fn run_status(State(state): State<Shared>, Path(run_id): Path<String>) -> ApiResult {
    if let Some(p) = state.progress(&run_id) {
        let candidates: Vec<Value> =
            p.snapshot().into_iter().enumerate().map(|(i, s)| stage_json(i + 1, s)).collect();
        return Ok(ok(json!({
            "schema_version": SCHEMA_VERSION,
            "run_id": run_id,
            "state": "running",
            "k": p.k,
            "candidates": candidates,
        })));
    }
    if let Some(err) = state.failed.lock().expect("failed lock").get(&run_id) {
        return Ok(ok(json!({
            "schema_version": SCHEMA_VERSION,
            "run_id": run_id,
            "state": "failed",
            "error": err,
        })));
    }
    let s = state.clone();
    let id = run_id.clone();
    let manifest = blocking(move || Ok(s.store.manifest(&id)?)).await?;
    let candidates: Vec<Value> = manifest
        .candidates
        .iter()
        .map(|c| stage_json(c.index, CandidateStage::Done { status: c.status }))
        .collect();
    Ok(ok(json!({
        "schema_version": SCHEMA_VERSION,
        "run_id": run_id,
        "state": "complete",
        "k": manifest.k,
        "candidates": candidates,
        "manifest": manifest,
    })))
}

async fn list_models(State(state): State<Shared>, Path(run_id): Path<String>) -> ApiResult {
    blocking(move || {
        let record = load(&state, &run_id)?;
        let models: Vec<ModelView> = record.run.candidates.iter().map(ModelView::of).collect();
        let versions = views::versions(&state.store, &run_id)?;
        Ok(ok(json!({
            "schema_version": SCHEMA_VERSION,
            "run_id": run_id,
            "models": models,
            "versions": versions,
        })))
    })
    .await
}

async fn model_source(State(state): State<Shared>, Path((run_id, model)): Path<(String, String)>) -> ApiResult {
    blocking(move || {
        let record = load(&state, &run_id)?;
        let model = views::parse_model_ref(&model)?;
        let source = views::model_source(&state.store, &record, &model)?;
        Ok(([(header::CONTENT_TYPE, "text/plain; charset=utf-8")], source).into_response())
    })
    .await
}

#[derive(Debug, Deserialize)]
struct DifferentialParams {
    query: Option<String>,
    top: Option<usize>,
}

async fn differential(
    State(state): State<Shared>,
    Path(run_id): Path<String>,
    params: Result<Query<DifferentialParams>, QueryRejection>,
) -> ApiResult {
    let params = query_params(params)?;
    blocking(move || {
        let record = load(&state, &run_id)?;
        let top = params.top.unwrap_or(10);
        let distributions = views::differentials(&record, params.query.as_deref(), top)?;
        Ok(ok(json!({
            "schema_version": SCHEMA_VERSION,
            "run_id": run_id,
            "top": top,
            "distributions": distributions,
        })))
    })
    .await
}

#[derive(Debug, Deserialize)]
struct EditParams {
    seed: Option<u64>,
}

async fn create_edit(
    State(state): State<Shared>,
    Path((run_id, model)): Path<(String, String)>,
    params: Result<Query<EditParams>, QueryRejection>,
    body: Result<Json<Edit>, JsonRejection>,
) -> ApiResult {
    let params = query_params(params)?;
    let edit = json_body(body, ErrorCode::EditInvalid)?;
    let model = views::parse_model_ref(&model)?;
    blocking(move || {
        state.ensure_idle(&run_id)?;
        let manifest = state.store.manifest(&run_id)?;
        // replayed runs keep replay semantics for their interventions
        let backend = if manifest.lm_backend.starts_with("replay") { BackendKind::Replay } else { BackendKind::Http };
        let clock = state.config.clock.clock(backend);
        let request = InterventionRequest {
            model,
            edit,
            seed: params.seed,
            lm: None,
        };
        let result = intervene(&state.store, &run_id, &request, &clock)?;
        tracing::info!(%run_id, version = %result.new_model_version_id, "intervention stored");
        Ok(ok(serde_json::to_value(&result).map_err(|e| ApiError::internal(e.to_string()))?))
    })
    .await
}

async fn list_interventions(State(state): State<Shared>, Path(run_id): Path<String>) -> ApiResult {
    blocking(move || {
        state.ensure_idle(&run_id)?;
        state.store.manifest(&run_id)?;
        let interventions = state.store.list_interventions(&run_id)?;
        Ok(ok(json!({
            "schema_version": SCHEMA_VERSION,
            "run_id": run_id,
            "interventions": interventions,
        })))
    })
    .await
}

/// Serves until ctrl-c.
pub async fn serve(state: Shared, listener: tokio::net::TcpListener) -> std::io::Result<()> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

/// Starts the service on its own runtime thread and returns the bound
/// address. Used by tests and for embedding.
pub fn spawn(config: ServiceConfig, addr: SocketAddr) -> std::io::Result<SocketAddr> {
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    let listener = runtime.block_on(tokio::net::TcpListener::bind(addr))?;
    let bound = listener.local_addr()?;
    let state = AppState::new(config);
    std::thread::spawn(move || {
        if let Err(e) = runtime.block_on(serve(state, listener)) {
            tracing::error!(error = %e, "service stopped");
        }
    });
    Ok(bound)
}
