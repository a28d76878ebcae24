//! HTTP API under `/v1`.

use std::sync::Arc;
use std::time::Duration;

use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use lmd_core::benchmark::TaskKind;
use lmd_core::generator::GenerationConfig;
use lmd_core::{validate_layout, Layout};
use lmd_llm::fixtures::demo_mock;
use lmd_llm::{
    make_multilingual_template, oracle_mock, run_benchmark, scripted_failure_mock, start_session,
    BenchmarkRun, HttpLlm, LlmBackend, LlmError, PromptTemplate, SessionStore,
};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::Semaphore;
use tower_http::cors::{AllowOrigin, Any, CorsLayer};
use uuid::Uuid;

use crate::config::AppConfig;
use crate::pipeline::{
    generate_for_record, layout_from_caption, run_pipeline_for_record, PipelineError,
};
use crate::store::{RunRecord, RunStore, StoreError};
use crate::ServiceError;

pub struct AppState {
    pub config: AppConfig,
    pub store: RunStore,
    pub sessions: SessionStore,
    pub template: PromptTemplate,
    mock: Arc<dyn LlmBackend>,
    live: Option<Arc<dyn LlmBackend>>,
    generation_permits: Arc<Semaphore>,
}

impl AppState {
    pub fn new(config: AppConfig) -> Result<Self, ServiceError> {
        config.validate()?;
        config.prepare_data_dir()?;
        let store = RunStore::open(&config.data_dir)?;
        let live: Option<Arc<dyn LlmBackend>> = match HttpLlm::new(config.llm.clone()) {
            Ok(l) => Some(Arc::new(l)),
            Err(e) if config.mock => {
                log::info!("live backend unavailable ({e}); serving the mock only");
                None
            }
            Err(e) => return Err(ServiceError::Config(e.to_string())),
        };
        Ok(Self {
            generation_permits: Arc::new(Semaphore::new(config.parallelism)),
            config,
            store,
            sessions: SessionStore::new(),
            template: PromptTemplate::default(),
            mock: Arc::new(demo_mock()),
            live,
        })
    }

    fn backend(&self, choice: Option<BackendChoice>) -> Result<Arc<dyn LlmBackend>, ApiError> {
        let mock = match choice {
            Some(BackendChoice::Mock) => true,
            Some(BackendChoice::Live) => false,
            None => self.config.mock,
        };
        if mock {
            return Ok(self.mock.clone());
        }
        self.live
            .clone()
            .ok_or_else(|| ApiError::bad_request("live backend is not configured"))
    }

    fn template(&self, translated_example_caption: Option<&str>) -> PromptTemplate {
        match translated_example_caption {
            Some(c) => make_multilingual_template(&self.template, c),
            None => self.template.clone(),
        }
    }
}

type Shared = Arc<AppState>;

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (
            self.status,
            Json(json!({"error": {"code": self.code, "message": self.message}})),
        )
            .into_response()
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::NotFound(_) => Self::new(StatusCode::NOT_FOUND, "not_found", e.to_string()),
            StoreError::InvalidId(_) => {
                Self::new(StatusCode::NOT_FOUND, "not_found", e.to_string())
            }
            _ => Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()),
        }
    }
}

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::LayoutStage { .. } => Self::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                "layout_stage",
                e.to_string(),
            ),
            PipelineError::ImageStage { .. } => Self::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                "image_stage",
                e.to_string(),
            ),
            PipelineError::Store(s) => s.into(),
        }
    }
}

impl From<LlmError> for ApiError {
    fn from(e: LlmError) -> Self {
        match e {
            LlmError::SessionNotFound(_) => {
                Self::new(StatusCode::NOT_FOUND, "not_found", e.to_string())
            }
            LlmError::Precondition(_) | LlmError::Config(_) | LlmError::Template(_) => {
                Self::bad_request(e.to_string())
            }
            _ => Self::new(StatusCode::BAD_GATEWAY, "llm_error", e.to_string()),
        }
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// Rejections from the JSON extractor, reshaped into the error envelope.
struct ApiJson<T>(T);

impl<S, T> axum::extract::FromRequest<S> for ApiJson<T>
where
    T: serde::de::DeserializeOwned,
    S: Send + Sync,
{
    type Rejection = ApiError;

    async fn from_request(req: axum::extract::Request, state: &S) -> Result<Self, Self::Rejection> {
        Json::<T>::from_request(req, state)
            .await
            .map(|Json(v)| ApiJson(v))
            .map_err(|r| ApiError::bad_request(r.body_text()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendChoice {
    Mock,
    Live,
}

/// Per-request generation overrides on top of the server defaults.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerationOverrides {
    pub seed: Option<u64>,
    pub r: Option<f64>,
    pub n_steps: Option<usize>,
    pub attenuation: Option<f64>,
    pub mask_threshold: Option<f64>,
}

impl GenerationOverrides {
    fn apply(&self, base: &GenerationConfig) -> ApiResult<GenerationConfig> {
        let mut c = base.clone();
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.r {
            c.r = v;
        }
        if let Some(v) = self.n_steps {
            c.n_steps = v;
        }
        if let Some(v) = self.attenuation {
            c.attenuation = v;
        }
        if let Some(v) = self.mask_threshold {
            c.mask_threshold = v;
        }
        c.validate()
            .map_err(|e| ApiError::bad_request(e.to_string()))?;
        Ok(c)
    }
}

#[derive(Debug, Deserialize)]
struct LayoutRequest {
    caption: String,
    backend: Option<BackendChoice>,
    /// Translation of the last in-context example's caption.
    translated_example_caption: Option<String>,
    /// Passed through untouched; recorded for clients.
    language_hint: Option<String>,
}

#[derive(Debug, Serialize)]
struct LayoutResponse {
    layout: Layout,
    completion: String,
    validation: lmd_core::ValidationReport,
    language_hint: Option<String>,
}

fn nonempty(text: &str, what: &str) -> ApiResult<()> {
    if text.trim().is_empty() {
        return Err(ApiError::bad_request(format!("{what} must be non-empty")));
    }
    Ok(())
}

async fn post_layout(
    State(app): State<Shared>,
    ApiJson(req): ApiJson<LayoutRequest>,
) -> ApiResult<Json<LayoutResponse>> {
    nonempty(&req.caption, "caption")?;
    let backend = app.backend(req.backend)?;
    let template = app.template(req.translated_example_caption.as_deref());
    let (completion, layout) = layout_from_caption(
        backend.as_ref(),
        &template,
        app.config.llm.prompt_role,
        &req.caption,
        app.config.generation.canvas,
    )
    .await
    .map_err(|m| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "layout_stage", m))?;
    Ok(Json(LayoutResponse {
        validation: validate_layout(&layout),
        layout,
        completion,
        language_hint: req.language_hint,
    }))
}

#[derive(Debug, Deserialize)]
struct SessionRequest {
    caption: String,
    backend: Option<BackendChoice>,
    translated_example_caption: Option<String>,
}

async fn post_session(
    State(app): State<Shared>,
    ApiJson(req): ApiJson<SessionRequest>,
) -> ApiResult<(StatusCode, Json<lmd_llm::DialogSession>)> {
    nonempty(&req.caption, "caption")?;
    let backend = app.backend(req.backend)?;
    let template = app.template(req.translated_example_caption.as_deref());
    let session = start_session(
        backend.as_ref(),
        &template,
        &req.caption,
        app.config.llm.prompt_role,
        app.config.generation.canvas,
    )
    .await?;
    app.sessions.insert(session.clone());
    Ok((StatusCode::CREATED, Json(session)))
}

#[derive(Debug, Deserialize)]
struct TurnRequest {
    instruction: String,
    backend: Option<BackendChoice>,
}

fn session_id(id: &str) -> ApiResult<Uuid> {
    Uuid::parse_str(id).map_err(|_| {
        ApiError::new(
            StatusCode::NOT_FOUND,
            "not_found",
            format!("unknown session {id}"),
        )
    })
}

async fn post_turn(
    State(app): State<Shared>,
    Path(id): Path<String>,
    ApiJson(req): ApiJson<TurnRequest>,
) -> ApiResult<Json<lmd_llm::DialogSession>> {
    let id = session_id(&id)?;
    nonempty(&req.instruction, "instruction")?;
    let backend = app.backend(req.backend)?;
    Ok(Json(
        app.sessions
            .turn(backend.as_ref(), &id, &req.instruction)
            .await?,
    ))
}

async fn get_session(
    State(app): State<Shared>,
    Path(id): Path<String>,
) -> ApiResult<Json<lmd_llm::DialogSession>> {
    Ok(Json(app.sessions.get(&session_id(&id)?).await?))
}

#[derive(Debug, Default, Deserialize)]
struct AsyncQuery {
    #[serde(default, rename = "async")]
    run_async: bool,
}

#[derive(Debug, Deserialize)]
struct GenerateRequest {
    layout: Layout,
    #[serde(default)]
    config: GenerationOverrides,
}

#[derive(Debug, Deserialize)]
struct PipelineRequest {
    caption: String,
    backend: Option<BackendChoice>,
    translated_example_caption: Option<String>,
    #[serde(default)]
    config: GenerationOverrides,
}

fn accepted(record: &RunRecord) -> Response {
    (
        StatusCode::ACCEPTED,
        Json(json!({"id": record.id, "status": record.status})),
    )
        .into_response()
}

/// Answers 202 for async requests, otherwise waits up to the configured
/// timeout for the spawned run.
async fn finish(
    app: &AppState,
    q: AsyncQuery,
    record: &RunRecord,
    job: tokio::task::JoinHandle<Result<crate::RunOutput, PipelineError>>,
) -> ApiResult<Response> {
    if q.run_async {
        return Ok(accepted(record));
    }
    let limit = Duration::from_secs(app.config.sync_timeout_secs);
    match tokio::time::timeout(limit, job).await {
        Ok(joined) => {
            let out = joined.map_err(|e| {
                ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string())
            })??;
            Ok(Json(out.record).into_response())
        }
        Err(_) => Err(ApiError::new(
            StatusCode::GATEWAY_TIMEOUT,
            "timeout",
            format!(
                "run {} still in progress; poll /v1/runs/{}",
                record.id, record.id
            ),
        )),
    }
}

async fn post_generate(
    State(app): State<Shared>,
    Query(q): Query<AsyncQuery>,
    ApiJson(req): ApiJson<GenerateRequest>,
) -> ApiResult<Response> {
    let config = req.config.apply(&app.config.generation)?;
    let record = RunRecord::new(None, config);
    app.store.store_run(&record)?;
    let job = {
        let (app, record) = (app.clone(), record.clone());
        async move {
            let _permit = app.generation_permits.clone().acquire_owned().await;
            let store = app.store.clone();
            tokio::task::spawn_blocking(move || generate_for_record(&store, record, req.layout))
                .await
                .expect("generation worker panicked")
        }
    };
    finish(&app, q, &record, tokio::spawn(job)).await
}

async fn post_pipeline(
    State(app): State<Shared>,
    Query(q): Query<AsyncQuery>,
    ApiJson(req): ApiJson<PipelineRequest>,
) -> ApiResult<Response> {
    nonempty(&req.caption, "caption")?;
    let config = req.config.apply(&app.config.generation)?;
    let backend = app.backend(req.backend)?;
    let template = app.template(req.translated_example_caption.as_deref());
    let record = RunRecord::new(Some(req.caption.clone()), config);
    app.store.store_run(&record)?;
    let job = {
        let (app, record) = (app.clone(), record.clone());
        async move {
            let _permit = app.generation_permits.clone().acquire_owned().await;
            run_pipeline_for_record(
                backend.as_ref(),
                &template,
                app.config.llm.prompt_role,
                &app.store,
                record,
            )
            .await
        }
    };
    finish(&app, q, &record, tokio::spawn(job)).await
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
enum BenchmarkBackend {
    /// Answers every task correctly.
    Mock,
    /// Fails 7 plural-box numeracy tasks and 2 spatial tasks.
    Scripted,
    Live,
}

#[derive(Debug, Deserialize)]
struct BenchmarkRequest {
    kind: Option<String>,
    #[serde(default = "default_n")]
    n: usize,
    #[serde(default)]
    seed: u64,
    #[serde(default = "default_benchmark_backend")]
    backend: BenchmarkBackend,
}

fn default_n() -> usize {
    100
}

fn default_benchmark_backend() -> BenchmarkBackend {
    BenchmarkBackend::Mock
}

async fn post_benchmark(
    State(app): State<Shared>,
    ApiJson(req): ApiJson<BenchmarkRequest>,
) -> ApiResult<Json<serde_json::Value>> {
    let kinds = match req.kind.as_deref() {
        None | Some("all") => TaskKind::ALL.to_vec(),
        Some(k) => vec![k.parse::<TaskKind>().map_err(ApiError::bad_request)?],
    };
    let run = BenchmarkRun {
        kinds,
        n: req.n,
        seed: req.seed,
        parallelism: app.config.parallelism,
        role: app.config.llm.prompt_role,
    };
    let tasks = run.tasks();
    let backend: Arc<dyn LlmBackend> = match req.backend {
        BenchmarkBackend::Mock => Arc::new(oracle_mock(&tasks)),
        BenchmarkBackend::Scripted => Arc::new(scripted_failure_mock(&tasks, 7, 2)?),
        BenchmarkBackend::Live => app.backend(Some(BackendChoice::Live))?,
    };
    let report = run_benchmark(backend, &app.template, &run).await?;
    Ok(Json(json!({"report": report, "table": report.to_table()})))
}

async fn get_run(State(app): State<Shared>, Path(id): Path<String>) -> ApiResult<Json<RunRecord>> {
    Ok(Json(app.store.load_run(&id)?))
}

async fn get_artifact(
    app: &AppState,
    id: &str,
    name: &str,
    content_type: &'static str,
) -> ApiResult<Response> {
    app.store.load_run(id)?;
    let bytes = app.store.read_artifact(id, name)?;
    Ok(([(header::CONTENT_TYPE, content_type)], bytes).into_response())
}

async fn get_image(State(app): State<Shared>, Path(id): Path<String>) -> ApiResult<Response> {
    get_artifact(&app, &id, "image.png", "image/png").await
}

async fn get_svg(State(app): State<Shared>, Path(id): Path<String>) -> ApiResult<Response> {
    get_artifact(&app, &id, "layout.svg", "image/svg+xml").await
}

async fn not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint")
}

fn cors(origins: &[String]) -> CorsLayer {
    let layer = CorsLayer::new().allow_methods(Any).allow_headers(Any);
    if origins.is_empty() {
        return layer.allow_origin(Any);
    }
    let list: Vec<HeaderValue> = origins.iter().filter_map(|o| o.parse().ok()).collect();
    layer.allow_origin(AllowOrigin::list(list))
}

pub fn router(state: AppState) -> Router {
    let cors = cors(&state.config.cors_origins);
    Router::new()
        .route("/v1/layout", post(post_layout))
        .route("/v1/sessions", post(post_session))
        .route("/v1/sessions/{id}", get(get_session))
        .route("/v1/sessions/{id}/turn", post(post_turn))
        .route("/v1/generate", post(post_generate))
        .route("/v1/pipeline", post(post_pipeline))
        .route("/v1/benchmark/run", post(post_benchmark))
        .route("/v1/runs/{id}", get(get_run))
        .route("/v1/runs/{id}/image.png", get(get_image))
        .route("/v1/runs/{id}/layout.svg", get(get_svg))
        .fallback(not_found)
        .layer(cors)
        .with_state(Arc::new(state))
}

/// Binds and serves until Ctrl-C; in-flight requests finish first.
pub async fn serve(config: AppConfig) -> Result<(), ServiceError> {
    let bind = config.bind.clone();
    let app = router(AppState::new(config)?);
    let listener = tokio::net::TcpListener::bind(&bind)
        .await
        .map_err(|e| ServiceError::Bind(format!("{bind}: {e}")))?;
    log::info!("listening on {bind}");
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| ServiceError::Bind(e.to_string()))
}
