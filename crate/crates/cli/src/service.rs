//! HTTP JSON API over the pipeline and its individual stages.

use std::future::Future;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Query as UrlQuery, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use guardrail_core::backends::BackendError;
use guardrail_core::customizer::{run_chain, ChainError};
use guardrail_core::grounding::{ground_query, GroundingError};
use guardrail_core::pipeline::{Guardrail, PipelineError, PipelinePolicy, PipelineStatus, PipelineTrace, Query};
use guardrail_core::repairer::{repair, RepairError, RepairRequest};
use guardrail_core::safety::{check_input, detect_hallucination, DetectorError};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;

#[derive(Clone)]
pub struct AppState {
    pub guardrail: Arc<Guardrail>,
    pub policy: Arc<PipelinePolicy>,
}

impl AppState {
    pub fn new(guardrail: Arc<Guardrail>, policy: PipelinePolicy) -> Self {
        AppState {
            guardrail,
            policy: Arc::new(policy),
        }
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl ToString) -> Self {
        ApiError {
            status,
            message: message.to_string(),
        }
    }

    fn bad_request(message: impl ToString) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

impl From<BackendError> for ApiError {
    fn from(e: BackendError) -> Self {
        match e {
            BackendError::Unavailable(_) => ApiError::new(StatusCode::SERVICE_UNAVAILABLE, e),
            BackendError::Failure { .. } => ApiError::new(StatusCode::BAD_GATEWAY, e),
        }
    }
}

impl From<DetectorError> for ApiError {
    fn from(e: DetectorError) -> Self {
        match e {
            DetectorError::Backend(b) => b.into(),
            other => ApiError::new(StatusCode::BAD_GATEWAY, other),
        }
    }
}

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        let status = match &e {
            PipelineError::InvalidQuery(_) | PipelineError::InvalidPolicy(_) => StatusCode::BAD_REQUEST,
            PipelineError::BackendUnavailable { .. } | PipelineError::MissingIndex => StatusCode::SERVICE_UNAVAILABLE,
            PipelineError::StageFailure { .. } => StatusCode::BAD_GATEWAY,
        };
        ApiError::new(status, e)
    }
}

impl From<GroundingError> for ApiError {
    fn from(e: GroundingError) -> Self {
        match e {
            GroundingError::Backend(b) => b.into(),
            GroundingError::ZeroK => ApiError::bad_request(e),
            other => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, other),
        }
    }
}

impl From<RepairError> for ApiError {
    fn from(e: RepairError) -> Self {
        match e {
            RepairError::EmptyField(_) => ApiError::bad_request(e),
            RepairError::Backend(b) => b.into(),
        }
    }
}

impl From<ChainError> for ApiError {
    fn from(e: ChainError) -> Self {
        ApiError::new(StatusCode::BAD_GATEWAY, e)
    }
}

fn parse<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("invalid request body: {e}")))
}

/// Run blocking pipeline work off the async executor.
async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    F: FnOnce() -> Result<T, ApiError> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e))?
}

fn non_empty(field: &str, value: &str) -> Result<(), ApiError> {
    if value.trim().is_empty() {
        return Err(ApiError::bad_request(format!("`{field}` must not be empty")));
    }
    Ok(())
}

#[derive(Debug, Deserialize)]
pub struct TraceParams {
    #[serde(default = "default_true")]
    pub trace: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ChatResponse {
    pub final_text: String,
    pub status: PipelineStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<PipelineTrace>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TextRequest {
    pub text: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectHallucinationRequest {
    pub question: String,
    #[serde(default)]
    pub context: String,
    pub answer: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundRequest {
    pub query_text: String,
    #[serde(default)]
    pub k: Option<usize>,
}

async fn chat(
    State(state): State<AppState>,
    UrlQuery(params): UrlQuery<TraceParams>,
    body: Bytes,
) -> Result<Json<ChatResponse>, ApiError> {
    let query: Query = parse(&body)?;
    let response = blocking(move || Ok(state.guardrail.run(&query, &state.policy)?)).await?;
    Ok(Json(ChatResponse {
        final_text: response.final_text,
        status: response.status,
        trace: params.trace.then_some(response.trace),
    }))
}

async fn detect_input(State(state): State<AppState>, body: Bytes) -> Result<impl IntoResponse, ApiError> {
    let req: TextRequest = parse(&body)?;
    non_empty("text", &req.text)?;
    let verdict = blocking(move || {
        let g = &state.guardrail;
        Ok(check_input(g.registry().moderation()?, &req.text, g.input_threshold())?)
    })
    .await?;
    Ok(Json(verdict))
}

async fn detect_hallucination_handler(
    State(state): State<AppState>,
    body: Bytes,
) -> Result<impl IntoResponse, ApiError> {
    let req: DetectHallucinationRequest = parse(&body)?;
    non_empty("question", &req.question)?;
    non_empty("answer", &req.answer)?;
    let assessment = blocking(move || {
        let g = &state.guardrail;
        Ok(detect_hallucination(
            g.registry().generation()?,
            &req.question,
            &req.context,
            &req.answer,
            &state.policy,
            g.token_sets(),
        )?)
    })
    .await?;
    Ok(Json(assessment))
}

async fn ground(State(state): State<AppState>, body: Bytes) -> Result<impl IntoResponse, ApiError> {
    let req: GroundRequest = parse(&body)?;
    non_empty("query_text", &req.query_text)?;
    let grounded = blocking(move || {
        let g = &state.guardrail;
        let index = g
            .index()
            .ok_or_else(|| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "no knowledge index is loaded"))?;
        let k = req.k.unwrap_or(state.policy.top_k_contexts);
        Ok(ground_query(&req.query_text, index, k, g.registry().embedding()?)?)
    })
    .await?;
    Ok(Json(grounded))
}

async fn repair_handler(State(state): State<AppState>, body: Bytes) -> Result<impl IntoResponse, ApiError> {
    let req: RepairRequest = parse(&body)?;
    let result = blocking(move || Ok(repair(state.guardrail.registry().fixing()?, &req)?)).await?;
    Ok(Json(result))
}

async fn customize(State(state): State<AppState>, body: Bytes) -> Result<impl IntoResponse, ApiError> {
    let req: TextRequest = parse(&body)?;
    let outcome = blocking(move || Ok(run_chain(&req.text, state.guardrail.wrappers())?)).await?;
    Ok(Json(outcome))
}

async fn healthz() -> &'static str {
    "ok"
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/v1/chat", post(chat))
        .route("/v1/detect/input", post(detect_input))
        .route("/v1/detect/hallucination", post(detect_hallucination_handler))
        .route("/v1/ground", post(ground))
        .route("/v1/repair", post(repair_handler))
        .route("/v1/customize", post(customize))
        .with_state(state)
}

/// Serve until `shutdown` resolves; in-flight requests are allowed to finish.
pub async fn serve<F>(listener: tokio::net::TcpListener, state: AppState, shutdown: F) -> std::io::Result<()>
where
    F: Future<Output = ()> + Send + 'static,
{
    axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await
}
