//! HTTP endpoints. Handlers only translate requests; every state change goes
//! through [`SessionManager`].

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Multipart, Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use cpe_core::backend::{BackendConfig, BackendError};
use cpe_core::evalsuite::{EvalError, SurveyResponse};
use cpe_core::ingest::{DataFormat, IngestError};
use cpe_core::promptkit::TargetTemplate;
use cpe_core::{SessionConfig, SessionError};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::export::{results_text, survey_text, transcript_jsonl};
use crate::manager::{PromptKind, ServiceError, SessionManager};
use crate::store::StoreError;

pub const MAX_UPLOAD_BYTES: usize = 16 * 1024 * 1024;

pub struct AppState {
    pub manager: Arc<SessionManager>,
    /// Backends and template for sessions created without a body.
    pub defaults: SessionConfig,
    /// Whether clients may point sessions at remote endpoints of their choice.
    pub allow_client_backends: bool,
    pub default_seed: u64,
}

pub struct ApiError(ServiceError);

macro_rules! api_error_from {
    ($($t:ty),*) => {$(
        impl From<$t> for ApiError {
            fn from(e: $t) -> Self {
                ApiError(e.into())
            }
        }
    )*};
}

api_error_from!(ServiceError, EvalError, IngestError, SessionError, StoreError, BackendError);

fn status_for(e: &ServiceError) -> StatusCode {
    use ServiceError as S;
    match e {
        S::NotFound(_) | S::Store(StoreError::NotFound(_) | StoreError::InvalidId(_)) => StatusCode::NOT_FOUND,
        S::Busy(_) => StatusCode::CONFLICT,
        S::InvalidRequest(_) => StatusCode::BAD_REQUEST,
        S::Ingest(_) => StatusCode::UNPROCESSABLE_ENTITY,
        S::Session(SessionError::EmptyMessage) => StatusCode::BAD_REQUEST,
        S::Session(SessionError::WrongStage(_) | SessionError::NotEnded) => StatusCode::CONFLICT,
        S::Session(SessionError::Backend(_)) => StatusCode::BAD_GATEWAY,
        S::Eval(EvalError::SamePosition | EvalError::PositionOutOfRange(_) | EvalError::ScoreOutOfRange(_)) => {
            StatusCode::BAD_REQUEST
        }
        S::Eval(EvalError::UnknownItem(_)) => StatusCode::NOT_FOUND,
        S::Eval(EvalError::Prompt(_)) => StatusCode::INTERNAL_SERVER_ERROR,
        S::Eval(_) => StatusCode::CONFLICT,
        S::Backend(BackendError::InvalidConfig(_)) => StatusCode::BAD_REQUEST,
        S::Backend(_) => StatusCode::BAD_GATEWAY,
        S::Session(_) | S::Store(_) | S::Replay { .. } => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = status_for(&self.0);
        if status.is_server_error() {
            tracing::error!(error = %self.0, "request failed");
        }
        (status, Json(json!({ "error": self.0.to_string() }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ServiceError> + Send + 'static) -> ApiResult<T> {
    match tokio::task::spawn_blocking(f).await {
        Ok(r) => Ok(r?),
        Err(e) => Err(ServiceError::InvalidRequest(format!("worker failed: {e}")).into()),
    }
}

/// Parses a JSON body, treating an empty body as the default value.
fn optional_json<T: DeserializeOwned + Default>(body: &Bytes) -> ApiResult<T> {
    if body.iter().all(u8::is_ascii_whitespace) {
        return Ok(T::default());
    }
    serde_json::from_slice(body).map_err(|e| ServiceError::InvalidRequest(e.to_string()).into())
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateSessionRequest {
    template: Option<String>,
    chat: Option<BackendConfig>,
    target: Option<BackendConfig>,
}

async fn create_session(State(state): State<Arc<AppState>>, body: Bytes) -> ApiResult<impl IntoResponse> {
    let req: CreateSessionRequest = optional_json(&body)?;
    let mut config = state.defaults.clone();
    if let Some(name) = req.template {
        config.template = TargetTemplate::by_name(&name).ok_or_else(|| {
            ServiceError::InvalidRequest(format!(
                "unknown template `{name}`; known: {}",
                TargetTemplate::NAMES.join(", ")
            ))
        })?;
    }
    for (slot, requested) in [(&mut config.chat, req.chat), (&mut config.target, req.target)] {
        if let Some(cfg) = requested {
            if matches!(cfg, BackendConfig::Remote { .. }) && !state.allow_client_backends {
                return Err(ServiceError::InvalidRequest(
                    "this server does not accept client-supplied remote backends".to_string(),
                )
                .into());
            }
            *slot = cfg;
        }
    }
    let manager = state.manager.clone();
    let id = blocking(move || manager.create_session(config)).await?;
    Ok((StatusCode::CREATED, Json(json!({ "session_id": id }))))
}

#[derive(Debug, Deserialize)]
struct UploadQuery {
    format: Option<String>,
    seed: Option<u64>,
}

async fn upload_data(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<UploadQuery>,
    mut multipart: Multipart,
) -> ApiResult<impl IntoResponse> {
    let format = match q.format.as_deref() {
        Some(f) => {
            Some(DataFormat::parse(f).ok_or_else(|| ServiceError::from(IngestError::UnknownFormat(f.to_string())))?)
        }
        None => None,
    };
    let mut file = None;
    while let Some(field) = multipart.next_field().await.map_err(|e| ServiceError::InvalidRequest(e.to_string()))? {
        if field.file_name().is_some() || field.name() == Some("file") {
            let name = field.file_name().unwrap_or("upload").to_string();
            let bytes = field.bytes().await.map_err(|e| ServiceError::InvalidRequest(e.to_string()))?;
            file = Some((name, bytes));
            break;
        }
    }
    let (filename, bytes) = file.ok_or_else(|| ServiceError::InvalidRequest("no file in upload".to_string()))?;
    let seed = q.seed.unwrap_or(state.default_seed);
    let manager = state.manager.clone();
    let summary = blocking(move || manager.upload_data(&id, &filename, &bytes, format, seed)).await?;
    Ok(Json(summary))
}

#[derive(Debug, Deserialize)]
struct MessageRequest {
    text: String,
}

async fn post_message(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(req): Json<MessageRequest>,
) -> ApiResult<impl IntoResponse> {
    let manager = state.manager.clone();
    let messages = blocking(move || manager.post_message(&id, &req.text)).await?;
    Ok(Json(json!({ "messages": messages })))
}

async fn chat(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    let manager = state.manager.clone();
    Ok(Json(blocking(move || manager.chat(&id)).await?))
}

fn text_download(filename: &str, body: String) -> Response {
    (
        [
            (header::CONTENT_TYPE, "text/plain; charset=utf-8".to_string()),
            (header::CONTENT_DISPOSITION, format!("attachment; filename=\"{filename}\"")),
        ],
        body,
    )
        .into_response()
}

async fn prompt(state: Arc<AppState>, id: String, kind: PromptKind) -> ApiResult<Response> {
    let manager = state.manager.clone();
    let text = blocking(move || manager.prompt(&id, kind)).await?;
    let name = match kind {
        PromptKind::Fs => "fs_prompt.txt",
        PromptKind::Zs => "zs_prompt.txt",
    };
    Ok(text_download(name, text))
}

async fn prompt_fs(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Response> {
    prompt(state, id, PromptKind::Fs).await
}

async fn prompt_zs(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Response> {
    prompt(state, id, PromptKind::Zs).await
}

async fn transcript(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Response> {
    let manager = state.manager.clone();
    let session = blocking(move || manager.snapshot(&id)).await?;
    Ok(text_download("transcript.jsonl", transcript_jsonl(&session)))
}

#[derive(Debug, Default, Deserialize)]
struct StartEvaluation {
    seed: Option<u64>,
}

async fn start_evaluation(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<impl IntoResponse> {
    let req: StartEvaluation = optional_json(&body)?;
    let seed = req.seed.unwrap_or(state.default_seed);
    let manager = state.manager.clone();
    Ok(Json(blocking(move || manager.start_evaluation(&id, seed)).await?))
}

async fn evaluation_items(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    let manager = state.manager.clone();
    let items = blocking(move || manager.evaluation_items(&id)).await?;
    Ok(Json(json!({ "items": items })))
}

#[derive(Debug, Deserialize)]
struct RankRequest {
    best: u8,
    worst: u8,
    #[serde(default)]
    overwrite: bool,
}

async fn rank_item(
    State(state): State<Arc<AppState>>,
    Path((id, item_id)): Path<(String, u32)>,
    Json(req): Json<RankRequest>,
) -> ApiResult<impl IntoResponse> {
    let manager = state.manager.clone();
    blocking(move || manager.rank(&id, item_id, req.best, req.worst, req.overwrite)).await?;
    Ok(Json(json!({ "ok": true })))
}

#[derive(Debug, Deserialize)]
struct ResultsQuery {
    format: Option<String>,
}

async fn results(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<ResultsQuery>,
) -> ApiResult<Response> {
    let manager = state.manager.clone();
    if q.format.as_deref() == Some("text") {
        let session = blocking(move || manager.snapshot(&id)).await?;
        let evaluation = session.evaluation().ok_or(EvalError::NoEvaluation)?;
        return Ok(text_download("results.tsv", results_text(evaluation)?));
    }
    Ok(Json(blocking(move || manager.results(&id)).await?).into_response())
}

#[derive(Debug, Serialize, Deserialize)]
struct SurveyRequest {
    scores: [u8; 4],
}

async fn submit_survey(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(req): Json<SurveyRequest>,
) -> ApiResult<impl IntoResponse> {
    let [satisfaction, thinking_process, pleasantness, convergence_time] = req.scores;
    let response = SurveyResponse { satisfaction, thinking_process, pleasantness, convergence_time };
    let manager = state.manager.clone();
    blocking(move || manager.survey(&id, response)).await?;
    Ok(Json(json!({ "ok": true })))
}

async fn survey_export(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Response> {
    let manager = state.manager.clone();
    let session = blocking(move || manager.snapshot(&id)).await?;
    let response =
        session.survey().ok_or_else(|| ServiceError::InvalidRequest("no survey response recorded".to_string()))?;
    Ok(text_download("survey.tsv", survey_text(response)))
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/data", post(upload_data))
        .route("/sessions/{id}/messages", post(post_message))
        .route("/sessions/{id}/chat", get(chat))
        .route("/sessions/{id}/prompt/fs", get(prompt_fs))
        .route("/sessions/{id}/prompt/zs", get(prompt_zs))
        .route("/sessions/{id}/transcript", get(transcript))
        .route("/sessions/{id}/evaluation/start", post(start_evaluation))
        .route("/sessions/{id}/evaluation/items", get(evaluation_items))
        .route("/sessions/{id}/evaluation/items/{item_id}/ranking", post(rank_item))
        .route("/sessions/{id}/evaluation/results", get(results))
        .route("/sessions/{id}/survey", post(submit_survey).get(survey_export))
        .layer(DefaultBodyLimit::max(MAX_UPLOAD_BYTES))
        .with_state(state)
}
