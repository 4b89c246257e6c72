use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{AppState, SessionHandle, MAX_CANDIDATES};
use crate::corpus::EOS;
use crate::inference::{ChatModel, GenerationOptions, LatentMode, Session, Speaker, Strategy, Turn};
use crate::model::LatentSource;

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }

    fn not_found(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "session_not_found", format!("no session {id}"))
    }

    fn invalid(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_request", message)
    }

    fn unavailable() -> Self {
        Self::new(StatusCode::SERVICE_UNAVAILABLE, "model_not_loaded", "model is still loading")
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({ "error": { "code": self.code, "message": self.message } });
        (self.status, Json(body)).into_response()
    }
}

impl From<crate::Error> for ApiError {
    fn from(e: crate::Error) -> Self {
        match e {
            crate::Error::InvalidArgument(m) => Self::invalid(m),
            other => Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", other.to_string()),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateRequest {
    #[serde(default)]
    pub text: Option<String>,
    #[serde(default)]
    pub temperature: Option<f64>,
    #[serde(default)]
    pub num_candidates: Option<usize>,
    #[serde(default)]
    pub latent_mode: Option<LatentMode>,
    #[serde(default)]
    pub strategy: Option<Strategy>,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl GenerateRequest {
    fn options(&self, model: &ChatModel) -> Result<GenerationOptions, ApiError> {
        let opts = GenerationOptions {
            strategy: self.strategy.unwrap_or(Strategy::Greedy),
            temperature: self.temperature.unwrap_or(1.0),
            max_tokens: model.config().pad_length,
            latent_mode: self.latent_mode.unwrap_or(LatentMode::Mean),
            num_candidates: self.num_candidates.unwrap_or(1),
            seed: self.seed.unwrap_or_else(rand::random),
        };
        if !(opts.temperature > 0.0) {
            return Err(ApiError::invalid("temperature must be > 0"));
        }
        if opts.num_candidates == 0 || opts.num_candidates > MAX_CANDIDATES {
            return Err(ApiError::invalid(format!("num_candidates must lie in 1..={MAX_CANDIDATES}")));
        }
        opts.validate(model.config().pad_length)?;
        Ok(opts)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateView {
    pub text: String,
    pub tokens: Vec<String>,
    pub token_logprobs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentSourcesView {
    pub z_c: Option<LatentSource>,
    pub z_p: Option<LatentSource>,
    pub z_r: Option<LatentSource>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateResponse {
    pub candidates: Vec<CandidateView>,
    pub chosen_index: usize,
    pub latent_sources: LatentSourcesView,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub speaker: Speaker,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub id: String,
    pub history: Vec<HistoryEntry>,
    pub max_history: usize,
    pub created_at_ms: u64,
    pub updated_at_ms: u64,
}

impl From<&Session> for SessionView {
    fn from(s: &Session) -> Self {
        Self {
            id: s.id.clone(),
            history: s
                .turns()
                .map(|t| HistoryEntry {
                    speaker: t.speaker,
                    text: t.text.clone(),
                })
                .collect(),
            max_history: s.max_len(),
            created_at_ms: s.created_at_ms,
            updated_at_ms: s.updated_at_ms,
        }
    }
}

fn parse_body(body: &Bytes) -> Result<GenerateRequest, ApiError> {
    if body.iter().all(u8::is_ascii_whitespace) {
        return Ok(GenerateRequest::default());
    }
    serde_json::from_slice(body).map_err(|e| ApiError::invalid(format!("bad request body: {e}")))
}

pub(super) async fn healthz(State(state): State<Arc<AppState>>) -> Response {
    match state.model() {
        Some(m) => (StatusCode::OK, Json(json!({ "status": "ok", "checkpoint_hash": m.checkpoint_hash }))).into_response(),
        None => (
            StatusCode::SERVICE_UNAVAILABLE,
            Json(json!({ "status": "loading", "checkpoint_hash": null })),
        )
            .into_response(),
    }
}

pub(super) async fn create_session(State(state): State<Arc<AppState>>) -> Response {
    let id = state.create_session();
    (StatusCode::CREATED, Json(json!({ "id": id }))).into_response()
}

fn lookup(state: &AppState, id: &str) -> Result<SessionHandle, ApiError> {
    state.session(id).ok_or_else(|| ApiError::not_found(id))
}

pub(super) async fn get_session(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<SessionView>, ApiError> {
    let handle = lookup(&state, &id)?;
    let session = handle.lock().await;
    Ok(Json(SessionView::from(&*session)))
}

fn respond(model: &ChatModel, history: &[&[usize]], opts: &GenerationOptions) -> Result<(GenerateResponse, Turn), ApiError> {
    let cands = model.respond(history, opts)?;
    let sources = cands[0].latents.sources;
    let views: Vec<CandidateView> = cands
        .iter()
        .map(|c| CandidateView {
            text: model.text_of(&c.tokens),
            tokens: c
                .tokens
                .iter()
                .map(|&t| model.vocab.token(t).unwrap_or("<unk>").to_string())
                .collect(),
            token_logprobs: c.token_logprobs.clone(),
        })
        .collect();
    let mut ids = cands[0].tokens.clone();
    ids.push(EOS);
    let turn = Turn {
        speaker: Speaker::Model,
        text: views[0].text.clone(),
        token_ids: ids,
    };
    let resp = GenerateResponse {
        candidates: views,
        chosen_index: 0,
        latent_sources: LatentSourcesView {
            z_c: sources.z_c,
            z_p: sources.z_p,
            z_r: sources.z_r,
        },
    };
    Ok((resp, turn))
}

async fn run_blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
}

pub(super) async fn post_message(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<GenerateResponse>, ApiError> {
    let req = parse_body(&body)?;
    let handle = lookup(&state, &id)?;
    let model = state.model().ok_or_else(ApiError::unavailable)?;
    let text = req.text.clone().unwrap_or_default();
    if text.trim().is_empty() {
        return Err(ApiError::invalid("text must be non-empty"));
    }
    let opts = req.options(&model)?;
    let mut session = handle.lock_owned().await;
    run_blocking(move || {
        let user = Turn {
            speaker: Speaker::User,
            text: text.clone(),
            token_ids: model.encode(&text),
        };
        let mut history: Vec<&[usize]> = session.history();
        history.push(&user.token_ids);
        let skip = history.len().saturating_sub(session.max_len());
        let (resp, turn) = respond(&model, &history[skip..], &opts)?;
        session.push(user);
        session.push(turn);
        Ok(Json(resp))
    })
    .await
}

pub(super) async fn resample(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<GenerateResponse>, ApiError> {
    let req = parse_body(&body)?;
    let handle = lookup(&state, &id)?;
    let model = state.model().ok_or_else(ApiError::unavailable)?;
    let opts = req.options(&model)?;
    let mut session = handle.lock_owned().await;
    if session.history_before_last_model().is_err() {
        return Err(ApiError::new(StatusCode::CONFLICT, "no_model_turn", "no model turn to replace"));
    }
    run_blocking(move || {
        let history = session.history_before_last_model()?;
        if history.is_empty() {
            return Err(ApiError::new(StatusCode::CONFLICT, "no_context", "no context left before the model turn"));
        }
        let (resp, turn) = respond(&model, &history, &opts)?;
        session.replace_last_model_turn(turn)?;
        Ok(Json(resp))
    })
    .await
}
