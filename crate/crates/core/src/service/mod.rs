//! JSON-over-HTTP chat API.
//!
//! Sessions live in memory with LRU eviction. Requests to one session are
//! serialized in arrival order (a fair async mutex per session); different
//! sessions run concurrently against shared read-only parameters.

mod api;

use std::future::Future;
use std::sync::{Arc, Mutex, RwLock};

use axum::routing::{get, post};
use axum::Router;
use indexmap::IndexMap;
use tokio::net::TcpListener;

use crate::corpus::DEFAULT_MAX_CONV_LENGTH;
use crate::inference::{ChatModel, Session};

pub use api::{ApiError, CandidateView, GenerateRequest, GenerateResponse, HistoryEntry, LatentSourcesView, SessionView};

pub const DEFAULT_MAX_SESSIONS: usize = 1000;
pub const MAX_CANDIDATES: usize = 10;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub max_sessions: usize,
    pub history_cap: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            max_sessions: DEFAULT_MAX_SESSIONS,
            history_cap: DEFAULT_MAX_CONV_LENGTH,
        }
    }
}

type SessionHandle = Arc<tokio::sync::Mutex<Session>>;

pub struct AppState {
    model: RwLock<Option<Arc<ChatModel>>>,
    sessions: Mutex<IndexMap<String, SessionHandle>>,
    config: ServiceConfig,
}

impl AppState {
    pub fn new(config: ServiceConfig) -> Arc<Self> {
        Arc::new(Self {
            model: RwLock::new(None),
            sessions: Mutex::new(IndexMap::new()),
            config,
        })
    }

    pub fn with_model(model: ChatModel, mut config: ServiceConfig) -> Arc<Self> {
        config.history_cap = model.config().max_conv_length;
        let state = Self::new(config);
        state.set_model(model);
        state
    }

    pub fn set_model(&self, model: ChatModel) {
        *self.model.write().expect("model lock") = Some(Arc::new(model));
    }

    pub fn model(&self) -> Option<Arc<ChatModel>> {
        self.model.read().expect("model lock").clone()
    }

    pub fn session_count(&self) -> usize {
        self.sessions.lock().expect("sessions lock").len()
    }

    fn create_session(&self) -> String {
        let id = uuid::Uuid::new_v4().simple().to_string();
        let vocab_hash = self.model().map(|m| m.vocab.hash()).unwrap_or_default();
        let session = Session::new(id.clone(), vocab_hash, self.config.history_cap.max(1)).expect("cap >= 1");
        let mut map = self.sessions.lock().expect("sessions lock");
        map.insert(id.clone(), Arc::new(tokio::sync::Mutex::new(session)));
        while map.len() > self.config.max_sessions.max(1) {
            map.shift_remove_index(0);
        }
        id
    }

    /// Looks a session up and marks it most recently used.
    fn session(&self, id: &str) -> Option<SessionHandle> {
        let mut map = self.sessions.lock().expect("sessions lock");
        let handle = map.shift_remove(id)?;
        map.insert(id.to_string(), handle.clone());
        Some(handle)
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/healthz", get(api::healthz))
        .route("/sessions", post(api::create_session))
        .route("/sessions/{id}", get(api::get_session))
        .route("/sessions/{id}/messages", post(api::post_message))
        .route("/sessions/{id}/resample", post(api::resample))
        .with_state(state)
}

/// Serves until `shutdown` resolves, then lets in-flight requests finish.
pub async fn serve<F>(listener: TcpListener, state: Arc<AppState>, shutdown: F) -> std::io::Result<()>
where
    F: Future<Output = ()> + Send + 'static,
{
    axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await
}
