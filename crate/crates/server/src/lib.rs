//! Submission scoring service.
//!
//! Users upload candidate captions for a split; the server scores them
//! against references it never reveals, keeps every outcome in an
//! append-only log and ranks users by their best CIDEr-D.
//!
//! | method | path | |
//! |---|---|---|
//! | `POST` | `/api/submissions?split=<name>` | raw JSON, zip, or multipart upload |
//! | `GET` | `/api/submissions/{id}` | status and report of one submission |
//! | `GET` | `/api/leaderboard?split=<name>` | best submission per user |
//! | `GET` | `/api/health` | liveness and configured splits |
//!
//! Requests other than the health check and leaderboard carry
//! `Authorization: Bearer <token>`.

pub mod config;
pub mod error;
pub mod store;

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, FromRequest, Multipart, Path, Query, Request, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::IntoResponse;
use axum::routing::{get, post};
use axum::{Json, Router};
use capeval_core::dataset_io::{parse_submission_payload, ReferenceStore};
use capeval_core::meteor::SynonymLexicon;
use capeval_core::{score, EngineConfig, EngineError};
use serde::Deserialize;
use serde_json::json;
use serde_json::value::RawValue;

pub use config::{ServerConfig, SplitConfig, UserEntry};
pub use error::{ApiError, ConfigError};
pub use store::{LeaderboardRow, Outcome, QuotaUsage, Status, SubmissionRecord, SubmissionStore};

pub type Clock = Arc<dyn Fn() -> u64 + Send + Sync>;

pub fn system_clock() -> Clock {
    Arc::new(|| SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0))
}

/// Everything a running server needs.
pub struct ServerSetup {
    pub splits: BTreeMap<String, ReferenceStore>,
    pub engine: EngineConfig,
    pub users: Vec<UserEntry>,
    pub quota_limit: usize,
    pub quota_window_secs: u64,
    pub max_upload_bytes: usize,
    pub store: SubmissionStore,
    pub clock: Clock,
}

struct Shared {
    splits: BTreeMap<String, Arc<ReferenceStore>>,
    engine: EngineConfig,
    users: HashMap<String, UserEntry>,
    quota_limit: usize,
    quota_window_ms: u64,
    max_upload_bytes: usize,
    store: SubmissionStore,
    clock: Clock,
}

#[derive(Clone)]
pub struct AppState(Arc<Shared>);

impl AppState {
    pub fn new(setup: ServerSetup) -> Result<Self, ConfigError> {
        setup.engine.validate()?;
        let users = setup.users.into_iter().map(|u| (u.token.clone(), u)).collect();
        Ok(Self(Arc::new(Shared {
            splits: setup.splits.into_iter().map(|(k, v)| (k, Arc::new(v))).collect(),
            engine: setup.engine,
            users,
            quota_limit: setup.quota_limit,
            quota_window_ms: setup.quota_window_secs.saturating_mul(1000),
            max_upload_bytes: setup.max_upload_bytes,
            store: setup.store,
            clock: setup.clock,
        })))
    }

    /// Loads references, tokens, lexicon and the submission log named by
    /// `config`.
    pub fn from_config(config: &ServerConfig) -> Result<Self, ConfigError> {
        let mut splits = BTreeMap::new();
        for (name, split) in &config.splits {
            splits.insert(name.clone(), ReferenceStore::load(&split.references, split.format, name.as_str())?);
        }
        let mut engine = config.engine.clone();
        if let Some(path) = &config.lexicon {
            engine.lexicon = Arc::new(SynonymLexicon::load(path)?);
        }
        Self::new(ServerSetup {
            splits,
            engine,
            users: config::load_tokens(&config.token_file)?,
            quota_limit: config.quota_limit,
            quota_window_secs: config.quota_window_secs,
            max_upload_bytes: config.max_upload_bytes,
            store: SubmissionStore::open(&config.log_path)?,
            clock: system_clock(),
        })
    }

    pub fn store(&self) -> &SubmissionStore {
        &self.0.store
    }

    fn authenticate(&self, headers: &HeaderMap) -> Result<&UserEntry, ApiError> {
        let token = headers
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .ok_or(ApiError::Unauthorized)?;
        self.0.users.get(token.trim()).ok_or(ApiError::Unauthorized)
    }

    fn split(&self, name: &str) -> Result<Arc<ReferenceStore>, ApiError> {
        self.0.splits.get(name).cloned().ok_or_else(|| ApiError::UnknownSplit(name.to_string()))
    }

    fn quota_limit(&self, user: &UserEntry) -> usize {
        user.quota_limit.unwrap_or(self.0.quota_limit)
    }
}

pub fn router(state: AppState) -> Router {
    let limit = state.0.max_upload_bytes;
    Router::new()
        .route("/api/health", get(health))
        .route("/api/submissions", post(submit))
        .route("/api/submissions/{id}", get(get_submission))
        .route("/api/leaderboard", get(leaderboard))
        .fallback(|| async { ApiError::NotFound("no such endpoint".into()) })
        .layer(DefaultBodyLimit::max(limit))
        .with_state(state)
}

async fn health(State(state): State<AppState>) -> Json<serde_json::Value> {
    Json(json!({"status": "ok", "splits": state.0.splits.keys().collect::<Vec<_>>()}))
}

#[derive(Deserialize)]
struct SplitQuery {
    split: Option<String>,
}

fn required_split(q: SplitQuery) -> Result<String, ApiError> {
    q.split.ok_or_else(|| ApiError::BadRequest("query parameter `split` is required".into()))
}

async fn read_payload(state: &AppState, req: Request) -> Result<Bytes, ApiError> {
    let is_multipart = req
        .headers()
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.starts_with("multipart/form-data"));
    if is_multipart {
        let mut form = Multipart::from_request(req, state).await.map_err(|e| ApiError::BadRequest(e.body_text()))?;
        let mut fallback = None;
        while let Some(field) = form.next_field().await.map_err(|e| ApiError::BadRequest(e.body_text()))? {
            let is_file = field.name() == Some("file");
            let data = field.bytes().await.map_err(|e| ApiError::BadRequest(e.body_text()))?;
            if is_file {
                return Ok(data);
            }
            fallback.get_or_insert(data);
        }
        fallback.ok_or_else(|| ApiError::BadRequest("multipart body has no fields".into()))
    } else {
        Bytes::from_request(req, state).await.map_err(|e| ApiError::BadRequest(e.body_text()))
    }
}

fn outcome_of(payload: &[u8], refs: &ReferenceStore, engine: &EngineConfig) -> Outcome {
    let sub = match parse_submission_payload(payload, refs.split()) {
        Ok(s) => s,
        Err(e) => return Outcome::Malformed(e.to_string()),
    };
    match score(&sub, refs, engine) {
        Ok(report) => {
            let cider_d = report.get("CIDEr-D").unwrap_or(0.0);
            match RawValue::from_string(report.to_json_string()) {
                Ok(raw) => Outcome::Scored { report: raw, cider_d },
                Err(e) => Outcome::Malformed(e.to_string()),
            }
        }
        Err(EngineError::Validation(v)) => Outcome::Invalid(v.violations),
        Err(e) => Outcome::Malformed(e.to_string()),
    }
}

async fn submit(
    State(state): State<AppState>,
    headers: HeaderMap,
    Query(q): Query<SplitQuery>,
    req: Request,
) -> Result<impl IntoResponse, ApiError> {
    let user = state.authenticate(&headers)?.clone();
    let split = required_split(q)?;
    let refs = state.split(&split)?;
    let payload = read_payload(&state, req).await?;

    let now = (state.0.clock)();
    let record = state.0.store.reserve(&user.id, &split, state.quota_limit(&user), state.0.quota_window_ms, now)?;

    let engine = state.0.engine.clone();
    let outcome = tokio::task::spawn_blocking(move || outcome_of(&payload, &refs, &engine))
        .await
        .unwrap_or_else(|e| Outcome::Malformed(format!("scoring failed: {e}")));
    let record = state.0.store.finish(&record.id, outcome)?;
    tracing::info!(id = %record.id, user = %record.user, split = %record.split, status = ?record.status, "submission");
    Ok((StatusCode::CREATED, Json(record)))
}

async fn get_submission(
    State(state): State<AppState>,
    headers: HeaderMap,
    Path(id): Path<String>,
) -> Result<Json<SubmissionRecord>, ApiError> {
    let user = state.authenticate(&headers)?;
    let record = state.0.store.get(&id).ok_or_else(|| ApiError::NotFound(id.clone()))?;
    if record.user != user.id && !user.admin {
        return Err(ApiError::Forbidden);
    }
    Ok(Json(record))
}

async fn leaderboard(
    State(state): State<AppState>,
    Query(q): Query<SplitQuery>,
) -> Result<Json<Vec<LeaderboardRow>>, ApiError> {
    let split = required_split(q)?;
    state.split(&split)?;
    Ok(Json(state.0.store.leaderboard(&split)))
}

/// Serves `state` on `listener` until `shutdown` resolves.
pub async fn serve_with_shutdown<F>(listener: tokio::net::TcpListener, state: AppState, shutdown: F) -> std::io::Result<()>
where
    F: std::future::Future<Output = ()> + Send + 'static,
{
    axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await
}

/// Loads `config` and serves until interrupted.
pub async fn run(config: ServerConfig) -> Result<(), ConfigError> {
    let state = AppState::from_config(&config)?;
    let listener = tokio::net::TcpListener::bind(config.listen)
        .await
        .map_err(|e| ConfigError::Io(config.listen.to_string(), e))?;
    tracing::info!(addr = %config.listen, "listening");
    serve_with_shutdown(listener, state, async {
        let _ = tokio::signal::ctrl_c().await;
    })
    .await
    .map_err(|e| ConfigError::Io(config.listen.to_string(), e))
}
