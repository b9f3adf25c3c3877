//! HTTP API over repair sessions, so an auditor can supply the judgments
//! that drive the repair loop.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, RwLock};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tokio::sync::Mutex;

use crate::data::{DataSource, Dataset};
use crate::detect::{audit, program_digest, scatter_rows, AuditConfig, ScatterRow, Witness};
use crate::expr::Expr;
use crate::frontends::load_model;
use crate::measures::UtilityTarget;
use crate::oracle::{Judgment, JudgmentSource, Queue};
use crate::repair::{Checkpoint, RepairStep, Status};

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> ApiError {
        ApiError {
            status,
            message: message.into(),
        }
    }

    fn not_found(what: &str) -> ApiError {
        ApiError::new(StatusCode::NOT_FOUND, format!("unknown {what}"))
    }

    fn internal(e: impl std::fmt::Display) -> ApiError {
        ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
    }

    fn unprocessable(e: impl std::fmt::Display) -> ApiError {
        ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e.to_string())
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        let status = match r {
            JsonRejection::MissingJsonContentType(_) => StatusCode::UNSUPPORTED_MEDIA_TYPE,
            _ => StatusCode::UNPROCESSABLE_ENTITY,
        };
        ApiError::new(status, r.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(serde_json::json!({ "error": self.message }))).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

struct Session {
    id: String,
    data: Arc<Dataset>,
    /// Serializes mutations.
    writer: Mutex<()>,
    /// Latest published state; readers clone the `Arc`.
    snapshot: RwLock<Arc<Checkpoint>>,
}

impl Session {
    fn current(&self) -> Arc<Checkpoint> {
        self.snapshot.read().expect("snapshot lock").clone()
    }
}

/// Session store shared by all handlers.
#[derive(Clone, Default)]
pub struct AppState {
    sessions: Arc<RwLock<HashMap<String, Arc<Session>>>>,
    state_dir: Option<PathBuf>,
}

#[derive(Serialize, Deserialize)]
struct Persisted {
    id: String,
    checkpoint: Checkpoint,
}

impl AppState {
    /// Sessions are kept in memory, and also written to `state_dir` on
    /// every transition when one is given.
    pub fn new(state_dir: Option<PathBuf>) -> AppState {
        AppState {
            sessions: Arc::default(),
            state_dir,
        }
    }

    /// Reloads every session checkpoint found in the state directory.
    pub fn restore(state_dir: PathBuf) -> std::io::Result<AppState> {
        let state = AppState::new(Some(state_dir.clone()));
        if !state_dir.exists() {
            return Ok(state);
        }
        for entry in std::fs::read_dir(&state_dir)? {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("json") {
                continue;
            }
            let text = std::fs::read_to_string(&path)?;
            let bad = |e: String| std::io::Error::new(std::io::ErrorKind::InvalidData, format!("{}: {e}", path.display()));
            let p: Persisted = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
            let source = p
                .checkpoint
                .data
                .as_ref()
                .ok_or_else(|| bad("checkpoint has no data source".into()))?;
            let data = source.load().map_err(|e| bad(e.to_string()))?;
            state.insert(p.id, data, p.checkpoint);
        }
        Ok(state)
    }

    /// Opens a session on an already-loaded program and dataset, running
    /// detection up to the first batch of judgments. Returns the session id.
    pub fn open(
        &self,
        program: &Expr,
        data: Dataset,
        source: DataSource,
        cfg: &AuditConfig,
    ) -> Result<(String, SessionView), ApiError> {
        cfg.validate().map_err(ApiError::unprocessable)?;
        let target = match data.label() {
            Some(l) => UtilityTarget::Labels(l.to_string()),
            None => UtilityTarget::Fidelity(program.clone()),
        };
        let mut cp = Checkpoint::new(program, cfg, target);
        cp.data = Some(source);
        let cp = run_loop(&data, cp)?;
        let id = uuid::Uuid::new_v4().to_string();
        let s = self.insert(id.clone(), data, cp.clone());
        self.publish(&s, cp.clone())?;
        Ok((id.clone(), view(&id, &cp)))
    }

    fn insert(&self, id: String, data: Dataset, cp: Checkpoint) -> Arc<Session> {
        let s = Arc::new(Session {
            id: id.clone(),
            data: Arc::new(data),
            writer: Mutex::new(()),
            snapshot: RwLock::new(Arc::new(cp)),
        });
        self.sessions.write().expect("session map").insert(id, s.clone());
        s
    }

    fn get(&self, id: &str) -> Result<Arc<Session>, ApiError> {
        self.sessions
            .read()
            .expect("session map")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found("session"))
    }

    fn publish(&self, s: &Session, cp: Checkpoint) -> Result<(), ApiError> {
        if let Some(dir) = &self.state_dir {
            std::fs::create_dir_all(dir).map_err(ApiError::internal)?;
            let doc = Persisted {
                id: s.id.clone(),
                checkpoint: cp.clone(),
            };
            let tmp = dir.join(format!("{}.json.tmp", s.id));
            let text = serde_json::to_string_pretty(&doc).map_err(ApiError::internal)?;
            std::fs::write(&tmp, text).map_err(ApiError::internal)?;
            std::fs::rename(&tmp, dir.join(format!("{}.json", s.id))).map_err(ApiError::internal)?;
        }
        *s.snapshot.write().expect("snapshot lock") = Arc::new(cp);
        Ok(())
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/sessions", post(create_session))
        .route("/api/sessions/{id}", get(session_status))
        .route("/api/sessions/{id}/witnesses", get(witnesses))
        .route("/api/sessions/{id}/judgments", post(judge))
        .route("/api/sessions/{id}/program", get(program))
        .route("/api/sessions/{id}/steps", get(steps))
        .with_state(state)
}

/// Body of `POST /api/sessions`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    /// Any model document; a JSON string is read as a CART text dump.
    pub model: serde_json::Value,
    pub data: DataSource,
    pub config: AuditConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub id: String,
    pub status: Status,
    pub program_digest: String,
    pub pending: usize,
    pub judgments: usize,
    pub steps: usize,
    pub epsilon: f64,
    pub delta: f64,
}

fn view(id: &str, cp: &Checkpoint) -> SessionView {
    SessionView {
        id: id.to_string(),
        status: cp.status,
        program_digest: program_digest(&cp.program),
        pending: cp.pending.len(),
        judgments: cp.judgments.len(),
        steps: cp.steps.len(),
        epsilon: cp.config.epsilon,
        delta: cp.config.delta,
    }
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f).await.map_err(ApiError::internal)?
}

fn run_loop(data: &Dataset, mut cp: Checkpoint) -> Result<Checkpoint, ApiError> {
    cp.run(data, &mut Queue::default(), None)
        .map_err(ApiError::unprocessable)?;
    Ok(cp)
}

async fn create_session(
    State(state): State<AppState>,
    body: Result<Json<CreateSession>, JsonRejection>,
) -> Result<(StatusCode, Json<SessionView>), ApiError> {
    let Json(req) = body?;
    let data = req.data.load().map_err(ApiError::unprocessable)?;
    let text = match &req.model {
        serde_json::Value::String(s) => s.clone(),
        other => other.to_string(),
    };
    let program = load_model(&text, data.codebook()).map_err(ApiError::unprocessable)?;
    let (_, view) = blocking(move || state.open(&program, data, req.data, &req.config)).await?;
    Ok((StatusCode::CREATED, Json(view)))
}

async fn session_status(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<SessionView> {
    let s = state.get(&id)?;
    Ok(Json(view(&s.id, &s.current())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WitnessList {
    pub status: Status,
    pub epsilon: f64,
    pub delta: f64,
    pub witnesses: Vec<Witness>,
}

async fn witnesses(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<WitnessList> {
    let cp = state.get(&id)?.current();
    Ok(Json(WitnessList {
        status: cp.status,
        epsilon: cp.config.epsilon,
        delta: cp.config.delta,
        witnesses: cp.pending.clone(),
    }))
}

/// Body of `POST /api/sessions/{id}/judgments`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JudgmentRequest {
    pub witness_id: String,
    pub appropriate: bool,
    #[serde(default)]
    pub note: Option<String>,
}

async fn judge(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Result<Json<JudgmentRequest>, JsonRejection>,
) -> ApiResult<SessionView> {
    let s = state.get(&id)?;
    let Json(req) = body?;
    let _guard = s.writer.lock().await;
    let mut cp = (*s.current()).clone();
    if cp.judgments.get(&req.witness_id).is_some() {
        return Err(ApiError::new(StatusCode::CONFLICT, "witness already judged"));
    }
    if !cp.pending.iter().any(|w| w.id == req.witness_id) {
        return Err(ApiError::not_found("witness"));
    }
    cp.judgments
        .record(Judgment::new(&req.witness_id, req.appropriate, JudgmentSource::Remote, req.note))
        .map_err(ApiError::internal)?;
    let all_judged = cp.pending.iter().all(|w| cp.judgments.get(&w.id).is_some());
    if !all_judged {
        state.publish(&s, cp.clone())?;
        return Ok(Json(view(&s.id, &cp)));
    }
    cp.status = Status::Repairing;
    state.publish(&s, cp.clone())?;
    let data = s.data.clone();
    let cp = blocking(move || run_loop(&data, cp)).await?;
    state.publish(&s, cp.clone())?;
    Ok(Json(view(&s.id, &cp)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgramView {
    pub program: Expr,
    pub program_text: String,
    pub program_digest: String,
    pub size: usize,
    /// Rows for the original program (phase `original`) and, after at least
    /// one repair, for the current one (phase `repaired`).
    pub scatter: Vec<ScatterRow>,
}

async fn program(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<ProgramView> {
    let s = state.get(&id)?;
    let cp = s.current();
    let data = s.data.clone();
    let scatter = blocking(move || {
        let mut rows = scatter_for(&cp.original, &data, &cp.config, "original")?;
        if !cp.steps.is_empty() {
            rows.extend(scatter_for(&cp.program, &data, &cp.config, "repaired")?);
        }
        Ok(rows)
    })
    .await?;
    let cp = s.current();
    Ok(Json(ProgramView {
        program_text: cp.program.to_string(),
        program_digest: program_digest(&cp.program),
        size: cp.program.size(),
        program: cp.program.clone(),
        scatter,
    }))
}

fn scatter_for(p: &Expr, data: &Dataset, cfg: &AuditConfig, phase: &str) -> Result<Vec<ScatterRow>, ApiError> {
    let a = audit(p, data, cfg).map_err(ApiError::unprocessable)?;
    Ok(scatter_rows(&a, phase))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub steps: Vec<RepairStep>,
    pub judgments: Vec<Judgment>,
}

async fn steps(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<StepLog> {
    let cp = state.get(&id)?.current();
    Ok(Json(StepLog {
        steps: cp.steps.clone(),
        judgments: cp.judgments.entries().to_vec(),
    }))
}

/// Serves the API on `addr` until interrupted.
pub async fn serve(addr: std::net::SocketAddr, state: AppState) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
