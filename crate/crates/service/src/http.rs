//! JSON-over-HTTP facade over the generate / run / critique / fix / deploy
//! workflow.

use std::collections::{BTreeSet, HashMap};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::{json, Value};

use robocheck_core::critics::{
    all_critics, run_critics, score_index, worst_flag, CriticRegistry, CriticReport, ScoreIndex,
    BUILTIN_CRITICS,
};
use robocheck_core::kinematics::RobotModel;
use robocheck_core::program::{interpret, parse_program, Trajectory};
use robocheck_core::refine::{
    apply_fix, generate_program, Env, InteractionRecord, LlmAdapter, MemoryStore, RefineError,
};
use robocheck_core::scene::Scene;
use robocheck_core::settings::Settings;

use crate::deploy::{deploy, DeployError, DeployOptions};

/// Everything shared by all sessions.
pub struct ServiceConfig {
    /// Directory holding `<name>.json` scene files.
    pub scene_dir: PathBuf,
    pub model: RobotModel,
    pub settings: Settings,
    /// Robot endpoint used when a deploy request names none.
    pub robot_addr: Option<String>,
    pub deploy: DeployOptions,
}

#[derive(Clone)]
pub struct AppState {
    inner: Arc<Shared>,
}

struct Shared {
    cfg: ServiceConfig,
    llm: Arc<dyn LlmAdapter>,
    memory: Arc<MemoryStore>,
    sessions: RwLock<HashMap<u64, Arc<Session>>>,
    next_session: AtomicU64,
}

impl AppState {
    pub fn new(cfg: ServiceConfig, llm: Arc<dyn LlmAdapter>, memory: Arc<MemoryStore>) -> Self {
        AppState {
            inner: Arc::new(Shared {
                cfg,
                llm,
                memory,
                sessions: RwLock::new(HashMap::new()),
                next_session: AtomicU64::new(1),
            }),
        }
    }

    pub fn memory(&self) -> &MemoryStore {
        &self.inner.memory
    }

    fn session(&self, id: u64) -> Result<Arc<Session>, ApiError> {
        self.inner
            .sessions
            .read()
            .expect("session table")
            .get(&id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("no session {id}")))
    }
}

struct Session {
    scene: Scene,
    busy: AtomicBool,
    data: Mutex<SessionData>,
}

#[derive(Default)]
struct SessionData {
    selected: BTreeSet<String>,
    /// Latest chat message, used as the request of stored interactions.
    request: Option<String>,
    program: Option<String>,
    latest: Option<u64>,
    runs: HashMap<u64, Arc<Run>>,
    next_run: u64,
}

struct Run {
    program: String,
    trajectory: Trajectory,
    /// All five critics, whatever the selection. The deploy gate uses these.
    reports: Vec<CriticReport>,
    selected: BTreeSet<String>,
    score: ScoreIndex,
}

impl Run {
    fn selected_reports(&self) -> Vec<&CriticReport> {
        self.reports
            .iter()
            .filter(|r| self.selected.contains(&r.critic))
            .collect()
    }
}

/// Serializes run, fix and chat within a session.
struct BusyGuard<'a>(&'a AtomicBool);

impl<'a> BusyGuard<'a> {
    fn acquire(flag: &'a AtomicBool) -> Result<Self, ApiError> {
        flag.compare_exchange(false, true, Ordering::AcqRel, Ordering::Acquire)
            .map(|_| BusyGuard(flag))
            .map_err(|_| {
                ApiError::conflict("busy", "another request is in flight for this session")
            })
    }
}

impl Drop for BusyGuard<'_> {
    fn drop(&mut self) {
        self.0.store(false, Ordering::Release);
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: Value,
}

impl ApiError {
    fn new(status: StatusCode, kind: &str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            body: json!({"error": kind, "message": message.into()}),
        }
    }

    fn with(mut self, key: &str, value: Value) -> Self {
        self.body[key] = value;
        self
    }

    fn bad_request(kind: &str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, kind, message)
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", message)
    }

    fn conflict(kind: &str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::CONFLICT, kind, message)
    }

    fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

impl From<RefineError> for ApiError {
    fn from(e: RefineError) -> Self {
        match e {
            RefineError::NoViolation(_) => ApiError::conflict("no_violation", e.to_string()),
            RefineError::GenerationFailure(_) => {
                ApiError::new(StatusCode::BAD_GATEWAY, "generation_failure", e.to_string())
            }
            RefineError::Llm(_) => ApiError::new(StatusCode::BAD_GATEWAY, "adapter", e.to_string()),
            RefineError::InvalidArgument(_) => {
                ApiError::bad_request("invalid_argument", e.to_string())
            }
            RefineError::Memory(_) | RefineError::Critic(_) => ApiError::internal(e.to_string()),
        }
    }
}

type ApiResult = Result<Json<Value>, ApiError>;

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/session", post(create_session))
        .route("/session/{id}/chat", post(chat))
        .route("/session/{id}/run", post(run))
        .route("/session/{id}/fix", post(fix))
        .route("/session/{id}/trajectory/{tid}", get(trajectory))
        .route("/session/{id}/deploy", post(deploy_run))
        .route("/critics", get(critics))
        .with_state(state)
}

fn check_selection(names: Option<Vec<String>>) -> Result<BTreeSet<String>, ApiError> {
    let Some(names) = names else {
        return Ok(all_critics());
    };
    if let Some(bad) = names
        .iter()
        .find(|n| !BUILTIN_CRITICS.contains(&n.as_str()))
    {
        return Err(ApiError::bad_request(
            "unknown_critic",
            format!("unknown critic `{bad}`"),
        ));
    }
    Ok(names.into_iter().collect())
}

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> T + Send + 'static,
) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(e.to_string()))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateSession {
    /// Scene file name (without `.json`) under the scene directory.
    scene: Option<String>,
    /// Inline scene document.
    scene_doc: Option<Value>,
    critics: Option<Vec<String>>,
}

async fn create_session(
    State(state): State<AppState>,
    Json(req): Json<CreateSession>,
) -> ApiResult {
    let scene = match (req.scene, req.scene_doc) {
        (Some(name), None) => {
            if name.is_empty()
                || !name
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
            {
                return Err(ApiError::bad_request(
                    "scene",
                    format!("invalid scene name `{name}`"),
                ));
            }
            let path = state.inner.cfg.scene_dir.join(format!("{name}.json"));
            if !path.exists() {
                return Err(ApiError::not_found(format!("no scene `{name}`")));
            }
            Scene::from_file(&path).map_err(|e| ApiError::bad_request("scene", e.to_string()))?
        }
        (None, Some(doc)) => Scene::from_json_str(&doc.to_string())
            .map_err(|e| ApiError::bad_request("scene", e.to_string()))?,
        _ => {
            return Err(ApiError::bad_request(
                "scene",
                "give exactly one of `scene` or `scene_doc`",
            ))
        }
    };
    let selected = check_selection(req.critics)?;
    let id = state.inner.next_session.fetch_add(1, Ordering::Relaxed);
    let objects: Vec<&str> = scene.objects.iter().map(|o| o.id.as_str()).collect();
    let body = json!({"id": id, "objects": objects, "critics": selected});
    let session = Session {
        scene,
        busy: AtomicBool::new(false),
        data: Mutex::new(SessionData {
            selected,
            next_run: 1,
            ..SessionData::default()
        }),
    };
    state
        .inner
        .sessions
        .write()
        .expect("session table")
        .insert(id, Arc::new(session));
    Ok(Json(body))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ChatRequest {
    message: String,
}

async fn chat(
    State(state): State<AppState>,
    Path(id): Path<u64>,
    Json(req): Json<ChatRequest>,
) -> ApiResult {
    if req.message.trim().is_empty() {
        return Err(ApiError::bad_request("empty_message", "message is empty"));
    }
    let session = state.session(id)?;
    let _guard = BusyGuard::acquire(&session.busy)?;
    let (st, s, message) = (state.clone(), session.clone(), req.message.clone());
    let revision = blocking(move || {
        let cfg = &st.inner.cfg;
        let env = Env {
            scene: &s.scene,
            model: &cfg.model,
            interpreter: &cfg.settings.interpreter,
            critics: &cfg.settings.critics,
        };
        generate_program(&message, &env, st.inner.llm.as_ref(), &st.inner.memory)
    })
    .await??;
    session.data.lock().expect("session").request = Some(req.message);
    Ok(Json(
        json!({"program": revision.program, "explanation": revision.explanation}),
    ))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RunRequest {
    program: String,
    critics: Option<Vec<String>>,
}

async fn run(
    State(state): State<AppState>,
    Path(id): Path<u64>,
    Json(req): Json<RunRequest>,
) -> ApiResult {
    let session = state.session(id)?;
    let _guard = BusyGuard::acquire(&session.busy)?;
    let program = parse_program(&req.program)
        .map_err(|e| ApiError::bad_request("parse", e.to_string()).with("line", json!(e.line())))?;
    let selected = match req.critics {
        Some(c) => check_selection(Some(c))?,
        None => session.data.lock().expect("session").selected.clone(),
    };
    let (st, s) = (state.clone(), session.clone());
    let (trajectory, reports) = blocking(move || {
        let cfg = &st.inner.cfg;
        let traj =
            interpret(&program, &s.scene, &cfg.model, &cfg.settings.interpreter).map_err(|e| {
                ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "interpret", e.to_string())
                    .with("line", json!(e.line()))
            })?;
        let reports = run_critics(
            &traj,
            &s.scene,
            &cfg.model,
            &cfg.settings.critics,
            &all_critics(),
        )
        .map_err(|e| ApiError::internal(e.to_string()))?;
        Ok::<_, ApiError>((traj, reports))
    })
    .await??;
    let score = score_index(&reports).map_err(|e| ApiError::internal(e.to_string()))?;

    let request = session.data.lock().expect("session").request.clone();
    let mut record = InteractionRecord::new(
        request.unwrap_or_else(|| "(program entered directly)".into()),
        req.program.clone(),
    );
    record.feedback = reports
        .iter()
        .filter(|r| selected.contains(&r.critic))
        .cloned()
        .collect();
    record.score = Some(score.clone());
    let memory = state.inner.memory.clone();
    let record_id = blocking(move || memory.put(record))
        .await?
        .map_err(|e| ApiError::internal(e.to_string()))?;

    let run = Arc::new(Run {
        program: req.program,
        trajectory,
        reports,
        selected,
        score,
    });
    let tid = {
        let mut data = session.data.lock().expect("session");
        let tid = data.next_run;
        data.next_run += 1;
        data.program = Some(run.program.clone());
        data.latest = Some(tid);
        data.runs.insert(tid, run.clone());
        tid
    };
    let shown = run.selected_reports();
    Ok(Json(json!({
        "trajectory_id": tid,
        "record_id": record_id,
        "states": run.trajectory.states.len(),
        "duration_ms": run.trajectory.duration_ms(),
        "worst": worst_flag(&shown.iter().map(|r| (*r).clone()).collect::<Vec<_>>()),
        "reports": shown,
        "score": run.score,
    })))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FixRequest {
    critic: String,
}

async fn fix(
    State(state): State<AppState>,
    Path(id): Path<u64>,
    Json(req): Json<FixRequest>,
) -> ApiResult {
    if !BUILTIN_CRITICS.contains(&req.critic.as_str()) {
        return Err(ApiError::not_found(format!(
            "unknown critic `{}`",
            req.critic
        )));
    }
    let session = state.session(id)?;
    let _guard = BusyGuard::acquire(&session.busy)?;
    let (latest, request) = {
        let data = session.data.lock().expect("session");
        let latest = data.latest.and_then(|t| data.runs.get(&t).cloned());
        (latest, data.request.clone())
    };
    let latest =
        latest.ok_or_else(|| ApiError::conflict("no_violation", "nothing has been run yet"))?;
    let report = latest
        .reports
        .iter()
        .find(|r| r.critic == req.critic)
        .cloned()
        .ok_or_else(|| ApiError::internal("latest run lacks a report"))?;
    let record = InteractionRecord::new(
        request.unwrap_or_else(|| "(program entered directly)".into()),
        latest.program.clone(),
    );
    let (st, s) = (state.clone(), session.clone());
    let revision = blocking(move || {
        let cfg = &st.inner.cfg;
        let env = Env {
            scene: &s.scene,
            model: &cfg.model,
            interpreter: &cfg.settings.interpreter,
            critics: &cfg.settings.critics,
        };
        apply_fix(
            &record,
            &report,
            &env,
            st.inner.llm.as_ref(),
            &st.inner.memory,
        )
    })
    .await??;
    Ok(Json(json!({
        "critic": req.critic,
        "program": revision.program,
        "explanation": revision.explanation,
    })))
}

fn find_run(session: &Session, tid: u64) -> Result<Arc<Run>, ApiError> {
    session
        .data
        .lock()
        .expect("session")
        .runs
        .get(&tid)
        .cloned()
        .ok_or_else(|| ApiError::not_found(format!("no trajectory {tid}")))
}

async fn trajectory(State(state): State<AppState>, Path((id, tid)): Path<(u64, u64)>) -> ApiResult {
    let session = state.session(id)?;
    let run = find_run(&session, tid)?;
    let states: Vec<Value> = run
        .trajectory
        .to_jsonl()
        .lines()
        .map(|l| serde_json::from_str(l).expect("interchange lines are JSON"))
        .collect();
    let objects: Vec<Value> = session
        .scene
        .objects
        .iter()
        .map(|o| json!({"id": o.id, "position": o.position, "scale": o.scale, "kind": o.kind}))
        .collect();
    Ok(Json(json!({
        "trajectory_id": tid,
        "program": run.program,
        "duration_ms": run.trajectory.duration_ms(),
        "legs": run.trajectory.legs,
        "events": run.trajectory.attachment.events,
        "reports": run.selected_reports(),
        "score": run.score,
        "objects": objects,
        "states": states,
    })))
}

async fn critics(State(state): State<AppState>) -> Json<Value> {
    let described = CriticRegistry::default().describe(&state.inner.cfg.settings.critics);
    Json(Value::Array(
        described
            .into_iter()
            .map(|(name, thresholds)| json!({"name": name, "thresholds": thresholds}))
            .collect(),
    ))
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct DeployRequest {
    trajectory_id: Option<u64>,
    endpoint: Option<String>,
}

async fn deploy_run(
    State(state): State<AppState>,
    Path(id): Path<u64>,
    body: Option<Json<DeployRequest>>,
) -> ApiResult {
    let req = body.map(|b| b.0).unwrap_or_default();
    let session = state.session(id)?;
    let tid = match req.trajectory_id {
        Some(t) => t,
        None => session
            .data
            .lock()
            .expect("session")
            .latest
            .ok_or_else(|| ApiError::not_found("nothing has been run yet"))?,
    };
    let run = find_run(&session, tid)?;
    let addr = req
        .endpoint
        .or_else(|| state.inner.cfg.robot_addr.clone())
        .ok_or_else(|| {
            ApiError::bad_request("endpoint", "no robot endpoint given or configured")
        })?;
    let opts = state.inner.cfg.deploy;
    let outcome = blocking(move || deploy(&run.trajectory, &run.reports, &addr, &opts))
        .await?
        .map_err(|e| match &e {
            DeployError::Refused { critics } => {
                ApiError::conflict("deploy_refused", e.to_string()).with("critics", json!(critics))
            }
            DeployError::ConnectionLost {
                last_acked_t_ms,
                acked,
                ..
            } => ApiError::new(StatusCode::BAD_GATEWAY, "connection_lost", e.to_string())
                .with("last_acked_t_ms", json!(last_acked_t_ms))
                .with("frames_acked", json!(acked)),
            DeployError::Empty | DeployError::NotMonotone { .. } => ApiError::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                "trajectory",
                e.to_string(),
            ),
            _ => ApiError::new(StatusCode::BAD_GATEWAY, "robot", e.to_string()),
        })?;
    Ok(Json(json!({
        "trajectory_id": tid,
        "frames_sent": outcome.frames_sent,
        "last_t_ms": outcome.last_t_ms,
    })))
}
