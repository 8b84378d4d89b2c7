//! Local HTTP service: serves trials to the browser runner, drives sessions
//! and ingests trajectory logs.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;

use steerlab::curvegen::TrialDocument;
use steerlab::fitting::{self, FitReport};
use steerlab::harness::{self, NextStep, Phase, Session, SessionEvent, TutorialDecision};
use steerlab::metrics::{self, SummaryRow, TrialMeasures, Trajectory};
use steerlab::models::{ModelForm, TrialFeatures};
use steerlab::Error;

/// Milliseconds on the session clock.
pub type Clock = Arc<dyn Fn() -> f64 + Send + Sync>;

pub fn system_clock() -> Clock {
    Arc::new(|| {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs_f64() * 1000.0)
            .unwrap_or(0.0)
    })
}

pub struct ServiceConfig {
    pub trials: Vec<TrialDocument>,
    pub data_dir: PathBuf,
    pub clock: Clock,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SessionRecord {
    session_id: String,
    session: Session,
    tutorial: Vec<TrialMeasures>,
    measures: Vec<TrialMeasures>,
}

pub struct AppState {
    trials: Vec<TrialDocument>,
    data_dir: PathBuf,
    clock: Clock,
    sessions: Mutex<HashMap<String, Arc<Mutex<SessionRecord>>>>,
}

impl AppState {
    /// Loads any sessions already persisted under `data_dir/sessions`.
    pub fn open(cfg: ServiceConfig) -> steerlab::Result<Self> {
        if cfg.trials.len() != harness::TRIAL_TYPES {
            return Err(Error::Plan(format!(
                "the service needs {} trials, got {}",
                harness::TRIAL_TYPES,
                cfg.trials.len()
            )));
        }
        let root = cfg.data_dir.join("sessions");
        fs::create_dir_all(&root)?;
        let mut sessions = HashMap::new();
        for entry in fs::read_dir(&root)? {
            let path = entry?.path().join("session.json");
            if path.is_file() {
                let rec: SessionRecord = serde_json::from_str(&fs::read_to_string(&path)?)?;
                sessions.insert(rec.session_id.clone(), Arc::new(Mutex::new(rec)));
            }
        }
        Ok(Self {
            trials: cfg.trials,
            data_dir: cfg.data_dir,
            clock: cfg.clock,
            sessions: Mutex::new(sessions),
        })
    }

    fn session_dir(&self, id: &str) -> PathBuf {
        self.data_dir.join("sessions").join(id)
    }

    fn session(&self, id: &str) -> Result<Arc<Mutex<SessionRecord>>, ApiError> {
        self.sessions
            .lock()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "unknown_session", format!("no session {id}")))
    }

    fn persist(&self, rec: &SessionRecord) -> Result<(), ApiError> {
        let dir = self.session_dir(&rec.session_id);
        fs::create_dir_all(dir.join("logs")).map_err(ApiError::internal)?;
        write_atomic(&dir.join("session.json"), &serde_json::to_string_pretty(rec).map_err(ApiError::internal)?)?;
        write_atomic(&dir.join("measures.csv"), &metrics::write_measures_csv(&rec.measures))?;
        write_atomic(&dir.join("tutorial_measures.csv"), &metrics::write_measures_csv(&rec.tutorial))?;
        Ok(())
    }
}

fn write_atomic(path: &Path, text: &str) -> Result<(), ApiError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, text).map_err(ApiError::internal)?;
    fs::rename(&tmp, path).map_err(ApiError::internal)
}

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

    fn internal(e: impl std::fmt::Display) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string())
    }

    fn invalid_log(e: Error) -> Self {
        match e {
            Error::Protocol { .. } => Self::new(StatusCode::CONFLICT, "protocol", e.to_string()),
            Error::Io(_) => Self::internal(e),
            other => Self::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_log", other.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({ "error": { "code": self.code, "message": self.message } });
        (self.status, Json(body)).into_response()
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/v1/trials", get(list_trials))
        .route("/api/v1/trials/{trial_id}", get(get_trial))
        .route("/api/v1/sessions", post(create_session))
        .route("/api/v1/sessions/{id}/next", get(next_step))
        .route("/api/v1/sessions/{id}/logs", post(post_log))
        .route("/api/v1/sessions/{id}/report", get(report))
        .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such route") })
        .with_state(state)
}

pub async fn serve(cfg: ServiceConfig, addr: &str) -> steerlab::Result<()> {
    let state = Arc::new(AppState::open(cfg)?);
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state)).await?;
    Ok(())
}

async fn list_trials(State(s): State<Arc<AppState>>) -> Json<Vec<TrialDocument>> {
    Json(s.trials.clone())
}

async fn get_trial(
    State(s): State<Arc<AppState>>,
    UrlPath(trial_id): UrlPath<String>,
) -> Result<Json<TrialDocument>, ApiError> {
    s.trials
        .iter()
        .find(|d| d.trial_id == trial_id)
        .cloned()
        .map(Json)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "unknown_trial", format!("no trial {trial_id}")))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateSession {
    participant_id: String,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    reversed: bool,
}

fn valid_participant(id: &str) -> bool {
    !id.is_empty() && id.len() <= 64 && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

async fn create_session(State(s): State<Arc<AppState>>, body: Bytes) -> Result<Response, ApiError> {
    let req: CreateSession = serde_json::from_slice(&body)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "invalid_request", e.to_string()))?;
    if !valid_participant(&req.participant_id) {
        return Err(ApiError::new(
            StatusCode::BAD_REQUEST,
            "invalid_request",
            "participant_id must be 1-64 characters of [A-Za-z0-9_-]",
        ));
    }
    let ids: Vec<String> = s.trials.iter().map(|d| d.trial_id.clone()).collect();
    let plan = harness::make_plan(&req.participant_id, &ids, req.seed, req.reversed)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "invalid_plan", e.to_string()))?;
    let record = {
        let mut sessions = s.sessions.lock().unwrap();
        let mut n = sessions.len() + 1;
        let id = loop {
            let id = format!("S{n:04}");
            if !sessions.contains_key(&id) && !s.session_dir(&id).exists() {
                break id;
            }
            n += 1;
        };
        let rec = SessionRecord {
            session_id: id.clone(),
            session: Session::new(plan.clone()),
            tutorial: Vec::new(),
            measures: Vec::new(),
        };
        sessions.insert(id, Arc::new(Mutex::new(rec.clone())));
        rec
    };
    s.persist(&record)?;
    let body = json!({ "session_id": record.session_id, "plan": plan });
    Ok((StatusCode::CREATED, Json(body)).into_response())
}

// Ends a break whose minimum duration has passed.
fn settle_break(rec: &mut SessionRecord, now: f64) -> bool {
    if rec.session.state.phase == Phase::Break && rec.session.state.break_remaining_ms(now) == Some(0.0) {
        return rec.session.advance(SessionEvent::Resume { at_ms: now }).is_ok();
    }
    false
}

async fn next_step(
    State(s): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<NextStep>, ApiError> {
    let entry = s.session(&id)?;
    let mut rec = entry.lock().unwrap();
    let now = (s.clock)();
    if settle_break(&mut rec, now) {
        s.persist(&rec)?;
    }
    Ok(Json(rec.session.next(now)))
}

#[derive(Debug, Serialize)]
struct LogAccepted {
    measures: TrialMeasures,
    #[serde(skip_serializing_if = "Option::is_none")]
    tutorial_decision: Option<TutorialDecision>,
    phase: Phase,
    next: NextStep,
}

#[derive(Debug, Deserialize)]
struct LogEnvelope {
    log: String,
}

fn log_text(body: &Bytes) -> Result<String, ApiError> {
    let text = std::str::from_utf8(body)
        .map_err(|_| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_log", "body is not UTF-8"))?;
    if text.trim_start().starts_with('{') {
        let env: LogEnvelope = serde_json::from_str(text)
            .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_log", e.to_string()))?;
        Ok(env.log)
    } else {
        Ok(text.to_string())
    }
}

async fn post_log(
    State(s): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    body: Bytes,
) -> Result<Json<LogAccepted>, ApiError> {
    let entry = s.session(&id)?;
    let text = log_text(&body)?;
    let mut rec = entry.lock().unwrap();
    let now = (s.clock)();
    settle_break(&mut rec, now);
    let expected = rec.session.next(now);
    let phase = expected.phase;
    if !matches!(phase, Phase::Tutorial | Phase::Experiment) {
        return Err(ApiError::new(
            StatusCode::CONFLICT,
            "protocol",
            format!("no trial is expected in phase {phase}"),
        ));
    }
    let traj = Trajectory::parse_trajlog(&text).map_err(ApiError::invalid_log)?;
    let want = expected.trial.as_ref().expect("active phases carry a trial");
    if traj.trial_id != want.trial_id || traj.flipped != want.flipped {
        return Err(ApiError::new(
            StatusCode::CONFLICT,
            "unexpected_trial",
            format!(
                "expected {} (flipped={}), got {} (flipped={})",
                want.trial_id, want.flipped, traj.trial_id, traj.flipped
            ),
        ));
    }
    let measures = metrics::analyze_log(&text, &s.trials).map_err(ApiError::invalid_log)?;
    let decision = rec
        .session
        .advance(SessionEvent::TrialCompleted {
            v_avg: measures.v_avg,
            exits: measures.exits,
            at_ms: now,
        })
        .map_err(ApiError::invalid_log)?;

    let index = expected.index.unwrap_or(0);
    let name = format!("{phase}-{index:03}-{}.trajlog", traj.trial_id);
    let dir = s.session_dir(&id).join("logs");
    fs::create_dir_all(&dir).map_err(ApiError::internal)?;
    fs::write(dir.join(name), text.as_bytes()).map_err(ApiError::internal)?;
    if phase == Phase::Tutorial {
        rec.tutorial.push(measures.clone());
    } else {
        rec.measures.push(measures.clone());
    }
    s.persist(&rec)?;
    Ok(Json(LogAccepted {
        measures,
        tutorial_decision: decision,
        phase: rec.session.state.phase,
        next: rec.session.next(now),
    }))
}

#[derive(Debug, Serialize)]
struct Report {
    session_id: String,
    participant_id: String,
    phase: Phase,
    measures: Vec<TrialMeasures>,
    measures_csv: String,
    tutorial_measures_csv: String,
    summary: Vec<SummaryRow>,
    #[serde(skip_serializing_if = "Option::is_none")]
    fits: Option<FitReport>,
    fit_errors: Vec<String>,
}

async fn report(State(s): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Result<Json<Report>, ApiError> {
    let entry = s.session(&id)?;
    let rec = entry.lock().unwrap().clone();
    let ids: Vec<String> = s.trials.iter().map(|d| d.trial_id.clone()).collect();
    let summary = metrics::summarize(&rec.measures, &ids).map_err(ApiError::internal)?;
    let (fits, fit_errors) = session_fits(&s.trials, &summary);
    Ok(Json(Report {
        session_id: rec.session_id,
        participant_id: rec.session.plan.participant_id,
        phase: rec.session.state.phase,
        measures_csv: metrics::write_measures_csv(&rec.measures),
        tutorial_measures_csv: metrics::write_measures_csv(&rec.tutorial),
        measures: rec.measures,
        summary,
        fits,
        fit_errors,
    }))
}

// Fits every model once all trial types have measurements.
fn session_fits(trials: &[TrialDocument], summary: &[SummaryRow]) -> (Option<FitReport>, Vec<String>) {
    if summary.len() < trials.len() {
        return (None, vec![format!("{} of {} trial types measured", summary.len(), trials.len())]);
    }
    let features: Result<Vec<TrialFeatures>, Error> = trials
        .iter()
        .zip(summary)
        .map(|(d, row)| Ok(d.features()?.with_mt(row.mt_mean)))
        .collect();
    let features = match features {
        Ok(f) => f,
        Err(e) => return (None, vec![e.to_string()]),
    };
    let (ok, skipped) = fitting::fit_all(&ModelForm::standard_set(), &features);
    let errors = skipped.iter().map(|(f, e)| format!("{}: {e}", f.label())).collect();
    match FitReport::from_fits(&ok) {
        Ok(r) if !ok.is_empty() => (Some(r), errors),
        Ok(_) => (None, errors),
        Err(e) => (None, vec![e.to_string()]),
    }
}
