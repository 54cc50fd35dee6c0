use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, MutexGuard, RwLock};
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{SecondsFormat, Utc};
use emoc_core::SampleId;
use serde::de::DeserializeOwned;
use serde_json::json;
use tower_http::cors::{AllowOrigin, CorsLayer};

use crate::api::{is_image, Pending, QueryBatchView, SampleVector, SessionList, SessionStatus, SessionSummary};
use crate::error::{Result, ServiceError};
use crate::log::EventLog;
use crate::render;
use crate::session::{CreateSession, ScoringJob, Session, Status, SubmitLabels, UpdateJob};

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub state_dir: PathBuf,
    /// How long a request waits for scoring or an update before answering
    /// 202.
    pub max_wait: Duration,
    pub retry_after: Duration,
    pub cors_origin: Option<String>,
}

impl ServiceConfig {
    pub fn new(state_dir: impl Into<PathBuf>) -> Self {
        ServiceConfig {
            state_dir: state_dir.into(),
            max_wait: Duration::from_secs(5),
            retry_after: Duration::from_millis(500),
            cors_origin: None,
        }
    }
}

struct Entry {
    session: Mutex<Session>,
    log: Mutex<EventLog>,
}

impl Entry {
    fn session(&self) -> MutexGuard<'_, Session> {
        self.session.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn log(&self) -> MutexGuard<'_, EventLog> {
        self.log.lock().unwrap_or_else(|e| e.into_inner())
    }
}

struct Inner {
    cfg: ServiceConfig,
    sessions: RwLock<BTreeMap<String, Arc<Entry>>>,
}

#[derive(Clone)]
pub struct AppState(Arc<Inner>);

pub fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

impl AppState {
    /// Replays every session log in the state directory and resumes updates
    /// that were accepted but not finished. Sessions whose log cannot be
    /// replayed are skipped with an error message.
    pub async fn start(cfg: ServiceConfig) -> Result<Self> {
        let dir = cfg.state_dir.join("sessions");
        let loaded = tokio::task::spawn_blocking(move || -> Result<Vec<(Session, EventLog)>> {
            let mut out = Vec::new();
            for path in EventLog::discover(&dir)? {
                let replayed = EventLog::open(&path).and_then(|(log, events)| Ok((Session::replay(&events)?, log)));
                match replayed {
                    Ok(pair) => out.push(pair),
                    Err(e) => tracing::error!(path = %path.display(), error = %e, "skipping session"),
                }
            }
            Ok(out)
        })
        .await
        .map_err(|e| ServiceError::Task(e.to_string()))??;

        let state = AppState(Arc::new(Inner { cfg, sessions: RwLock::new(BTreeMap::new()) }));
        for (session, log) in loaded {
            let id = session.id().to_string();
            let pending = session.status() == Status::Updating;
            let entry = Arc::new(Entry { session: Mutex::new(session), log: Mutex::new(log) });
            state.0.sessions.write().unwrap_or_else(|e| e.into_inner()).insert(id.clone(), Arc::clone(&entry));
            if pending {
                tracing::info!(session = %id, "resuming interrupted update");
                let job = entry.session().update_job()?;
                tokio::spawn(update_task(entry, job));
            }
        }
        Ok(state)
    }

    fn entry(&self, id: &str) -> Result<Arc<Entry>> {
        self.0
            .sessions
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::UnknownSession(id.to_string()))
    }

    /// Waits up to `max_wait` for background work. A zero wait never blocks
    /// the request; the task keeps running either way.
    async fn wait<T>(&self, task: tokio::task::JoinHandle<Result<T>>) -> Result<Option<T>> {
        let limit = self.0.cfg.max_wait;
        if limit.is_zero() {
            return Ok(None);
        }
        match tokio::time::timeout(limit, task).await {
            Ok(joined) => joined.map_err(|e| ServiceError::Task(e.to_string()))?.map(Some),
            Err(_) => Ok(None),
        }
    }

    fn pending(&self, session_id: &str, status: Status) -> Response {
        let retry = self.0.cfg.retry_after;
        let body = Pending { session_id: session_id.to_string(), status, retry_after_ms: retry.as_millis() as u64 };
        let secs = retry.as_secs_f64().ceil().max(1.0) as u64;
        (StatusCode::ACCEPTED, [(header::RETRY_AFTER, secs.to_string())], Json(body)).into_response()
    }
}

pub fn router(state: AppState) -> Router {
    let cors = state.0.cfg.cors_origin.as_deref().map(|origin| {
        let allow = if origin == "*" {
            AllowOrigin::any()
        } else {
            AllowOrigin::exact(HeaderValue::from_str(origin).expect("validated origin"))
        };
        CorsLayer::new()
            .allow_origin(allow)
            .allow_methods([Method::GET, Method::POST])
            .allow_headers([header::CONTENT_TYPE])
    });
    let router = Router::new()
        .route("/healthz", get(healthz))
        .route("/sessions", post(create_session).get(list_sessions))
        .route("/sessions/{id}", get(session_status))
        .route("/sessions/{id}/next-batch", post(next_batch))
        .route("/sessions/{id}/labels", post(submit_labels))
        .route("/sessions/{id}/samples/{sample_id}", get(sample))
        .route("/sessions/{id}/results.csv", get(results_csv))
        .fallback(|| async { ServiceError::BadRequest("no such route".into()) })
        .with_state(state);
    match cors {
        Some(c) => router.layer(c),
        None => router,
    }
}

fn parse<T: DeserializeOwned>(body: &Bytes) -> Result<T> {
    serde_json::from_slice(body).map_err(|e| {
        if e.is_data() {
            ServiceError::invalid("invalid_request", e.to_string())
        } else {
            ServiceError::BadRequest(format!("malformed JSON: {e}"))
        }
    })
}

async fn healthz(State(state): State<AppState>) -> Json<serde_json::Value> {
    let n = state.0.sessions.read().unwrap_or_else(|e| e.into_inner()).len();
    Json(json!({ "status": "ok", "sessions": n, "time": now() }))
}

async fn create_session(State(state): State<AppState>, body: Bytes) -> Result<Response> {
    let request: CreateSession = parse(&body)?;
    let id = uuid::Uuid::new_v4().simple().to_string();
    let dir = state.0.cfg.state_dir.join("sessions");
    let (session, log) = tokio::task::spawn_blocking(move || -> Result<_> {
        let session = Session::create(id, now(), request)?;
        let log = EventLog::create(&dir, session.id(), &session.created_event())?;
        Ok((session, log))
    })
    .await
    .map_err(|e| ServiceError::Task(e.to_string()))??;
    let view = SessionStatus::of(&session);
    let id = session.id().to_string();
    let entry = Arc::new(Entry { session: Mutex::new(session), log: Mutex::new(log) });
    state.0.sessions.write().unwrap_or_else(|e| e.into_inner()).insert(id.clone(), entry);
    tracing::info!(session = %id, "created");
    Ok((StatusCode::CREATED, [(header::LOCATION, format!("/sessions/{id}"))], Json(view)).into_response())
}

async fn list_sessions(State(state): State<AppState>) -> Json<SessionList> {
    let entries: Vec<Arc<Entry>> =
        state.0.sessions.read().unwrap_or_else(|e| e.into_inner()).values().cloned().collect();
    Json(SessionList { sessions: entries.iter().map(|e| SessionSummary::of(&e.session())).collect() })
}

async fn session_status(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<SessionStatus>> {
    let entry = state.entry(&id)?;
    let view = SessionStatus::of(&entry.session());
    Ok(Json(view))
}

async fn scoring_task(entry: Arc<Entry>, job: ScoringJob) -> Result<QueryBatchView> {
    let scored = tokio::task::spawn_blocking(move || job.run()).await;
    let mut s = entry.session();
    let scored = match scored {
        Ok(Ok(b)) => b,
        Ok(Err(e)) => {
            s.abort_scoring();
            return Err(e);
        }
        Err(e) => {
            s.abort_scoring();
            return Err(ServiceError::Task(e.to_string()));
        }
    };
    let event = s.batch_issued(scored, now());
    if let Err(e) = entry.log().append(&event) {
        s.abort_scoring();
        return Err(e);
    }
    s.apply(&event)?;
    Ok(QueryBatchView::of(&s).expect("batch just issued"))
}

async fn update_task(entry: Arc<Entry>, job: UpdateJob) -> Result<SessionStatus> {
    let model = tokio::task::spawn_blocking(move || job.run())
        .await
        .map_err(|e| ServiceError::Task(e.to_string()))?;
    let model = model.inspect_err(|e| tracing::error!(error = %e, "update failed"))?;
    let mut s = entry.session();
    let event = s.finish_update(model, now())?;
    entry.log().append(&event)?;
    Ok(SessionStatus::of(&s))
}

async fn next_batch(State(state): State<AppState>, Path(id): Path<String>) -> Result<Response> {
    let entry = state.entry(&id)?;
    let job = {
        let mut s = entry.session();
        match s.status() {
            Status::AwaitingLabels => {
                return Ok(Json(QueryBatchView::of(&s).expect("outstanding batch")).into_response())
            }
            Status::Scoring => return Ok(state.pending(&id, Status::Scoring)),
            Status::Updating => {
                return Err(ServiceError::conflict("wrong_state", "labels are being incorporated; retry shortly"))
            }
            Status::Idle => s.begin_scoring()?,
        }
    };
    let task = tokio::spawn(scoring_task(Arc::clone(&entry), job));
    match state.wait(task).await? {
        Some(view) => Ok(Json(view).into_response()),
        None => Ok(state.pending(&id, Status::Scoring)),
    }
}

async fn submit_labels(State(state): State<AppState>, Path(id): Path<String>, body: Bytes) -> Result<Response> {
    let entry = state.entry(&id)?;
    let request: SubmitLabels = parse(&body)?;
    let job = {
        let mut s = entry.session();
        let event = s.labels_accepted(&request, now())?;
        entry.log().append(&event)?;
        s.apply(&event)?;
        s.update_job()?
    };
    let task = tokio::spawn(update_task(Arc::clone(&entry), job));
    match state.wait(task).await? {
        Some(view) => Ok(Json(view).into_response()),
        None => Ok(state.pending(&id, Status::Updating)),
    }
}

async fn sample(State(state): State<AppState>, Path((id, sample_id)): Path<(String, SampleId)>) -> Result<Response> {
    let entry = state.entry(&id)?;
    let (x, label) = {
        let s = entry.session();
        (s.display_features(sample_id)?, s.label_of(sample_id))
    };
    if is_image(x.shape()) {
        let bytes = render::png(&x);
        return Ok(([(header::CONTENT_TYPE, "image/png")], bytes).into_response());
    }
    Ok(Json(SampleVector { sample_id, shape: x.shape().to_vec(), values: x.into_values(), label }).into_response())
}

async fn results_csv(State(state): State<AppState>, Path(id): Path<String>) -> Result<Response> {
    let entry = state.entry(&id)?;
    let history = entry.session().history().to_vec();
    let bytes = emoc_harness::export::records_to_csv(&history)?;
    Ok(([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], bytes).into_response())
}
