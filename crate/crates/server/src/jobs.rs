//! Job API: submission, status, logs, artifacts, the review queue and a
//! server-sent event stream of status changes.

use std::convert::Infallible;
use std::path::Path as FsPath;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, FromRequest, Multipart, Path, Request, State};
use axum::http::{header, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::stream::{self, Stream};
use serde::{Deserialize, Serialize};
use tokio::sync::broadcast;

use scenefix_core::orchestrator::{
    CandidateView, Engine, JobOptions, JobRecord, JobStatus, ReviewVerdict, SubtaskPhase,
};

use crate::error::{ApiError, ApiResult};

const BODY_LIMIT: usize = 64 * 1024 * 1024;
const EVENT_BUFFER: usize = 1024;

/// What `GET /jobs/{id}` returns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JobView {
    pub job: JobRecord,
    pub pending: Vec<CandidateView>,
    pub artifacts: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Submitted {
    pub id: String,
    pub status: JobStatus,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubtaskStatus {
    pub id: String,
    pub phase: SubtaskPhase,
}

/// One server-sent `status` event.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatusEvent {
    pub job_id: String,
    pub status: JobStatus,
    pub subtasks: Vec<SubtaskStatus>,
    pub pending: usize,
}

impl StatusEvent {
    pub fn of(rec: &JobRecord) -> Self {
        Self {
            job_id: rec.id.clone(),
            status: rec.status,
            subtasks: rec
                .subtasks
                .iter()
                .map(|s| SubtaskStatus {
                    id: s.subtask.id.clone(),
                    phase: s.phase,
                })
                .collect(),
            pending: rec.subtasks.iter().filter(|s| s.pending.is_some()).count(),
        }
    }
}

/// Body of a JSON review request. Substitution needs a multipart upload.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewRequest {
    pub action: String,
}

/// The `options` part of a submission. `description` may come here or as
/// its own part.
#[derive(Clone, Debug, Default, Deserialize)]
struct SubmitOptions {
    description: Option<String>,
    #[serde(flatten)]
    job: JobOptions,
}

#[derive(Clone)]
pub struct AppState {
    engine: Arc<Engine>,
    events: broadcast::Sender<StatusEvent>,
}

impl AppState {
    /// Installs the engine observer that feeds the event stream.
    pub fn new(engine: Arc<Engine>) -> Self {
        let (events, _) = broadcast::channel(EVENT_BUFFER);
        let tx = events.clone();
        engine.set_observer(Arc::new(move |rec: &JobRecord| {
            let _ = tx.send(StatusEvent::of(rec));
        }));
        Self { engine, events }
    }

    pub fn engine(&self) -> &Arc<Engine> {
        &self.engine
    }

    fn view(&self, id: &str) -> ApiResult<JobView> {
        Ok(JobView {
            job: self.engine.record(id)?,
            pending: self.engine.pending(id)?,
            artifacts: self.engine.artifacts(id)?,
        })
    }

    /// Runs a job on the blocking pool without waiting for it.
    pub fn spawn_run(&self, id: String) {
        let engine = self.engine.clone();
        tokio::task::spawn_blocking(move || {
            if let Err(e) = engine.run(&id) {
                tracing::warn!(job = %id, error = %e, "job run failed");
            }
        });
    }

    /// Loads every job persisted under `root` and continues the unfinished ones.
    pub fn resume_persisted(&self, root: &FsPath) -> std::io::Result<Vec<String>> {
        let mut resumed = Vec::new();
        if !root.exists() {
            return Ok(resumed);
        }
        let mut ids: Vec<String> = std::fs::read_dir(root)?
            .filter_map(|e| e.ok())
            .filter(|e| e.path().join("job.json").exists())
            .map(|e| e.file_name().to_string_lossy().to_string())
            .collect();
        ids.sort();
        for id in ids {
            match self.engine.load(&id) {
                Ok(rec) if !rec.status.is_terminal() => {
                    self.spawn_run(id.clone());
                    resumed.push(id);
                }
                Ok(_) => {}
                Err(e) => tracing::warn!(job = %id, error = %e, "skipping unreadable job"),
            }
        }
        Ok(resumed)
    }
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::Internal(e.to_string()))?
}

async fn text_field(field: axum::extract::multipart::Field<'_>) -> ApiResult<String> {
    field.text().await.map_err(|e| ApiError::BadRequest(e.to_string()))
}

async fn submit(State(app): State<AppState>, mut form: Multipart) -> ApiResult<(StatusCode, Json<Submitted>)> {
    let mut image: Option<Bytes> = None;
    let mut description: Option<String> = None;
    let mut options = SubmitOptions::default();
    while let Some(field) = form.next_field().await.map_err(|e| ApiError::BadRequest(e.to_string()))? {
        match field.name().unwrap_or_default() {
            "image" => image = Some(field.bytes().await.map_err(|e| ApiError::BadRequest(e.to_string()))?),
            "description" => description = Some(text_field(field).await?),
            "options" => {
                let text = text_field(field).await?;
                options = serde_json::from_str(&text)
                    .map_err(|e| ApiError::BadRequest(format!("options: {e}")))?;
            }
            other => return Err(ApiError::BadRequest(format!("unexpected part {other:?}"))),
        }
    }
    let image = image.ok_or_else(|| ApiError::BadRequest("missing image part".into()))?;
    let description = description
        .or(options.description)
        .ok_or_else(|| ApiError::BadRequest("missing description".into()))?;
    let engine = app.engine.clone();
    let job_options = options.job;
    let id = blocking(move || Ok(engine.submit(&image, &description, job_options)?)).await?;
    app.spawn_run(id.clone());
    Ok((
        StatusCode::CREATED,
        Json(Submitted {
            id,
            status: JobStatus::Pending,
        }),
    ))
}

async fn get_job(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<JobView>> {
    Ok(Json(app.view(&id)?))
}

async fn get_log(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let body = app.engine.log_jsonl(&id)?;
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], body).into_response())
}

async fn get_artifact(State(app): State<AppState>, Path(hash): Path<String>) -> ApiResult<Response> {
    let bytes = app.engine.artifact(&hash)?;
    Ok(([(header::CONTENT_TYPE, "image/png")], bytes).into_response())
}

fn verdict(action: &str, file: Option<Bytes>) -> ApiResult<ReviewVerdict> {
    match (action, file) {
        ("approve", None) => Ok(ReviewVerdict::Approve),
        ("reject_retry", None) => Ok(ReviewVerdict::RejectRetry),
        ("substitute", Some(png)) => Ok(ReviewVerdict::Substitute(png.to_vec())),
        ("substitute", None) => Err(ApiError::BadRequest("substitute needs a file part".into())),
        ("approve" | "reject_retry", Some(_)) => {
            Err(ApiError::BadRequest(format!("{action} does not take a file")))
        }
        (other, _) => Err(ApiError::BadRequest(format!("unknown action {other:?}"))),
    }
}

async fn parse_review(req: Request) -> ApiResult<ReviewVerdict> {
    let multipart = req
        .headers()
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.starts_with("multipart/form-data"));
    if !multipart {
        let Json(body) = Json::<ReviewRequest>::from_request(req, &())
            .await
            .map_err(|e| ApiError::BadRequest(e.body_text()))?;
        return verdict(&body.action, None);
    }
    let mut form = Multipart::from_request(req, &())
        .await
        .map_err(|e| ApiError::BadRequest(e.body_text()))?;
    let mut action = None;
    let mut file = None;
    while let Some(field) = form.next_field().await.map_err(|e| ApiError::BadRequest(e.to_string()))? {
        match field.name().unwrap_or_default() {
            "action" => action = Some(text_field(field).await?),
            "file" => file = Some(field.bytes().await.map_err(|e| ApiError::BadRequest(e.to_string()))?),
            other => return Err(ApiError::BadRequest(format!("unexpected part {other:?}"))),
        }
    }
    let action = action.ok_or_else(|| ApiError::BadRequest("missing action part".into()))?;
    verdict(&action, file)
}

async fn review(
    State(app): State<AppState>,
    Path((id, sid)): Path<(String, String)>,
    req: Request,
) -> ApiResult<Json<JobView>> {
    let v = parse_review(req).await?;
    let engine = app.engine.clone();
    let job = id.clone();
    blocking(move || Ok(engine.review_action(&job, &sid, v)?)).await?;
    Ok(Json(app.view(&id)?))
}

fn sse_event(e: &StatusEvent) -> Event {
    Event::default()
        .event("status")
        .json_data(e)
        .expect("status event serializes")
}

/// Sends the current status, then every change, and closes once the job is done.
async fn events(
    State(app): State<AppState>,
    Path(id): Path<String>,
) -> ApiResult<Sse<impl Stream<Item = Result<Event, Infallible>>>> {
    let rx = app.events.subscribe();
    let first = StatusEvent::of(&app.engine.record(&id)?);
    let done = first.status.is_terminal();
    let state = (Some(first), rx, id, done);
    let s = stream::unfold(state, |(first, mut rx, id, done)| async move {
        if let Some(f) = first {
            let ev = sse_event(&f);
            return Some((Ok(ev), (None, rx, id, done)));
        }
        if done {
            return None;
        }
        loop {
            match rx.recv().await {
                Ok(e) if e.job_id == id => {
                    let done = e.status.is_terminal();
                    return Some((Ok(sse_event(&e)), (None, rx, id, done)));
                }
                Ok(_) | Err(broadcast::error::RecvError::Lagged(_)) => continue,
                Err(broadcast::error::RecvError::Closed) => return None,
            }
        }
    });
    Ok(Sse::new(s).keep_alive(KeepAlive::new().interval(Duration::from_secs(15))))
}

pub fn router(app: AppState) -> Router {
    Router::new()
        .route("/jobs", post(submit))
        .route("/jobs/{id}", get(get_job))
        .route("/jobs/{id}/log", get(get_log))
        .route("/jobs/{id}/events", get(events))
        .route("/jobs/{id}/subtasks/{sid}/review", post(review))
        .route("/artifacts/{hash}", get(get_artifact))
        .layer(DefaultBodyLimit::max(BODY_LIMIT))
        .with_state(app)
}
