//! HTTP annotation service over a relabel queue.
//!
//! All queue state lives behind one mutex. An accepted label decision is
//! appended to the correction log and fsynced while the lock is held, before
//! the response goes out, so the log order is the decision order and a crash
//! can never lose an acknowledged decision. On startup the log is replayed to
//! mark the items already decided; skips are not logged and do not survive a
//! restart.
//!
//! | method | path                     | responses           |
//! |--------|--------------------------|---------------------|
//! | GET    | `/api/queue/next`        | 200 item, 204 empty |
//! | POST   | `/api/items/{id}/label`  | 200, 404, 409, 422  |
//! | POST   | `/api/items/{id}/skip`   | 200, 404, 409       |
//! | GET    | `/api/progress`          | 200                 |
//! | GET    | `/api/labelspace`        | 200                 |
//!
//! There is no authentication.

use std::collections::HashMap;
use std::future::Future;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use relabel_core::{CorrectionRecord, CorrectionSource, LabelSpace, QueueItem, QueueStatus, RelabelQueue};
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;
use tower_http::services::ServeDir;

use crate::error::{Error, Result};
use crate::io::{self, CorrectionLog};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct References {
    pub prev_label: String,
    pub pred_label: String,
    /// Rounded to 3 decimals.
    pub pred_prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueItemView {
    pub id: String,
    pub text: String,
    pub references: References,
    /// 1-based position in queue order.
    pub position: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassCount {
    pub label: String,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgressView {
    pub total: usize,
    pub done: usize,
    pub skipped: usize,
    pub pending: usize,
    /// Decisions per chosen label, in label-space order.
    pub per_class: Vec<ClassCount>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionAck {
    pub id: String,
    pub status: QueueStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
}

#[derive(Debug, thiserror::Error)]
pub enum DecisionError {
    #[error("no queue item with id {0:?}")]
    UnknownId(String),
    #[error("item {0:?} already has a decision")]
    AlreadyDone(String),
    #[error("{0:?} is not in the label space")]
    InvalidLabel(String),
    #[error(transparent)]
    Log(#[from] Error),
}

impl DecisionError {
    pub fn code(&self) -> &'static str {
        match self {
            DecisionError::UnknownId(_) => "unknown_id",
            DecisionError::AlreadyDone(_) => "already_done",
            DecisionError::InvalidLabel(_) => "invalid_label",
            DecisionError::Log(_) => "log_write_failed",
        }
    }

    pub fn status(&self) -> StatusCode {
        match self {
            DecisionError::UnknownId(_) => StatusCode::NOT_FOUND,
            DecisionError::AlreadyDone(_) => StatusCode::CONFLICT,
            DecisionError::InvalidLabel(_) => StatusCode::UNPROCESSABLE_ENTITY,
            DecisionError::Log(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

fn error_response(status: StatusCode, code: &str, message: String) -> Response {
    (status, Json(ErrorBody { error: code.into(), message })).into_response()
}

impl IntoResponse for DecisionError {
    fn into_response(self) -> Response {
        error_response(self.status(), self.code(), self.to_string())
    }
}

struct Inner {
    items: Vec<QueueItem>,
    index: HashMap<String, usize>,
    /// Order in which skipped items come back: lowest first.
    skip_rank: Vec<u64>,
    skip_clock: u64,
    per_class: Vec<usize>,
    log: CorrectionLog,
}

pub struct ServiceState {
    label_space: LabelSpace,
    inner: Mutex<Inner>,
}

fn now() -> i64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs() as i64).unwrap_or(0)
}

impl ServiceState {
    /// Loads the queue, replays `log_path` if it exists and opens it for
    /// appending. Every item starts pending; the log alone decides which are done.
    pub fn open(queue: RelabelQueue, label_space: LabelSpace, log_path: &Path) -> Result<Self> {
        let corrupt = |reason: String| Error::CorruptLog { path: log_path.to_path_buf(), reason };
        let mut index = HashMap::new();
        let mut items = queue.items;
        for (i, item) in items.iter_mut().enumerate() {
            if index.insert(item.id.clone(), i).is_some() {
                return Err(Error::Config(format!("queue has duplicate id {:?}", item.id)));
            }
            item.status = QueueStatus::Pending;
        }
        let mut per_class = vec![0; label_space.len()];
        if log_path.exists() {
            for (line, rec) in io::read_jsonl::<CorrectionRecord>(log_path)? {
                let &pos = index
                    .get(&rec.id)
                    .ok_or_else(|| corrupt(format!("line {line}: id {:?} is not in the queue", rec.id)))?;
                if items[pos].status == QueueStatus::Done {
                    return Err(corrupt(format!("line {line}: second decision for id {:?}", rec.id)));
                }
                let class = label_space
                    .index_of(&rec.new_label)
                    .ok_or_else(|| corrupt(format!("line {line}: label {:?} is not in the label space", rec.new_label)))?;
                items[pos].status = QueueStatus::Done;
                per_class[class] += 1;
            }
        }
        let log = CorrectionLog::open(log_path)?;
        let n = items.len();
        Ok(ServiceState {
            label_space,
            inner: Mutex::new(Inner { items, index, skip_rank: vec![0; n], skip_clock: 0, per_class, log }),
        })
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn label_space(&self) -> &LabelSpace {
        &self.label_space
    }

    /// First pending item in queue order; otherwise the skipped item that was
    /// skipped longest ago; `None` when every item is done.
    pub fn next_item(&self) -> Option<QueueItemView> {
        let inner = self.lock();
        let total = inner.items.len();
        let pos = inner.items.iter().position(|i| i.status == QueueStatus::Pending).or_else(|| {
            (0..total)
                .filter(|&i| inner.items[i].status == QueueStatus::Skipped)
                .min_by_key(|&i| inner.skip_rank[i])
        })?;
        let item = &inner.items[pos];
        Some(QueueItemView {
            id: item.id.clone(),
            text: item.text.clone(),
            references: References {
                prev_label: item.ref_prev_label.clone(),
                pred_label: item.ref_pred_label.clone(),
                pred_prob: (item.ref_pred_prob * 1000.0).round() / 1000.0,
            },
            position: pos + 1,
            total,
        })
    }

    fn open_item(inner: &Inner, id: &str) -> Result<usize, DecisionError> {
        let &pos = inner.index.get(id).ok_or_else(|| DecisionError::UnknownId(id.into()))?;
        if inner.items[pos].status == QueueStatus::Done {
            return Err(DecisionError::AlreadyDone(id.into()));
        }
        Ok(pos)
    }

    /// Records a label decision. The log line is durable when this returns `Ok`.
    pub fn submit_label(&self, id: &str, label: &str) -> Result<CorrectionRecord, DecisionError> {
        let mut inner = self.lock();
        let pos = Self::open_item(&inner, id)?;
        let class = self.label_space.index_of(label).ok_or_else(|| DecisionError::InvalidLabel(label.into()))?;
        let item = &inner.items[pos];
        let record = CorrectionRecord {
            id: item.id.clone(),
            new_label: label.into(),
            source: CorrectionSource::Human,
            ref_prev_label: item.ref_prev_label.clone(),
            ref_pred_label: item.ref_pred_label.clone(),
            ts: now(),
        };
        inner.log.append(&record)?;
        inner.items[pos].status = QueueStatus::Done;
        inner.per_class[class] += 1;
        Ok(record)
    }

    /// Moves an item to the back of the skipped list. Nothing is logged.
    pub fn skip(&self, id: &str) -> Result<(), DecisionError> {
        let mut inner = self.lock();
        let pos = Self::open_item(&inner, id)?;
        inner.skip_clock += 1;
        inner.skip_rank[pos] = inner.skip_clock;
        inner.items[pos].status = QueueStatus::Skipped;
        Ok(())
    }

    pub fn progress(&self) -> ProgressView {
        let inner = self.lock();
        let count = |s: QueueStatus| inner.items.iter().filter(|i| i.status == s).count();
        ProgressView {
            total: inner.items.len(),
            done: count(QueueStatus::Done),
            skipped: count(QueueStatus::Skipped),
            pending: count(QueueStatus::Pending),
            per_class: self
                .label_space
                .classes()
                .iter()
                .zip(&inner.per_class)
                .map(|(label, &count)| ClassCount { label: label.clone(), count })
                .collect(),
        }
    }

    /// Ids with a logged decision, in queue order.
    pub fn done_ids(&self) -> Vec<String> {
        let inner = self.lock();
        inner.items.iter().filter(|i| i.status == QueueStatus::Done).map(|i| i.id.clone()).collect()
    }
}

type Shared = Arc<ServiceState>;

async fn next_handler(State(state): State<Shared>) -> Response {
    match state.next_item() {
        Some(view) => Json(view).into_response(),
        None => StatusCode::NO_CONTENT.into_response(),
    }
}

#[derive(Deserialize)]
struct LabelBody {
    label: String,
}

async fn label_handler(State(state): State<Shared>, UrlPath(id): UrlPath<String>, body: Bytes) -> Response {
    let body: LabelBody = match serde_json::from_slice(&body) {
        Ok(b) => b,
        Err(e) => return error_response(StatusCode::BAD_REQUEST, "bad_request", format!("expected {{\"label\": str}}: {e}")),
    };
    // The log append fsyncs; keep it off the async workers.
    let result = tokio::task::spawn_blocking(move || state.submit_label(&id, &body.label)).await;
    match result {
        Ok(Ok(rec)) => {
            Json(DecisionAck { id: rec.id, status: QueueStatus::Done, label: Some(rec.new_label) }).into_response()
        }
        Ok(Err(e)) => e.into_response(),
        Err(e) => error_response(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()),
    }
}

async fn skip_handler(State(state): State<Shared>, UrlPath(id): UrlPath<String>) -> Response {
    match state.skip(&id) {
        Ok(()) => Json(DecisionAck { id, status: QueueStatus::Skipped, label: None }).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn progress_handler(State(state): State<Shared>) -> Json<ProgressView> {
    Json(state.progress())
}

async fn labelspace_handler(State(state): State<Shared>) -> Json<LabelSpace> {
    Json(state.label_space().clone())
}

/// The API routes, plus static files from `ui_dir` at `/` when given.
pub fn router(state: Shared, ui_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/queue/next", get(next_handler))
        .route("/api/items/{id}/label", post(label_handler))
        .route("/api/items/{id}/skip", post(skip_handler))
        .route("/api/progress", get(progress_handler))
        .route("/api/labelspace", get(labelspace_handler))
        .with_state(state);
    match ui_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

pub async fn serve(
    listener: TcpListener,
    state: Shared,
    ui_dir: Option<PathBuf>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(state, ui_dir)).with_graceful_shutdown(shutdown).await
}
