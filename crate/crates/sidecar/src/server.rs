// Copyright 2025 The webcoach Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

//! HTTP routes over a shared [`Sidecar`]. Every sidecar call blocks, so
//! handlers run it on the blocking pool.

use std::collections::BTreeSet;
use std::future::Future;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::net::TcpListener;
use webcoach_core::ems::{EmsError, Hit, RetrievalFilter};
use webcoach_core::session::{OpenSession, Sidecar, SidecarError};
use webcoach_core::trajectory::TrajectoryError;

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    fn bad_request(message: impl Into<String>) -> Self {
        ApiError { status: StatusCode::BAD_REQUEST, code: "invalid_request", message: message.into() }
    }

    fn internal(message: impl Into<String>) -> Self {
        ApiError { status: StatusCode::INTERNAL_SERVER_ERROR, code: "internal", message: message.into() }
    }
}

impl From<SidecarError> for ApiError {
    fn from(e: SidecarError) -> Self {
        let (status, code) = match &e {
            SidecarError::UnknownSession(_) => (StatusCode::NOT_FOUND, "unknown_session"),
            SidecarError::Finalized(_) => (StatusCode::CONFLICT, "finalized"),
            SidecarError::Trajectory(TrajectoryError::UnknownAdapter(_)) => {
                (StatusCode::BAD_REQUEST, "unknown_adapter")
            }
            SidecarError::Trajectory(TrajectoryError::InvalidAdapter(_)) => {
                (StatusCode::BAD_REQUEST, "invalid_adapter")
            }
            SidecarError::Trajectory(_) => (StatusCode::BAD_REQUEST, "parse_error"),
            SidecarError::RoutingViolation(_) => (StatusCode::CONFLICT, "routing_violation"),
            SidecarError::Condense(_) => (StatusCode::BAD_GATEWAY, "condense_failed"),
            SidecarError::Store(EmsError::Conflict(_)) => (StatusCode::CONFLICT, "conflict"),
            SidecarError::Store(EmsError::RoutingViolation(_)) => (StatusCode::CONFLICT, "routing_violation"),
            SidecarError::Store(EmsError::Schema { .. }) => (StatusCode::BAD_REQUEST, "schema"),
            SidecarError::Store(_) => (StatusCode::INTERNAL_SERVER_ERROR, "store"),
            SidecarError::ImmutableMode(_) => (StatusCode::CONFLICT, "immutable_mode"),
            SidecarError::Invalid(_) => (StatusCode::BAD_REQUEST, "invalid_request"),
        };
        ApiError { status, code, message: e.to_string() }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({"error": {"code": self.code, "message": self.message}});
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

async fn blocking<T, F>(sidecar: &Arc<Sidecar>, f: F) -> ApiResult<T>
where
    F: FnOnce(&Sidecar) -> Result<T, SidecarError> + Send + 'static,
    T: Send + 'static,
{
    let sc = Arc::clone(sidecar);
    tokio::task::spawn_blocking(move || f(&sc))
        .await
        .map_err(|e| ApiError::internal(format!("worker failed: {e}")))?
        .map_err(ApiError::from)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Opened {
    pub session_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdapterRegistered {
    pub adapter_id: String,
}

#[derive(Debug, Clone, Default, Deserialize)]
pub struct SearchParams {
    #[serde(default)]
    pub q: String,
    pub k: Option<usize>,
    /// Comma-separated task ids.
    #[serde(default)]
    pub exclude_task: String,
    pub domain: Option<String>,
    /// `success` or `failure`.
    pub outcome: Option<String>,
}

impl SearchParams {
    fn filter(&self) -> ApiResult<RetrievalFilter> {
        let exclude_task_ids: BTreeSet<String> =
            self.exclude_task.split(',').map(str::trim).filter(|s| !s.is_empty()).map(str::to_string).collect();
        let require_outcome = match self.outcome.as_deref() {
            None | Some("") => None,
            Some("success") => Some(true),
            Some("failure") => Some(false),
            Some(other) => {
                return Err(ApiError::bad_request(format!("outcome must be success or failure, got '{other}'")))
            }
        };
        Ok(RetrievalFilter {
            exclude_task_ids,
            require_domain_root: self.domain.clone().filter(|d| !d.is_empty()),
            require_outcome,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchHit {
    pub episode_id: String,
    pub task_id: String,
    pub domain_root: String,
    pub final_success: Option<bool>,
    pub score: f64,
    pub summary_text: String,
}

impl From<&Hit> for SearchHit {
    fn from(h: &Hit) -> Self {
        let m = &h.record.meta;
        SearchHit {
            episode_id: m.episode_id.clone(),
            task_id: m.task_id.clone(),
            domain_root: m.domain_root.clone(),
            final_success: m.final_success,
            score: h.score,
            summary_text: h.record.summary_text.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchReply {
    pub k: usize,
    pub hits: Vec<SearchHit>,
}

#[derive(Debug, Clone, Default, Deserialize)]
struct SnapshotParams {
    path: Option<String>,
}

pub fn router(sidecar: Arc<Sidecar>) -> Router {
    Router::new()
        .route("/v1/healthz", get(healthz))
        .route("/v1/stats", get(stats))
        .route("/v1/sessions", post(open_session))
        .route("/v1/sessions/{id}", get(session_info))
        .route("/v1/sessions/{id}/steps", post(submit_step))
        .route("/v1/sessions/{id}/finalize", post(finalize))
        .route("/v1/sessions/{id}/advice", get(advice))
        .route("/v1/memory/search", get(search))
        .route("/v1/adapters", post(register_adapter))
        .route("/v1/admin/snapshot", post(snapshot))
        .with_state(sidecar)
}

async fn healthz(State(sc): State<Arc<Sidecar>>) -> Json<serde_json::Value> {
    Json(json!({"status": "ok", "memory_mode": sc.memory_mode().to_string()}))
}

async fn stats(State(sc): State<Arc<Sidecar>>) -> ApiResult<Response> {
    let s = blocking(&sc, |sc| Ok(sc.stats())).await?;
    Ok(Json(s).into_response())
}

async fn open_session(State(sc): State<Arc<Sidecar>>, body: Bytes) -> ApiResult<Response> {
    let req: OpenSession = if body.iter().all(u8::is_ascii_whitespace) {
        OpenSession::default_for("")
    } else {
        serde_json::from_slice(&body).map_err(|e| ApiError::bad_request(format!("open body: {e}")))?
    };
    let session_id = blocking(&sc, move |sc| sc.open_session(req)).await?;
    Ok((StatusCode::CREATED, Json(Opened { session_id })).into_response())
}

async fn session_info(State(sc): State<Arc<Sidecar>>, Path(id): Path<String>) -> ApiResult<Response> {
    let info = blocking(&sc, move |sc| sc.session_info(&id)).await?;
    Ok(Json(info).into_response())
}

async fn submit_step(State(sc): State<Arc<Sidecar>>, Path(id): Path<String>, body: Bytes) -> ApiResult<Response> {
    let out = blocking(&sc, move |sc| sc.submit_step(&id, &body)).await?;
    Ok(Json(out).into_response())
}

async fn finalize(State(sc): State<Arc<Sidecar>>, Path(id): Path<String>, body: Bytes) -> ApiResult<Response> {
    let out = blocking(&sc, move |sc| sc.finalize_session(&id, &body)).await?;
    Ok(Json(out).into_response())
}

async fn advice(State(sc): State<Arc<Sidecar>>, Path(id): Path<String>) -> ApiResult<Response> {
    let msgs = blocking(&sc, move |sc| sc.poll_advice(&id)).await?;
    Ok(Json(json!({"advice": msgs})).into_response())
}

async fn search(State(sc): State<Arc<Sidecar>>, Query(p): Query<SearchParams>) -> ApiResult<Response> {
    let filter = p.filter()?;
    let k = p.k.unwrap_or(sc.config().k);
    if k == 0 {
        return Err(ApiError::bad_request("k must be positive"));
    }
    if p.q.trim().is_empty() {
        return Err(ApiError::bad_request("q must not be empty"));
    }
    let q = p.q;
    let hits = blocking(&sc, move |sc| {
        let r = sc.search_text(&q, k, &filter)?;
        Ok(r.hits.iter().map(SearchHit::from).collect::<Vec<_>>())
    })
    .await?;
    Ok(Json(SearchReply { k, hits }).into_response())
}

async fn register_adapter(State(sc): State<Arc<Sidecar>>, body: String) -> ApiResult<Response> {
    let id = blocking(&sc, move |sc| Ok(sc.registry().register_json(&body)?)).await?;
    Ok((StatusCode::CREATED, Json(AdapterRegistered { adapter_id: id.0 })).into_response())
}

async fn snapshot(State(sc): State<Arc<Sidecar>>, Query(p): Query<SnapshotParams>) -> ApiResult<Response> {
    let written = blocking(&sc, move |sc| match p.path.filter(|s| !s.is_empty()) {
        Some(path) => sc.snapshot_to(std::path::Path::new(&path)).map(|_| Some(path)),
        None => {
            Ok(sc.persist()?.then(|| sc.config().snapshot_path.as_ref().map(|p| p.display().to_string())).flatten())
        }
    })
    .await?;
    match written {
        Some(path) => Ok(Json(json!({"snapshot": path})).into_response()),
        None => Err(ApiError::bad_request("no snapshot path configured or given")),
    }
}

fn gc_interval(idle_timeout_s: f64) -> Duration {
    Duration::from_secs_f64((idle_timeout_s / 4.0).clamp(0.05, 60.0))
}

/// Closes idle sessions and drops drained ones until the task is aborted.
pub fn spawn_gc(sidecar: Arc<Sidecar>) -> tokio::task::JoinHandle<()> {
    let every = gc_interval(sidecar.config().idle_timeout_s);
    tokio::spawn(async move {
        let mut tick = tokio::time::interval(every);
        tick.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
        loop {
            tick.tick().await;
            let sc = Arc::clone(&sidecar);
            let r = tokio::task::spawn_blocking(move || (sc.collect_idle(), sc.prune_finalized())).await;
            if let Ok((closed, pruned)) = r {
                if !closed.is_empty() || pruned > 0 {
                    tracing::debug!(closed = closed.len(), pruned, "session gc");
                }
            }
        }
    })
}

/// Serves until `shutdown` resolves, then writes the configured snapshot.
pub async fn serve<F>(listener: TcpListener, sidecar: Arc<Sidecar>, shutdown: F) -> std::io::Result<()>
where
    F: Future<Output = ()> + Send + 'static,
{
    let gc = spawn_gc(Arc::clone(&sidecar));
    if let Ok(addr) = listener.local_addr() {
        tracing::info!(%addr, mode = %sidecar.memory_mode(), "sidecar listening");
    }
    let result = axum::serve(listener, router(Arc::clone(&sidecar))).with_graceful_shutdown(shutdown).await;
    gc.abort();
    let sc = Arc::clone(&sidecar);
    match tokio::task::spawn_blocking(move || sc.persist()).await {
        Ok(Ok(true)) => tracing::info!("memory snapshot written"),
        Ok(Ok(false)) => {}
        Ok(Err(e)) => tracing::error!(error = %e, "snapshot on shutdown failed"),
        Err(e) => tracing::error!(error = %e, "snapshot task failed"),
    }
    result
}
