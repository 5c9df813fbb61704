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

//! In-process sidecar: sessions, the per-step condense → retrieve → coach
//! pipeline, finalization and memory write-back.
//!
//! Every operation on one session holds that session's lock, so steps of a
//! session are serialized. Sessions only meet each other through the store.

use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{mpsc, Arc};
use std::time::{Duration, Instant};

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};

use crate::coach::{AdviceQueue, Coach, CoachDecision, CoachFault, CoachInput, InjectionReceipt, SystemMessage};
use crate::condenser::{route, CondenseError, CondensedRecord, Condenser, Routing};
use crate::config::{MemoryMode, SidecarConfig};
use crate::ems::{self, EmsError, MemoryRecord, MemoryStore, RetrievalFilter, RetrievalResult, SharedStore};
use crate::trajectory::{AdapterId, AdapterRegistry, ParseWarning, TrajectoryError, TrajectoryLog};

#[derive(Debug, thiserror::Error)]
pub enum SidecarError {
    #[error("unknown session {0}")]
    UnknownSession(String),
    #[error("session {0} is already finalized")]
    Finalized(String),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
    #[error("routing violation: {0}")]
    RoutingViolation(String),
    #[error(transparent)]
    Condense(#[from] CondenseError),
    #[error(transparent)]
    Store(#[from] EmsError),
    #[error("memory mode is fixed at startup ({0})")]
    ImmutableMode(MemoryMode),
    #[error("invalid request: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionState {
    Open,
    Finalized,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpenSession {
    #[serde(default)]
    pub task_id: String,
    #[serde(default)]
    pub goal: String,
    #[serde(default)]
    pub domain_root: String,
    #[serde(default)]
    pub model_name: String,
    /// Canonical adapter when absent.
    #[serde(default)]
    pub adapter_id: Option<String>,
}

impl OpenSession {
    pub fn default_for(task_id: &str) -> Self {
        OpenSession {
            task_id: task_id.into(),
            goal: String::new(),
            domain_root: String::new(),
            model_name: String::new(),
            adapter_id: None,
        }
    }
}

#[derive(Debug)]
struct Session {
    id: String,
    task_id: String,
    goal: String,
    domain_root: String,
    model_name: String,
    adapter_id: AdapterId,
    step_count: usize,
    state: SessionState,
    queue: AdviceQueue,
    filter: RetrievalFilter,
    last_active: Instant,
}

impl Session {
    /// Session identity wins over whatever the actor's log carries.
    fn bind(&self, log: &mut TrajectoryLog) {
        for (dst, src) in [
            (&mut log.task_id, &self.task_id),
            (&mut log.goal, &self.goal),
            (&mut log.domain_root, &self.domain_root),
            (&mut log.model_name, &self.model_name),
        ] {
            if !src.is_empty() {
                dst.clone_from(src);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionInfo {
    pub session_id: String,
    pub task_id: String,
    pub adapter_id: String,
    pub step_count: usize,
    pub state: SessionState,
    pub pending_advice: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepOutcome {
    /// Everything queued for the actor, including advice from this step.
    pub advice: Vec<SystemMessage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decision: Option<CoachDecision>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub receipt: Option<InjectionReceipt>,
    pub step_count: usize,
    #[serde(default)]
    pub warnings: Vec<ParseWarning>,
    /// Set when the step hit the cap and the session was closed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auto_finalized: Option<FinalizeOutcome>,
    /// Why no decision was made, if the pipeline was skipped or degraded.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalizeOutcome {
    pub episode_id: String,
    pub final_success: Option<bool>,
    pub persisted: bool,
    pub outcome_inferred: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub store_size: usize,
    pub memory_mode: String,
    pub sessions_open: usize,
    pub sessions_total: u64,
    pub steps: u64,
    pub coach_calls: u64,
    pub interventions: u64,
    pub intervention_rate: f64,
    pub degraded: u64,
    pub deadline_misses: u64,
    pub finalized: u64,
    pub persisted: u64,
}

#[derive(Debug, Default)]
struct Counters {
    sessions: AtomicU64,
    steps: AtomicU64,
    coach_calls: AtomicU64,
    interventions: AtomicU64,
    degraded: AtomicU64,
    deadline_misses: AtomicU64,
    finalized: AtomicU64,
    persisted: AtomicU64,
}

struct Pipeline {
    condenser: Arc<Condenser>,
    coach: Arc<Coach>,
    store: SharedStore,
    k: usize,
    exact: bool,
}

enum PipelineResult {
    Decided { decision: CoachDecision, fault: Option<CoachFault> },
    Failed(String),
}

impl Pipeline {
    fn run(&self, log: &TrajectoryLog, episode_id: &str, filter: &RetrievalFilter) -> PipelineResult {
        let current = match self.condenser.condense(log, Some(episode_id)) {
            Ok(r) => r,
            Err(e) => return PipelineResult::Failed(format!("condense: {e}")),
        };
        debug_assert_eq!(route(&current), Routing::StreamOnly);
        let retrieved = {
            let store = self.store.read();
            let r = if self.exact {
                store.search_exact(&current.embedding, self.k, filter)
            } else {
                store.search_ann(&current.embedding, self.k, filter)
            };
            match r {
                Ok(r) => r.hits,
                Err(e) => return PipelineResult::Failed(format!("retrieve: {e}")),
            }
        };
        let input = match CoachInput::new(current, retrieved) {
            Ok(i) => i,
            Err(e) => return PipelineResult::Failed(e),
        };
        let d = self.coach.decide(&input);
        PipelineResult::Decided { decision: d.decision, fault: d.fault }
    }
}

pub struct Sidecar {
    config: SidecarConfig,
    registry: Arc<AdapterRegistry>,
    pipeline: Arc<Pipeline>,
    sessions: RwLock<HashMap<String, Arc<Mutex<Session>>>>,
    nonce: u32,
    next_id: AtomicU64,
    counters: Counters,
}

impl std::fmt::Debug for Sidecar {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Sidecar")
            .field("mode", &self.config.memory_mode)
            .field("sessions", &self.sessions.read().len())
            .finish()
    }
}

impl Sidecar {
    pub fn new(
        config: SidecarConfig,
        condenser: Condenser,
        coach: Coach,
        store: MemoryStore,
    ) -> Result<Self, SidecarError> {
        config.validate().map_err(|e| SidecarError::Invalid(e.to_string()))?;
        if condenser.dimension() != store.dimension() {
            return Err(SidecarError::Invalid(format!(
                "embedder dimension {} does not match store dimension {}",
                condenser.dimension(),
                store.dimension()
            )));
        }
        let nonce = (config.seed as u32) ^ ((config.seed >> 32) as u32) ^ 0x9e37_79b9;
        Ok(Sidecar {
            pipeline: Arc::new(Pipeline {
                condenser: Arc::new(condenser),
                coach: Arc::new(coach),
                store: store.into_shared(),
                k: config.k,
                exact: config.exact_search,
            }),
            config,
            registry: Arc::new(AdapterRegistry::new()),
            sessions: RwLock::new(HashMap::new()),
            nonce,
            next_id: AtomicU64::new(0),
            counters: Counters::default(),
        })
    }

    /// Stub backends, and the snapshot at `config.snapshot_path` when that
    /// file exists.
    pub fn with_stubs(config: SidecarConfig) -> Result<Self, SidecarError> {
        let store = open_store(&config)?;
        let condenser = Condenser::stub(config.embedding_dim);
        let coach = Coach::stub(config.coach);
        Sidecar::new(config, condenser, coach, store)
    }

    pub fn config(&self) -> &SidecarConfig {
        &self.config
    }

    pub fn memory_mode(&self) -> MemoryMode {
        self.config.memory_mode
    }

    /// The mode is fixed for the lifetime of the service.
    pub fn set_memory_mode(&self, mode: MemoryMode) -> Result<(), SidecarError> {
        if mode == self.config.memory_mode {
            Ok(())
        } else {
            Err(SidecarError::ImmutableMode(self.config.memory_mode))
        }
    }

    pub fn registry(&self) -> &AdapterRegistry {
        &self.registry
    }

    pub fn store(&self) -> &SharedStore {
        &self.pipeline.store
    }

    pub fn condenser(&self) -> &Condenser {
        &self.pipeline.condenser
    }

    pub fn store_len(&self) -> usize {
        self.pipeline.store.read().len()
    }

    pub fn open_session(&self, req: OpenSession) -> Result<String, SidecarError> {
        let adapter_id = match req.adapter_id.filter(|s| !s.is_empty()) {
            Some(id) => AdapterId(id),
            None => self.registry.canonical_id().clone(),
        };
        if !self.registry.contains(&adapter_id) {
            return Err(TrajectoryError::UnknownAdapter(adapter_id.0).into());
        }
        let n = self.next_id.fetch_add(1, Ordering::SeqCst);
        let id = format!("s-{:08x}-{n}", self.nonce);
        let filter = if req.task_id.is_empty() {
            RetrievalFilter::default()
        } else {
            RetrievalFilter::excluding_task(req.task_id.clone())
        };
        let session = Session {
            queue: AdviceQueue::new(id.clone()),
            id: id.clone(),
            task_id: req.task_id,
            goal: req.goal,
            domain_root: req.domain_root,
            model_name: req.model_name,
            adapter_id,
            step_count: 0,
            state: SessionState::Open,
            filter,
            last_active: Instant::now(),
        };
        self.sessions.write().insert(id.clone(), Arc::new(Mutex::new(session)));
        self.counters.sessions.fetch_add(1, Ordering::Relaxed);
        tracing::debug!(session = %id, "session opened");
        Ok(id)
    }

    fn session(&self, id: &str) -> Result<Arc<Mutex<Session>>, SidecarError> {
        self.sessions.read().get(id).cloned().ok_or_else(|| SidecarError::UnknownSession(id.to_string()))
    }

    pub fn session_info(&self, id: &str) -> Result<SessionInfo, SidecarError> {
        let s = self.session(id)?;
        let s = s.lock();
        Ok(SessionInfo {
            session_id: s.id.clone(),
            task_id: s.task_id.clone(),
            adapter_id: s.adapter_id.0.clone(),
            step_count: s.step_count,
            state: s.state,
            pending_advice: s.queue.pending_len(),
        })
    }

    fn episode_id(session_id: &str) -> String {
        format!("ep-{session_id}")
    }

    /// Feeds the actor's current log (all steps so far) through the
    /// pipeline and returns the advice waiting for the actor. Only a bad
    /// log is an error; backend trouble means no advice.
    pub fn submit_step(&self, session_id: &str, raw: &[u8]) -> Result<StepOutcome, SidecarError> {
        let handle = self.session(session_id)?;
        let mut s = handle.lock();
        if s.state == SessionState::Finalized {
            return Err(SidecarError::Finalized(s.id.clone()));
        }
        s.last_active = Instant::now();
        let parsed = self.registry.parse_step_log(raw, &s.adapter_id, self.config.hard_cap)?;
        let mut log = parsed.trajectory;
        s.bind(&mut log);
        s.step_count = log.steps.len();
        self.counters.steps.fetch_add(1, Ordering::Relaxed);

        let mut outcome = StepOutcome {
            advice: Vec::new(),
            decision: None,
            receipt: None,
            step_count: s.step_count,
            warnings: parsed.warnings,
            auto_finalized: None,
            note: None,
        };

        if log.is_complete() {
            let by_marker = log.steps.iter().any(|st| st.terminal);
            if by_marker {
                outcome.note = Some("trace is complete; awaiting finalize".into());
            } else {
                log.declared_success = None;
                let fin = self.finalize_locked(&mut s, &log)?;
                tracing::info!(session = %s.id, "step cap reached; session auto-finalized");
                outcome.auto_finalized = Some(fin);
                outcome.note = Some("step cap reached".into());
            }
            outcome.advice = s.queue.poll();
            return Ok(outcome);
        }
        if log.steps.is_empty() || s.step_count % self.config.stride != 0 {
            outcome.note = Some("coach not scheduled for this step".into());
            outcome.advice = s.queue.poll();
            return Ok(outcome);
        }

        self.counters.coach_calls.fetch_add(1, Ordering::Relaxed);
        let step_index = log.steps.len() - 1;
        match self.run_with_deadline(log, Self::episode_id(&s.id), s.filter.clone()) {
            Some(PipelineResult::Decided { decision, fault }) => {
                if let Some(f) = &fault {
                    self.counters.degraded.fetch_add(1, Ordering::Relaxed);
                    outcome.note = Some(format!("coach degraded: {}", serde_json::to_string(f).unwrap_or_default()));
                }
                if decision.intervene {
                    match s.queue.inject(&decision, step_index) {
                        Ok(r) => {
                            self.counters.interventions.fetch_add(1, Ordering::Relaxed);
                            outcome.receipt = Some(r);
                        }
                        Err(e) => tracing::warn!(session = %s.id, error = %e, "injection failed"),
                    }
                }
                outcome.decision = Some(decision);
            }
            Some(PipelineResult::Failed(reason)) => {
                tracing::warn!(session = %s.id, %reason, "pipeline failed; no advice");
                self.counters.degraded.fetch_add(1, Ordering::Relaxed);
                outcome.note = Some(reason);
            }
            None => {
                tracing::warn!(session = %s.id, "coach deadline missed; no advice");
                self.counters.deadline_misses.fetch_add(1, Ordering::Relaxed);
                outcome.note = Some("coach deadline missed".into());
            }
        }
        outcome.advice = s.queue.poll();
        Ok(outcome)
    }

    fn run_with_deadline(
        &self,
        log: TrajectoryLog,
        episode_id: String,
        filter: RetrievalFilter,
    ) -> Option<PipelineResult> {
        let (tx, rx) = mpsc::channel();
        let pipeline = Arc::clone(&self.pipeline);
        let spawned = std::thread::Builder::new().name("webcoach-step".into()).spawn(move || {
            let _ = tx.send(pipeline.run(&log, &episode_id, &filter));
        });
        if let Err(e) = spawned {
            return Some(PipelineResult::Failed(format!("cannot spawn pipeline: {e}")));
        }
        rx.recv_timeout(self.config.coach_deadline()).ok()
    }

    /// Condenses the complete log and, in dynamic mode, stores it.
    pub fn finalize_session(&self, session_id: &str, raw: &[u8]) -> Result<FinalizeOutcome, SidecarError> {
        let handle = self.session(session_id)?;
        let mut s = handle.lock();
        if s.state == SessionState::Finalized {
            return Err(SidecarError::Finalized(s.id.clone()));
        }
        s.last_active = Instant::now();
        let mut log = self.registry.parse_step_log(raw, &s.adapter_id, self.config.hard_cap)?.trajectory;
        s.bind(&mut log);
        if !log.is_complete() {
            return Err(SidecarError::RoutingViolation(format!(
                "trace has {} steps and no terminal marker; partial traces are never stored",
                log.steps.len()
            )));
        }
        s.step_count = log.steps.len();
        self.finalize_locked(&mut s, &log)
    }

    fn finalize_locked(&self, s: &mut Session, log: &TrajectoryLog) -> Result<FinalizeOutcome, SidecarError> {
        let episode_id = Self::episode_id(&s.id);
        let record: CondensedRecord = self.pipeline.condenser.condense(log, Some(&episode_id))?;
        let persisted = match (route(&record), self.config.memory_mode) {
            (Routing::PersistAndStream, MemoryMode::Dynamic) => {
                self.pipeline.store.write().insert(MemoryRecord::from_condensed(&record))?;
                self.counters.persisted.fetch_add(1, Ordering::Relaxed);
                true
            }
            (Routing::PersistAndStream, MemoryMode::Frozen) => {
                tracing::info!(episode = %episode_id, "frozen memory; episode condensed but not stored");
                false
            }
            (Routing::StreamOnly, _) => unreachable!("complete logs always route to persist"),
        };
        s.state = SessionState::Finalized;
        s.queue.close();
        self.counters.finalized.fetch_add(1, Ordering::Relaxed);
        Ok(FinalizeOutcome {
            episode_id,
            final_success: record.final_success,
            persisted,
            outcome_inferred: record.outcome_inferred,
        })
    }

    /// Drains queued advice. Works on finalized sessions too, so nothing
    /// queued before finalization is lost.
    pub fn poll_advice(&self, session_id: &str) -> Result<Vec<SystemMessage>, SidecarError> {
        let handle = self.session(session_id)?;
        let mut s = handle.lock();
        s.last_active = Instant::now();
        Ok(s.queue.poll())
    }

    /// Closes open sessions idle longer than the configured timeout. They
    /// are treated as outcome-unknown and never stored.
    pub fn collect_idle(&self) -> Vec<String> {
        self.collect_idle_older_than(Duration::from_secs_f64(self.config.idle_timeout_s))
    }

    pub fn collect_idle_older_than(&self, max_idle: Duration) -> Vec<String> {
        let now = Instant::now();
        let handles: Vec<Arc<Mutex<Session>>> = self.sessions.read().values().cloned().collect();
        let mut closed = Vec::new();
        for h in handles {
            let mut s = h.lock();
            if s.state == SessionState::Open && now.duration_since(s.last_active) >= max_idle {
                s.state = SessionState::Finalized;
                s.queue.close();
                tracing::info!(session = %s.id, "idle session closed without persisting");
                closed.push(s.id.clone());
            }
        }
        closed.sort();
        closed
    }

    /// Drops finalized sessions with nothing left to deliver.
    pub fn prune_finalized(&self) -> usize {
        let mut map = self.sessions.write();
        let before = map.len();
        map.retain(|_, h| {
            let s = h.lock();
            s.state == SessionState::Open || s.queue.pending_len() > 0
        });
        before - map.len()
    }

    pub fn search_text(
        &self,
        query: &str,
        k: usize,
        filter: &RetrievalFilter,
    ) -> Result<RetrievalResult, SidecarError> {
        let v = self.pipeline.condenser.embed(query).map_err(|e| SidecarError::Invalid(e.to_string()))?;
        self.search_vector(&v, k, filter)
    }

    pub fn search_vector(
        &self,
        query: &[f32],
        k: usize,
        filter: &RetrievalFilter,
    ) -> Result<RetrievalResult, SidecarError> {
        let store = self.pipeline.store.read();
        let r = if self.config.exact_search {
            store.search_exact(query, k, filter)
        } else {
            store.search_ann(query, k, filter)
        };
        Ok(r?)
    }

    pub fn seed(&self, records: Vec<MemoryRecord>) -> ems::SeedReport {
        self.pipeline.store.write().seed(records)
    }

    pub fn snapshot_to(&self, path: &Path) -> Result<(), SidecarError> {
        let store = self.pipeline.store.read();
        ems::snapshot(&store, path)?;
        Ok(())
    }

    /// Writes the configured snapshot, if any.
    pub fn persist(&self) -> Result<bool, SidecarError> {
        match &self.config.snapshot_path {
            Some(p) => self.snapshot_to(p).map(|_| true),
            None => Ok(false),
        }
    }

    pub fn stats(&self) -> Stats {
        let c = &self.counters;
        let open = self.sessions.read().values().filter(|h| h.lock().state == SessionState::Open).count();
        let calls = c.coach_calls.load(Ordering::Relaxed);
        let interventions = c.interventions.load(Ordering::Relaxed);
        Stats {
            store_size: self.store_len(),
            memory_mode: self.config.memory_mode.to_string(),
            sessions_open: open,
            sessions_total: c.sessions.load(Ordering::Relaxed),
            steps: c.steps.load(Ordering::Relaxed),
            coach_calls: calls,
            interventions,
            intervention_rate: if calls == 0 { 0.0 } else { interventions as f64 / calls as f64 },
            degraded: c.degraded.load(Ordering::Relaxed),
            deadline_misses: c.deadline_misses.load(Ordering::Relaxed),
            finalized: c.finalized.load(Ordering::Relaxed),
            persisted: c.persisted.load(Ordering::Relaxed),
        }
    }
}

/// Loads the configured snapshot if the file exists, else an empty store.
pub fn open_store(config: &SidecarConfig) -> Result<MemoryStore, SidecarError> {
    let store = match &config.snapshot_path {
        Some(p) if p.exists() => {
            let s = ems::load(p, config.index)?;
            if s.dimension() != config.embedding_dim {
                return Err(SidecarError::Invalid(format!(
                    "snapshot dimension {} does not match embedding_dim {}",
                    s.dimension(),
                    config.embedding_dim
                )));
            }
            tracing::info!(path = %p.display(), records = s.len(), "loaded memory snapshot");
            s
        }
        _ => MemoryStore::new(config.embedding_dim, config.index),
    };
    Ok(store.with_hard_cap(config.hard_cap))
}
