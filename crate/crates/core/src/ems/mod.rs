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

//! Episodic memory store.
//!
//! Completed episodes are kept as [`MemoryRecord`]s and served back by cosine
//! similarity, either with an exact scan or through an HNSW graph. Both
//! search paths share the same filter and tie-break contract.

pub mod bench;
mod cosine;
mod hnsw;
mod snapshot;

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap};
use std::sync::Arc;

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};

pub use cosine::{cosine_score, dot_f64, norm_f64};
pub use hnsw::{Hnsw, HnswParams};
pub use snapshot::{load, snapshot, SNAPSHOT_MAGIC};

use crate::condenser::{CondensedRecord, Evidence};
use crate::trajectory::DEFAULT_HARD_CAP;

#[derive(Debug, thiserror::Error)]
pub enum EmsError {
    #[error("embedding dimension mismatch: expected {expected}, got {got}")]
    Schema { expected: usize, got: usize },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("duplicate episode_id {0}")]
    Conflict(String),
    #[error("routing violation: {0}")]
    RoutingViolation(String),
    #[error("invalid record: {0}")]
    InvalidRecord(String),
    #[error("snapshot integrity: {0}")]
    Integrity(String),
    #[error("snapshot migration required: {0}")]
    Migration(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeMeta {
    pub episode_id: String,
    pub domain_root: String,
    pub user_goal: String,
    pub model_name: String,
    pub total_steps: usize,
    pub timestamp_ms: u64,
    pub task_id: String,
    pub final_success: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryRecord {
    pub embedding: Vec<f32>,
    pub summary_text: String,
    pub meta: EpisodeMeta,
    /// Fail modes for failed episodes, workflows for successful ones.
    #[serde(default)]
    pub evidence: Vec<Evidence>,
}

impl MemoryRecord {
    pub fn from_condensed(record: &CondensedRecord) -> Self {
        MemoryRecord {
            embedding: record.embedding.clone(),
            summary_text: record.summary_text.clone(),
            meta: record.source.clone(),
            evidence: record.evidence.clone(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrievalFilter {
    #[serde(default)]
    pub exclude_task_ids: BTreeSet<String>,
    #[serde(default)]
    pub require_domain_root: Option<String>,
    /// `Some(None)` would mean "unknown outcome only", which the store never
    /// holds, so the outer option is enough.
    #[serde(default)]
    pub require_outcome: Option<bool>,
}

impl RetrievalFilter {
    pub fn excluding_task(task_id: impl Into<String>) -> Self {
        RetrievalFilter { exclude_task_ids: BTreeSet::from([task_id.into()]), ..Default::default() }
    }

    pub fn accepts(&self, meta: &EpisodeMeta) -> bool {
        if self.exclude_task_ids.contains(&meta.task_id) {
            return false;
        }
        if let Some(root) = &self.require_domain_root {
            if &meta.domain_root != root {
                return false;
            }
        }
        if let Some(outcome) = self.require_outcome {
            if meta.final_success != Some(outcome) {
                return false;
            }
        }
        true
    }
}

#[derive(Debug, Clone)]
pub struct Hit {
    pub record: Arc<MemoryRecord>,
    pub score: f64,
}

#[derive(Debug, Clone)]
pub struct RetrievalResult {
    pub hits: Vec<Hit>,
    pub query: Vec<f32>,
}

impl RetrievalResult {
    pub fn episode_ids(&self) -> Vec<&str> {
        self.hits.iter().map(|h| h.record.meta.episode_id.as_str()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexConfig {
    pub m: usize,
    pub ef_construction: usize,
    pub ef_search: usize,
    /// ANN candidates fetched per requested result before post-filtering.
    pub overfetch: usize,
    pub seed: u64,
}

impl Default for IndexConfig {
    fn default() -> Self {
        IndexConfig { m: 32, ef_construction: 128, ef_search: 512, overfetch: 4, seed: 0x5eed }
    }
}

impl IndexConfig {
    fn hnsw(&self) -> HnswParams {
        HnswParams { m: self.m, ef_construction: self.ef_construction, ef_search: self.ef_search, seed: self.seed }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct SeedReport {
    pub inserted: usize,
    pub skipped: usize,
    pub errors: Vec<(usize, String)>,
}

/// Ordering used by every search path: score desc, timestamp desc,
/// episode_id asc.
pub fn rank_order(a: &Hit, b: &Hit) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(b.record.meta.timestamp_ms.cmp(&a.record.meta.timestamp_ms))
        .then_with(|| a.record.meta.episode_id.cmp(&b.record.meta.episode_id))
}

pub type SharedStore = Arc<RwLock<MemoryStore>>;

#[derive(Debug, Clone)]
pub struct MemoryStore {
    dim: usize,
    hard_cap: usize,
    config: IndexConfig,
    records: Vec<Arc<MemoryRecord>>,
    norms: Vec<f64>,
    ids: HashMap<String, usize>,
    index: Hnsw,
}

impl MemoryStore {
    pub fn new(dim: usize, config: IndexConfig) -> Self {
        MemoryStore {
            dim,
            hard_cap: DEFAULT_HARD_CAP,
            config,
            records: Vec::new(),
            norms: Vec::new(),
            ids: HashMap::new(),
            index: Hnsw::new(dim, config.hnsw()),
        }
    }

    pub fn with_hard_cap(mut self, cap: usize) -> Self {
        self.hard_cap = cap;
        self
    }

    pub fn into_shared(self) -> SharedStore {
        Arc::new(RwLock::new(self))
    }

    pub fn dimension(&self) -> usize {
        self.dim
    }

    pub fn config(&self) -> IndexConfig {
        self.config
    }

    /// Search-time beam width; takes effect on the next query.
    pub fn set_ef_search(&mut self, ef: usize) {
        self.config.ef_search = ef;
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> impl Iterator<Item = &Arc<MemoryRecord>> {
        self.records.iter()
    }

    pub fn get(&self, episode_id: &str) -> Option<&Arc<MemoryRecord>> {
        self.ids.get(episode_id).map(|&i| &self.records[i])
    }

    pub fn contains(&self, episode_id: &str) -> bool {
        self.ids.contains_key(episode_id)
    }

    fn validate(&self, record: &MemoryRecord) -> Result<f64, EmsError> {
        if record.embedding.len() != self.dim {
            return Err(EmsError::Schema { expected: self.dim, got: record.embedding.len() });
        }
        if record.meta.final_success.is_none() {
            return Err(EmsError::RoutingViolation(format!(
                "episode {} has no outcome; only completed episodes are stored",
                record.meta.episode_id
            )));
        }
        if record.meta.episode_id.is_empty() {
            return Err(EmsError::InvalidRecord("empty episode_id".into()));
        }
        if record.summary_text.trim().is_empty() {
            return Err(EmsError::InvalidRecord("empty summary_text".into()));
        }
        if record.meta.total_steps > self.hard_cap {
            return Err(EmsError::InvalidRecord(format!(
                "total_steps {} exceeds cap {}",
                record.meta.total_steps, self.hard_cap
            )));
        }
        let norm = norm_f64(&record.embedding);
        if !norm.is_finite() {
            return Err(EmsError::Domain("embedding has non-finite entries".into()));
        }
        if norm == 0.0 {
            return Err(EmsError::Domain("zero embedding".into()));
        }
        Ok(norm)
    }

    pub fn insert(&mut self, record: MemoryRecord) -> Result<String, EmsError> {
        let norm = self.validate(&record)?;
        let id = record.meta.episode_id.clone();
        if self.ids.contains_key(&id) {
            return Err(EmsError::Conflict(id));
        }
        let node = self.index.insert(&record.embedding);
        debug_assert_eq!(node as usize, self.records.len());
        self.ids.insert(id.clone(), self.records.len());
        self.records.push(Arc::new(record));
        self.norms.push(norm);
        Ok(id)
    }

    /// Bulk insert; duplicates are skipped and other failures are collected
    /// with their position in `records`.
    pub fn seed(&mut self, records: impl IntoIterator<Item = MemoryRecord>) -> SeedReport {
        let mut report = SeedReport::default();
        for (i, r) in records.into_iter().enumerate() {
            if self.ids.contains_key(&r.meta.episode_id) {
                report.skipped += 1;
                continue;
            }
            match self.insert(r) {
                Ok(_) => report.inserted += 1,
                Err(e) => report.errors.push((i, e.to_string())),
            }
        }
        report
    }

    /// Seeds from line-delimited records. Unparseable lines are reported as
    /// errors, keyed by 0-based line number.
    pub fn seed_jsonl(&mut self, text: &str) -> SeedReport {
        let mut parsed = Vec::new();
        let mut line_errors = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<MemoryRecord>(line) {
                Ok(r) => parsed.push((i, r)),
                Err(e) => line_errors.push((i, format!("line {}: {e}", i + 1))),
            }
        }
        let lines: Vec<usize> = parsed.iter().map(|(i, _)| *i).collect();
        let mut report = self.seed(parsed.into_iter().map(|(_, r)| r));
        for e in &mut report.errors {
            e.0 = lines[e.0];
        }
        report.errors.extend(line_errors);
        report.errors.sort_by_key(|e| e.0);
        report
    }

    fn check_query(&self, query: &[f32]) -> Result<f64, EmsError> {
        if query.len() != self.dim {
            return Err(EmsError::Schema { expected: self.dim, got: query.len() });
        }
        let norm = norm_f64(query);
        if norm == 0.0 {
            return Err(EmsError::Domain("zero query vector".into()));
        }
        if !norm.is_finite() {
            return Err(EmsError::Domain("query has non-finite entries".into()));
        }
        Ok(norm)
    }

    fn hit(&self, idx: usize, query: &[f32], qnorm: f64) -> Hit {
        let r = &self.records[idx];
        let score = cosine::cosine_with_norms(query, qnorm, &r.embedding, self.norms[idx])
            .expect("stored embeddings are validated");
        Hit { record: Arc::clone(r), score }
    }

    pub fn search_exact(&self, query: &[f32], k: usize, filter: &RetrievalFilter) -> Result<RetrievalResult, EmsError> {
        let qnorm = self.check_query(query)?;
        let mut hits: Vec<Hit> = (0..self.records.len())
            .filter(|&i| filter.accepts(&self.records[i].meta))
            .map(|i| self.hit(i, query, qnorm))
            .collect();
        top_k(&mut hits, k);
        Ok(RetrievalResult { hits, query: query.to_vec() })
    }

    pub fn search_ann(&self, query: &[f32], k: usize, filter: &RetrievalFilter) -> Result<RetrievalResult, EmsError> {
        let qnorm = self.check_query(query)?;
        if k == 0 || self.records.is_empty() {
            return Ok(RetrievalResult { hits: Vec::new(), query: query.to_vec() });
        }
        let passing = self.records.iter().filter(|r| filter.accepts(&r.meta)).count();
        let want = k.min(passing);
        let allow = |id: u32| filter.accepts(&self.records[id as usize].meta);
        let mut fetch = k.saturating_mul(self.config.overfetch.max(1));
        for _ in 0..2 {
            let ef = self.config.ef_search.max(fetch);
            let found = self.index.search(query, fetch, ef, &allow);
            if found.len() >= want {
                let mut hits: Vec<Hit> = found.into_iter().map(|(id, _)| self.hit(id as usize, query, qnorm)).collect();
                top_k(&mut hits, k);
                return Ok(RetrievalResult { hits, query: query.to_vec() });
            }
            fetch = fetch.saturating_mul(2);
        }
        tracing::debug!(k, passing, "ann under-filled under filter, falling back to exact scan");
        self.search_exact(query, k, filter)
    }

    /// Record-level equality, ignoring index internals.
    pub fn same_records(&self, other: &MemoryStore) -> bool {
        self.dim == other.dim
            && self.records.len() == other.records.len()
            && self.records.iter().zip(&other.records).all(|(a, b)| a == b)
    }
}

fn top_k(hits: &mut Vec<Hit>, k: usize) {
    if hits.len() > k && k > 0 {
        hits.select_nth_unstable_by(k - 1, rank_order);
    }
    hits.truncate(k);
    hits.sort_by(rank_order);
}
