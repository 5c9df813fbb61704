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

//! Condensing raw trajectories into fixed-schema episode records.
//!
//! A [`SummarizerBackend`] turns the trajectory into a short summary plus
//! evidence, an [`EmbedderBackend`] embeds the summary, and [`route`] decides
//! whether the result is only streamed to the coach or also persisted.
//! Completeness always comes from the trajectory itself, never from the
//! model.

mod backend;
mod stub;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::sync::Arc;

pub use backend::{BackendError, EmbedderBackend, SummarizerBackend, SummaryPrompt};
pub use stub::{
    describe_action, detect_patterns, HazardPattern, StubEmbedder, StubSummarizer, DEFAULT_EMBEDDING_DIM, LOOP_REPEATS,
};

use crate::ems::EpisodeMeta;
use crate::text::sentence_count;
use crate::trajectory::TrajectoryLog;

pub const RECORD_SCHEMA_VERSION: u32 = 1;

/// Versioned condenser prompt template.
pub const CONDENSER_TEMPLATE: &str = include_str!("../../templates/condenser_v1.txt");

pub fn condenser_template_sha256() -> String {
    hex::encode(Sha256::digest(CONDENSER_TEMPLATE.as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Evidence {
    pub name: String,
    pub description: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvidenceKind {
    FailModes,
    SuccessWorkflows,
}

impl EvidenceKind {
    pub fn for_outcome(final_success: Option<bool>) -> Self {
        if final_success == Some(true) {
            EvidenceKind::SuccessWorkflows
        } else {
            EvidenceKind::FailModes
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Completeness {
    Partial,
    Complete,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Routing {
    StreamOnly,
    PersistAndStream,
}

/// Standardized episode summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RecordWire", into = "RecordWire")]
pub struct CondensedRecord {
    pub summary_text: String,
    pub embedding: Vec<f32>,
    pub final_success: Option<bool>,
    pub evidence_kind: EvidenceKind,
    pub evidence: Vec<Evidence>,
    pub completeness: Completeness,
    /// Set when the trajectory was complete but the agent never declared an
    /// outcome, so `final_success` is the summarizer's judgment.
    pub outcome_inferred: bool,
    pub source: EpisodeMeta,
}

#[derive(Serialize, Deserialize)]
struct RecordWire {
    schema_version: u32,
    summary_text: String,
    embedding: Vec<f32>,
    final_success: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    fail_modes: Option<Vec<Evidence>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    success_workflows: Option<Vec<Evidence>>,
    completeness: Completeness,
    #[serde(default)]
    outcome_inferred: bool,
    source: EpisodeMeta,
}

impl TryFrom<RecordWire> for CondensedRecord {
    type Error = String;

    fn try_from(w: RecordWire) -> Result<Self, String> {
        if w.schema_version != RECORD_SCHEMA_VERSION {
            return Err(format!("unsupported schema_version {}", w.schema_version));
        }
        let (evidence_kind, evidence) = match (w.fail_modes, w.success_workflows) {
            (Some(f), None) => (EvidenceKind::FailModes, f),
            (None, Some(s)) => (EvidenceKind::SuccessWorkflows, s),
            (None, None) => (EvidenceKind::FailModes, Vec::new()),
            (Some(_), Some(_)) => return Err("both fail_modes and success_workflows present".into()),
        };
        Ok(CondensedRecord {
            summary_text: w.summary_text,
            embedding: w.embedding,
            final_success: w.final_success,
            evidence_kind,
            evidence,
            completeness: w.completeness,
            outcome_inferred: w.outcome_inferred,
            source: w.source,
        })
    }
}

impl From<CondensedRecord> for RecordWire {
    fn from(r: CondensedRecord) -> Self {
        let (fail_modes, success_workflows) = match r.evidence_kind {
            EvidenceKind::FailModes => (Some(r.evidence), None),
            EvidenceKind::SuccessWorkflows => (None, Some(r.evidence)),
        };
        RecordWire {
            schema_version: RECORD_SCHEMA_VERSION,
            summary_text: r.summary_text,
            embedding: r.embedding,
            final_success: r.final_success,
            fail_modes,
            success_workflows,
            completeness: r.completeness,
            outcome_inferred: r.outcome_inferred,
            source: r.source,
        }
    }
}

impl CondensedRecord {
    /// Checks every schema invariant against an expected embedding dimension.
    pub fn validate(&self, dimension: usize) -> Result<(), String> {
        if self.summary_text.trim().is_empty() {
            return Err("summary_text is empty".into());
        }
        let n = sentence_count(&self.summary_text);
        if !(3..=5).contains(&n) {
            return Err(format!("summary_text has {n} sentences, expected 3-5"));
        }
        if self.embedding.len() != dimension {
            return Err(format!("embedding has {} dims, expected {dimension}", self.embedding.len()));
        }
        if self.embedding.iter().any(|x| !x.is_finite()) {
            return Err("embedding has non-finite entries".into());
        }
        if self.embedding.iter().all(|x| *x == 0.0) {
            return Err("embedding is all zeros".into());
        }
        match self.completeness {
            Completeness::Partial if self.final_success.is_some() => {
                return Err("partial record must have final_success null".into())
            }
            Completeness::Complete if self.final_success.is_none() => {
                return Err("complete record must have final_success true or false".into())
            }
            Completeness::Complete if self.evidence.is_empty() => return Err("complete record needs evidence".into()),
            _ => {}
        }
        if self.evidence_kind != EvidenceKind::for_outcome(self.final_success) {
            return Err(format!(
                "evidence tagged {:?} does not match final_success {:?}",
                self.evidence_kind, self.final_success
            ));
        }
        if self.evidence.iter().any(|e| e.name.trim().is_empty()) {
            return Err("evidence item without a name".into());
        }
        if self.source.final_success != self.final_success {
            return Err("source meta disagrees on final_success".into());
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("record serializes")
    }
}

/// Routing is a pure function of completeness.
pub fn route(record: &CondensedRecord) -> Routing {
    match record.completeness {
        Completeness::Partial => Routing::StreamOnly,
        Completeness::Complete => Routing::PersistAndStream,
    }
}

#[derive(Debug, thiserror::Error)]
pub enum EmbedError {
    #[error("cannot embed empty text")]
    EmptyText,
    #[error("embedder {backend} failed: {source}")]
    Backend { backend: String, source: BackendError },
    #[error("embedder {backend} returned {got} dims (expected {expected}) or non-finite values")]
    Malformed { backend: String, got: usize, expected: usize },
}

pub fn embed_text(text: &str, embedder: &dyn EmbedderBackend) -> Result<Vec<f32>, EmbedError> {
    if text.trim().is_empty() {
        return Err(EmbedError::EmptyText);
    }
    let v =
        embedder.embed(text).map_err(|source| EmbedError::Backend { backend: embedder.name().to_string(), source })?;
    if v.len() != embedder.dimension() || v.iter().any(|x| !x.is_finite()) || v.iter().all(|x| *x == 0.0) {
        return Err(EmbedError::Malformed {
            backend: embedder.name().to_string(),
            got: v.len(),
            expected: embedder.dimension(),
        });
    }
    Ok(v)
}

#[derive(Debug, thiserror::Error)]
pub enum CondenseError {
    #[error("summarizer {backend} failed: {source}")]
    Backend { backend: String, source: BackendError },
    #[error("summarizer {backend} produced invalid output ({reason}): {raw}")]
    InvalidOutput { backend: String, reason: String, raw: String },
    #[error(transparent)]
    Embed(#[from] EmbedError),
}

/// Renders the condenser prompt for a trajectory.
pub fn build_condenser_prompt(log: &TrajectoryLog) -> String {
    let steps: Vec<String> = log.steps.iter().map(|s| serde_json::to_string(s).expect("step serializes")).collect();
    CONDENSER_TEMPLATE
        .replace("{{goal}}", &log.goal)
        .replace("{{domain_root}}", &log.domain_root)
        .replace("{{completeness}}", if log.is_complete() { "complete" } else { "partial" })
        .replace(
            "{{declared_success}}",
            match log.declared_success {
                Some(true) => "success",
                Some(false) => "failure",
                None => "unknown",
            },
        )
        .replace("{{step_count}}", &log.steps.len().to_string())
        .replace("{{trajectory}}", &steps.join("\n"))
}

#[derive(Deserialize)]
struct SummaryOutput {
    summary_text: String,
    #[serde(default)]
    final_success: Option<bool>,
    #[serde(default)]
    fail_modes: Option<Vec<Evidence>>,
    #[serde(default)]
    success_workflows: Option<Vec<Evidence>>,
}

struct Validated {
    summary_text: String,
    final_success: Option<bool>,
    evidence_kind: EvidenceKind,
    evidence: Vec<Evidence>,
    outcome_inferred: bool,
}

/// Pulls the outermost JSON object out of a model reply that may carry
/// code fences or chatter around it.
pub(crate) fn extract_json_object(raw: &str) -> Option<&str> {
    let start = raw.find('{')?;
    let end = raw.rfind('}')?;
    (end > start).then(|| &raw[start..=end])
}

fn validate_output(raw: &str, log: &TrajectoryLog) -> Result<Validated, String> {
    let body = extract_json_object(raw).ok_or("no JSON object in output")?;
    let out: SummaryOutput = serde_json::from_str(body).map_err(|e| e.to_string())?;
    let n = sentence_count(&out.summary_text);
    if out.summary_text.trim().is_empty() || !(3..=5).contains(&n) {
        return Err(format!("summary_text has {n} sentences, expected 3-5"));
    }
    let (final_success, outcome_inferred) = if log.is_complete() {
        match (log.declared_success, out.final_success) {
            (Some(declared), _) => (Some(declared), false),
            (None, Some(judged)) => (Some(judged), true),
            (None, None) => return Err("complete trace needs final_success true or false".into()),
        }
    } else {
        (None, false)
    };
    let expected = EvidenceKind::for_outcome(final_success);
    let (kind, evidence) = match (out.fail_modes, out.success_workflows) {
        (Some(f), None) => (EvidenceKind::FailModes, f),
        (None, Some(s)) => (EvidenceKind::SuccessWorkflows, s),
        (Some(f), Some(s)) => match expected {
            // Tolerate an empty list for the other tag.
            EvidenceKind::FailModes if s.is_empty() => (EvidenceKind::FailModes, f),
            EvidenceKind::SuccessWorkflows if f.is_empty() => (EvidenceKind::SuccessWorkflows, s),
            _ => return Err("both fail_modes and success_workflows given".into()),
        },
        (None, None) if final_success.is_none() => (EvidenceKind::FailModes, Vec::new()),
        (None, None) => return Err("complete trace needs evidence".into()),
    };
    if kind != expected {
        return Err(format!("evidence tagged {kind:?} but outcome is {final_success:?}"));
    }
    if final_success.is_some() && evidence.is_empty() {
        return Err("complete trace needs at least one evidence item".into());
    }
    if evidence.iter().any(|e| e.name.trim().is_empty()) {
        return Err("evidence item without a name".into());
    }
    Ok(Validated {
        summary_text: out.summary_text.trim().to_string(),
        final_success,
        evidence_kind: kind,
        evidence,
        outcome_inferred,
    })
}

/// Deterministic id for an episode whose caller supplied none.
pub fn default_episode_id(log: &TrajectoryLog) -> String {
    let digest = Sha256::digest(log.to_json().as_bytes());
    format!("ep-{}", &hex::encode(digest)[..16])
}

/// Condenses one trajectory. Malformed summarizer output gets one repair
/// retry before failing.
pub fn condense(
    log: &TrajectoryLog,
    summarizer: &dyn SummarizerBackend,
    embedder: &dyn EmbedderBackend,
    episode_id: Option<&str>,
) -> Result<CondensedRecord, CondenseError> {
    let text = build_condenser_prompt(log);
    let mut raw = call_summarizer(summarizer, &text, log, 0)?;
    let validated = match validate_output(&raw, log) {
        Ok(v) => v,
        Err(reason) => {
            tracing::warn!(backend = summarizer.name(), %reason, "condenser output invalid; retrying");
            let repair =
                format!("{text}\nYour previous reply was rejected ({reason}). Reply again with only the JSON object.");
            raw = call_summarizer(summarizer, &repair, log, 1)?;
            validate_output(&raw, log).map_err(|reason| CondenseError::InvalidOutput {
                backend: summarizer.name().to_string(),
                reason,
                raw: raw.clone(),
            })?
        }
    };

    let embedding = embed_text(&validated.summary_text, embedder)?;
    let completeness = if log.is_complete() { Completeness::Complete } else { Completeness::Partial };
    let source = EpisodeMeta {
        episode_id: episode_id.map_or_else(|| default_episode_id(log), str::to_string),
        domain_root: log.domain_root.clone(),
        user_goal: log.goal.clone(),
        model_name: log.model_name.clone(),
        total_steps: log.steps.len(),
        timestamp_ms: log.steps.last().map_or(0, |s| s.timestamp_ms),
        task_id: log.task_id.clone(),
        final_success: validated.final_success,
    };
    let record = CondensedRecord {
        summary_text: validated.summary_text,
        embedding,
        final_success: validated.final_success,
        evidence_kind: validated.evidence_kind,
        evidence: validated.evidence,
        completeness,
        outcome_inferred: validated.outcome_inferred,
        source,
    };
    debug_assert!(record.validate(embedder.dimension()).is_ok());
    Ok(record)
}

fn call_summarizer(
    summarizer: &dyn SummarizerBackend,
    text: &str,
    log: &TrajectoryLog,
    attempt: u32,
) -> Result<String, CondenseError> {
    summarizer
        .generate(&SummaryPrompt { text, trajectory: log, attempt })
        .map_err(|source| CondenseError::Backend { backend: summarizer.name().to_string(), source })
}

/// Holds the condenser backends. Calls to backends that declare themselves
/// non-shareable are serialized.
pub struct Condenser {
    summarizer: Arc<dyn SummarizerBackend>,
    embedder: Arc<dyn EmbedderBackend>,
    summarizer_gate: Option<Mutex<()>>,
    embedder_gate: Option<Mutex<()>>,
}

impl std::fmt::Debug for Condenser {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Condenser")
            .field("summarizer", &self.summarizer.name())
            .field("embedder", &self.embedder.name())
            .finish()
    }
}

impl Condenser {
    pub fn new(summarizer: Arc<dyn SummarizerBackend>, embedder: Arc<dyn EmbedderBackend>) -> Self {
        Condenser {
            summarizer_gate: (!summarizer.shareable()).then(|| Mutex::new(())),
            embedder_gate: (!embedder.shareable()).then(|| Mutex::new(())),
            summarizer,
            embedder,
        }
    }

    pub fn stub(dimension: usize) -> Self {
        Condenser::new(Arc::new(StubSummarizer), Arc::new(StubEmbedder::new(dimension, 0)))
    }

    pub fn dimension(&self) -> usize {
        self.embedder.dimension()
    }

    pub fn embedder(&self) -> &dyn EmbedderBackend {
        self.embedder.as_ref()
    }

    pub fn condense(&self, log: &TrajectoryLog, episode_id: Option<&str>) -> Result<CondensedRecord, CondenseError> {
        let _s = self.summarizer_gate.as_ref().map(Mutex::lock);
        let _e = self.embedder_gate.as_ref().map(Mutex::lock);
        condense(log, self.summarizer.as_ref(), self.embedder.as_ref(), episode_id)
    }

    pub fn embed(&self, text: &str) -> Result<Vec<f32>, EmbedError> {
        let _e = self.embedder_gate.as_ref().map(Mutex::lock);
        embed_text(text, self.embedder.as_ref())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ems::cosine_score;
    use crate::trajectory::{Action, Observation, StepRecord, DEFAULT_HARD_CAP};
    use std::sync::atomic::{AtomicU32, Ordering};

    fn log_with(steps: usize, done: Option<bool>) -> TrajectoryLog {
        let mut log = TrajectoryLog::new("Apple--3", "Check HomePod mini colors", "apple.com", "stub");
        for i in 0..steps {
            log.steps.push(StepRecord {
                step_index: i,
                observation: Observation { text: format!("Page {i} | apple.com"), screenshot: None },
                action: Action::new("click").with_arg("target", format!("Link {i}")),
                self_eval: String::new(),
                timestamp_ms: 100 * i as u64,
                terminal: done.is_some() && i + 1 == steps,
            });
        }
        log.refresh_status(DEFAULT_HARD_CAP);
        if log.is_complete() {
            log.declared_success = done;
        }
        log
    }

    #[test]
    fn partial_record_streams_only() {
        let c = Condenser::stub(64);
        let r = c.condense(&log_with(2, None), None).unwrap();
        assert_eq!(r.completeness, Completeness::Partial);
        assert_eq!(r.final_success, None);
        assert_eq!(route(&r), Routing::StreamOnly);
        r.validate(64).unwrap();
    }

    #[test]
    fn complete_records_persist() {
        let c = Condenser::stub(64);
        let ok = c.condense(&log_with(4, Some(true)), None).unwrap();
        assert_eq!(ok.final_success, Some(true));
        assert_eq!(ok.evidence_kind, EvidenceKind::SuccessWorkflows);
        assert_eq!(route(&ok), Routing::PersistAndStream);
        let failed = c.condense(&log_with(4, Some(false)), None).unwrap();
        assert_eq!(failed.evidence_kind, EvidenceKind::FailModes);
        assert_eq!(route(&failed), Routing::PersistAndStream);
    }

    #[test]
    fn undeclared_outcome_is_inferred_and_flagged() {
        let c = Condenser::stub(64);
        let r = c.condense(&log_with(DEFAULT_HARD_CAP, None), None).unwrap();
        assert_eq!(r.completeness, Completeness::Complete);
        assert_eq!(r.final_success, Some(false));
        assert!(r.outcome_inferred);
    }

    #[test]
    fn stub_is_byte_identical_across_runs() {
        let c = Condenser::stub(DEFAULT_EMBEDDING_DIM);
        let log = log_with(5, None);
        let first = c.condense(&log, None).unwrap().to_json();
        for _ in 0..100 {
            assert_eq!(c.condense(&log, None).unwrap().to_json(), first);
        }
    }

    #[test]
    fn wire_form_round_trips_and_uses_tag_names() {
        let c = Condenser::stub(16);
        let r = c.condense(&log_with(3, Some(true)), Some("ep-1")).unwrap();
        let json = r.to_json();
        assert!(json.contains("\"success_workflows\""));
        assert!(json.contains("\"schema_version\":1"));
        let back: CondensedRecord = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn embed_text_rejects_empty() {
        let e = StubEmbedder::default();
        assert!(matches!(embed_text("  ", &e), Err(EmbedError::EmptyText)));
        assert_eq!(embed_text("hello", &e).unwrap(), embed_text("hello", &e).unwrap());
    }

    #[test]
    fn unrelated_texts_score_low() {
        // Regression fixture: computed once with the stub embedder.
        let e = StubEmbedder::default();
        let a = embed_text("Find the cheapest flight from Boston to Denver next Tuesday", &e).unwrap();
        let b = embed_text("Look up the definition of serendipity in the dictionary", &e).unwrap();
        let s = cosine_score(&a, &b).unwrap();
        assert!(s < 0.5, "{s}");
        assert!(s.abs() < 0.2, "{s}");
    }

    struct Flaky {
        calls: AtomicU32,
        outputs: Vec<String>,
    }

    impl SummarizerBackend for Flaky {
        fn name(&self) -> &str {
            "flaky"
        }
        fn generate(&self, _: &SummaryPrompt<'_>) -> Result<String, BackendError> {
            let i = self.calls.fetch_add(1, Ordering::SeqCst) as usize;
            Ok(self.outputs[i.min(self.outputs.len() - 1)].clone())
        }
        fn deterministic(&self) -> bool {
            false
        }
    }

    #[test]
    fn one_repair_retry_then_error() {
        let good = StubSummarizer.summarize(&log_with(2, None)).to_string();
        let flaky = Flaky { calls: AtomicU32::new(0), outputs: vec!["nonsense".into(), good] };
        let e = StubEmbedder::new(8, 0);
        condense(&log_with(2, None), &flaky, &e, None).unwrap();
        assert_eq!(flaky.calls.load(Ordering::SeqCst), 2);

        let bad = Flaky { calls: AtomicU32::new(0), outputs: vec!["{\"summary_text\": \"One.\"}".into()] };
        let err = condense(&log_with(2, None), &bad, &e, None).unwrap_err();
        match err {
            CondenseError::InvalidOutput { backend, raw, .. } => {
                assert_eq!(backend, "flaky");
                assert!(raw.contains("One."));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(bad.calls.load(Ordering::SeqCst), 2);
    }

    struct Down;
    impl SummarizerBackend for Down {
        fn name(&self) -> &str {
            "down"
        }
        fn generate(&self, _: &SummaryPrompt<'_>) -> Result<String, BackendError> {
            Err(BackendError::Transport("connection refused".into()))
        }
        fn deterministic(&self) -> bool {
            true
        }
    }

    #[test]
    fn backend_failure_names_backend() {
        let err = condense(&log_with(1, None), &Down, &StubEmbedder::new(8, 0), None).unwrap_err();
        assert!(err.to_string().contains("summarizer down failed"));
    }

    #[test]
    fn prompt_template_is_pinned() {
        assert_eq!(condenser_template_sha256().len(), 64);
        let p = build_condenser_prompt(&log_with(2, None));
        assert!(p.contains("Trace status: partial"));
        assert!(p.contains("\"step_index\":1"));
        assert!(!p.contains("{{"));
    }
}
