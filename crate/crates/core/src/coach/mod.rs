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

//! Deciding whether to interrupt the actor, and with what.
//!
//! [`decide`] renders the coach prompt, asks a [`CoachBackend`] for a JSON
//! decision and validates it. Anything that goes wrong on the backend side
//! turns into a silent decision plus a [`CoachFault`]; the actor never sees
//! a coach error.

mod inject;
mod stub;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use inject::{AdviceQueue, InjectError, InjectionReceipt, SystemMessage};
pub use stub::StubCoach;

use crate::condenser::{BackendError, Completeness, CondensedRecord};
use crate::ems::{rank_order, Hit};
use crate::text::truncate_sentences;

pub const COACH_TEMPLATE: &str = include_str!("../../templates/coach_v1.txt");
pub const NO_EXPERIENCES_MARKER: &str = "(no relevant experiences retrieved)";
pub const MAX_ADVICE_SENTENCES: usize = 2;

pub fn coach_template_sha256() -> String {
    hex::encode(Sha256::digest(COACH_TEMPLATE.as_bytes()))
}

/// Intervention thresholds for the rule-based coach.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CoachPolicy {
    /// Minimum score for a retrieved failure to count as a warning.
    pub failure_threshold: f64,
    /// Minimum score for a retrieved success to be offered as a shortcut.
    pub success_threshold: f64,
}

impl Default for CoachPolicy {
    fn default() -> Self {
        CoachPolicy { failure_threshold: 0.80, success_threshold: 0.85 }
    }
}

#[derive(Debug, Clone)]
pub struct CoachInput {
    pub current: CondensedRecord,
    pub retrieved: Vec<Hit>,
}

impl CoachInput {
    /// Sorts `retrieved` into rank order. Fails if `current` is complete.
    pub fn new(current: CondensedRecord, mut retrieved: Vec<Hit>) -> Result<Self, String> {
        if current.completeness != Completeness::Partial {
            return Err("coach input must be a partial trace".into());
        }
        retrieved.sort_by(rank_order);
        Ok(CoachInput { current, retrieved })
    }

    pub fn step_count(&self) -> usize {
        self.current.source.total_steps
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoachDecision {
    pub intervene: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub advice: Option<String>,
    #[serde(default)]
    pub cited_episode_ids: Vec<String>,
    /// Logged, never injected.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rationale: Option<String>,
}

impl CoachDecision {
    pub fn silent() -> Self {
        CoachDecision::default()
    }

    /// Checks the decision against its schema and against the input it was
    /// made for.
    pub fn validate(&self, input: &CoachInput) -> Result<(), String> {
        match (&self.intervene, &self.advice) {
            (false, Some(_)) => return Err("advice present without intervention".into()),
            (true, None) => return Err("intervention without advice".into()),
            (true, Some(a)) if a.trim().is_empty() => return Err("empty advice".into()),
            (true, Some(a)) if crate::text::sentence_count(a) > MAX_ADVICE_SENTENCES => {
                return Err("advice longer than two sentences".into())
            }
            _ => {}
        }
        if !self.intervene && !self.cited_episode_ids.is_empty() {
            return Err("citations without intervention".into());
        }
        for id in &self.cited_episode_ids {
            if !input.retrieved.iter().any(|h| &h.record.meta.episode_id == id) {
                return Err(format!("cited episode {id} was not retrieved"));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("decision serializes")
    }
}

/// What the backend gets: rendered prompt text plus the structured input.
#[derive(Debug, Clone, Copy)]
pub struct CoachPrompt<'a> {
    pub text: &'a str,
    pub input: &'a CoachInput,
    pub attempt: u32,
}

pub trait CoachBackend: Send + Sync {
    fn name(&self) -> &str;
    fn decide_raw(&self, prompt: &CoachPrompt<'_>) -> Result<String, BackendError>;
    fn deterministic(&self) -> bool;
    fn shareable(&self) -> bool {
        true
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CoachFault {
    Transport { backend: String, message: String },
    Malformed { backend: String, reason: String, raw: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decided {
    pub decision: CoachDecision,
    pub fault: Option<CoachFault>,
}

fn outcome_label(hit: &Hit) -> &'static str {
    match hit.record.meta.final_success {
        Some(true) => "success",
        Some(false) => "failure",
        None => "unknown",
    }
}

fn evidence_lines(items: &[crate::condenser::Evidence]) -> String {
    if items.is_empty() {
        return "- none".into();
    }
    items.iter().map(|e| format!("- {}: {}", e.name, e.description)).collect::<Vec<_>>().join("\n")
}

pub fn build_coach_prompt(input: &CoachInput) -> String {
    let experiences = if input.retrieved.is_empty() {
        NO_EXPERIENCES_MARKER.to_string()
    } else {
        input
            .retrieved
            .iter()
            .enumerate()
            .map(|(i, h)| {
                let m = &h.record.meta;
                let label = if m.final_success == Some(true) { "Success workflows" } else { "Fail modes" };
                format!(
                    "### Experience {} (episode_id: {})\nSimilarity score: {}\nOutcome: {}\nTotal steps: {}\nGoal: {}\nSummary: {}\n{label}:\n{}",
                    i + 1,
                    m.episode_id,
                    h.score,
                    outcome_label(h),
                    m.total_steps,
                    m.user_goal,
                    h.record.summary_text,
                    evidence_lines(&h.record.evidence),
                )
            })
            .collect::<Vec<_>>()
            .join("\n\n")
    };
    COACH_TEMPLATE
        .replace("{{step_count}}", &input.step_count().to_string())
        .replace("{{current_summary}}", &input.current.summary_text)
        .replace("{{current_evidence}}", &evidence_lines(&input.current.evidence))
        .replace("{{experiences}}", &experiences)
}

#[derive(Deserialize)]
struct RawDecision {
    intervene: bool,
    #[serde(default)]
    advice: Option<String>,
    #[serde(default)]
    cited_episode_ids: Vec<String>,
    #[serde(default)]
    rationale: Option<String>,
}

/// Parses and normalizes a backend reply: advice is cut at the second
/// sentence and citations of episodes that were not retrieved are dropped.
pub fn parse_decision(raw: &str, input: &CoachInput) -> Result<CoachDecision, String> {
    let body = crate::condenser::extract_json_object(raw).ok_or("no JSON object in output")?;
    let r: RawDecision = serde_json::from_str(body).map_err(|e| e.to_string())?;
    if !r.intervene {
        return Ok(CoachDecision { rationale: r.rationale, ..CoachDecision::silent() });
    }
    let advice = r
        .advice
        .map(|a| truncate_sentences(a.trim(), MAX_ADVICE_SENTENCES))
        .filter(|a| !a.trim().is_empty())
        .ok_or("intervene is true but advice is missing or empty")?;
    let mut cited: Vec<String> = Vec::new();
    for id in r.cited_episode_ids {
        if input.retrieved.iter().any(|h| h.record.meta.episode_id == id) && !cited.contains(&id) {
            cited.push(id);
        }
    }
    Ok(CoachDecision { intervene: true, advice: Some(advice), cited_episode_ids: cited, rationale: r.rationale })
}

/// Runs the backend with one repair retry. Never fails.
pub fn decide(input: &CoachInput, backend: &dyn CoachBackend) -> Decided {
    let text = build_coach_prompt(input);
    let mut raw = String::new();
    let mut reason = String::new();
    for attempt in 0..2u32 {
        let prompt_text = if attempt == 0 {
            text.clone()
        } else {
            format!("{text}\nYour previous reply was rejected ({reason}). Reply again with only the JSON object.")
        };
        raw = match backend.decide_raw(&CoachPrompt { text: &prompt_text, input, attempt }) {
            Ok(r) => r,
            Err(e) => {
                tracing::warn!(backend = backend.name(), error = %e, "coach backend failed; staying silent");
                return Decided {
                    decision: CoachDecision::silent(),
                    fault: Some(CoachFault::Transport { backend: backend.name().to_string(), message: e.to_string() }),
                };
            }
        };
        match parse_decision(&raw, input) {
            Ok(d) => {
                debug_assert!(d.validate(input).is_ok());
                return Decided { decision: d, fault: None };
            }
            Err(r) => reason = r,
        }
    }
    tracing::warn!(backend = backend.name(), %reason, "coach output unparseable after retry; staying silent");
    Decided {
        decision: CoachDecision::silent(),
        fault: Some(CoachFault::Malformed { backend: backend.name().to_string(), reason, raw }),
    }
}

/// Shared handle with serialization for non-shareable backends.
pub struct Coach {
    backend: Arc<dyn CoachBackend>,
    gate: Option<parking_lot::Mutex<()>>,
}

impl std::fmt::Debug for Coach {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Coach").field("backend", &self.backend.name()).finish()
    }
}

impl Coach {
    pub fn new(backend: Arc<dyn CoachBackend>) -> Self {
        Coach { gate: (!backend.shareable()).then(|| parking_lot::Mutex::new(())), backend }
    }

    pub fn stub(policy: CoachPolicy) -> Self {
        Coach::new(Arc::new(StubCoach::new(policy)))
    }

    pub fn name(&self) -> &str {
        self.backend.name()
    }

    pub fn decide(&self, input: &CoachInput) -> Decided {
        let _g = self.gate.as_ref().map(parking_lot::Mutex::lock);
        decide(input, self.backend.as_ref())
    }
}
