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

//! Canonical trajectory representation and ingestion of framework logs.
//!
//! Actors write one structured record per step. An [`Adapter`] maps the
//! source layout onto [`StepRecord`]s, and [`detect_completeness`] decides
//! whether the trace is still running or has reached a terminal state
//! (agent done flag, or the configured step cap).

mod adapter;
mod parse;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use adapter::{Adapter, AdapterId, AdapterRegistry, AdapterSpec, Envelope, JsonPath};
pub use parse::{ParseWarning, ParsedLog};

/// Version tag written into every canonical trajectory serialization.
pub const SCHEMA_VERSION: u32 = 1;

/// Default hard cap on steps per task.
pub const DEFAULT_HARD_CAP: usize = 50;

#[derive(Debug, thiserror::Error)]
pub enum TrajectoryError {
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error("step {step}: missing {field} at {path}")]
    MissingField { step: usize, field: &'static str, path: String },
    #[error("unknown adapter: {0}")]
    UnknownAdapter(String),
    #[error("invalid adapter: {0}")]
    InvalidAdapter(String),
    #[error("unsupported schema_version {0}")]
    SchemaVersion(u32),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub text: String,
    /// Opaque reference to a screenshot; never decoded here.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub screenshot: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Action {
    pub name: String,
    #[serde(default)]
    pub args: BTreeMap<String, String>,
}

impl Action {
    pub fn new(name: impl Into<String>) -> Self {
        Action { name: name.into(), args: BTreeMap::new() }
    }

    pub fn with_arg(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.args.insert(key.into(), value.into());
        self
    }

    /// The element the action was aimed at, if any. Looks at the usual
    /// argument names in order.
    pub fn target(&self) -> Option<&str> {
        ["target", "element", "text", "index", "url", "query"]
            .iter()
            .find_map(|k| self.args.get(*k))
            .map(String::as_str)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step_index: usize,
    pub observation: Observation,
    pub action: Action,
    /// The agent's own status assessment. Numeric rewards are stringified.
    #[serde(default)]
    pub self_eval: String,
    pub timestamp_ms: u64,
    /// Set when the source log carried the agent's done flag on this step.
    #[serde(default)]
    pub terminal: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryStatus {
    Running,
    Complete,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrajectoryLog {
    pub schema_version: u32,
    pub task_id: String,
    pub goal: String,
    pub domain_root: String,
    pub model_name: String,
    pub steps: Vec<StepRecord>,
    pub status: TrajectoryStatus,
    /// `None` while running, or when the agent never reported an outcome.
    pub declared_success: Option<bool>,
}

impl TrajectoryLog {
    pub fn new(
        task_id: impl Into<String>,
        goal: impl Into<String>,
        domain_root: impl Into<String>,
        model_name: impl Into<String>,
    ) -> Self {
        TrajectoryLog {
            schema_version: SCHEMA_VERSION,
            task_id: task_id.into(),
            goal: goal.into(),
            domain_root: domain_root.into(),
            model_name: model_name.into(),
            steps: Vec::new(),
            status: TrajectoryStatus::Running,
            declared_success: None,
        }
    }

    pub fn is_complete(&self) -> bool {
        self.status == TrajectoryStatus::Complete
    }

    /// Recompute `status` and `declared_success` from the steps.
    pub fn refresh_status(&mut self, hard_cap: usize) {
        self.status = detect_completeness(self, hard_cap);
        if self.status == TrajectoryStatus::Running {
            self.declared_success = None;
        }
    }

    /// Encodes the log in the canonical line envelope, one JSON object per
    /// step, with the identity fields on the first line.
    pub fn to_step_lines(&self) -> String {
        let mut out = String::new();
        for (i, s) in self.steps.iter().enumerate() {
            let mut line = serde_json::json!({
                "observation": s.observation.text,
                "action": {"name": s.action.name, "args": s.action.args},
                "self_eval": s.self_eval,
                "timestamp": s.timestamp_ms,
                "is_done": s.terminal,
            });
            if let Some(shot) = &s.observation.screenshot {
                line["screenshot"] = shot.clone().into();
            }
            if s.terminal {
                line["success"] = self.declared_success.into();
            }
            if i == 0 {
                line["task_id"] = self.task_id.clone().into();
                line["goal"] = self.goal.clone().into();
                line["domain_root"] = self.domain_root.clone().into();
                line["model_name"] = self.model_name.clone().into();
            }
            out.push_str(&line.to_string());
            out.push('\n');
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("trajectory serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, TrajectoryError> {
        let log: TrajectoryLog = serde_json::from_str(text).map_err(|e| TrajectoryError::Parse {
            offset: line_col_to_offset(text, e.line(), e.column()),
            message: e.to_string(),
        })?;
        if log.schema_version != SCHEMA_VERSION {
            return Err(TrajectoryError::SchemaVersion(log.schema_version));
        }
        Ok(log)
    }

    /// Checks the structural invariants of a canonical log.
    pub fn check_invariants(&self, hard_cap: usize) -> Result<(), String> {
        if self.steps.len() > hard_cap {
            return Err(format!("{} steps exceed cap {hard_cap}", self.steps.len()));
        }
        for (i, step) in self.steps.iter().enumerate() {
            if step.step_index != i {
                return Err(format!("step {i} has step_index {}", step.step_index));
            }
        }
        if self.steps.windows(2).any(|w| w[1].timestamp_ms < w[0].timestamp_ms) {
            return Err("timestamps decrease".into());
        }
        if self.status != detect_completeness(self, hard_cap) {
            return Err("status disagrees with terminal marker / cap".into());
        }
        if self.status == TrajectoryStatus::Running && self.declared_success.is_some() {
            return Err("running trajectory declares an outcome".into());
        }
        Ok(())
    }
}

/// Pure function of the terminal marker and the step count.
pub fn detect_completeness(log: &TrajectoryLog, hard_cap: usize) -> TrajectoryStatus {
    if log.steps.iter().any(|s| s.terminal) || log.steps.len() >= hard_cap {
        TrajectoryStatus::Complete
    } else {
        TrajectoryStatus::Running
    }
}

pub(crate) fn line_col_to_offset(text: &str, line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let line_start: usize = text.split_inclusive('\n').take(line - 1).map(str::len).sum();
    (line_start + column.saturating_sub(1)).min(text.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step(i: usize, terminal: bool) -> StepRecord {
        StepRecord {
            step_index: i,
            observation: Observation { text: format!("page {i}"), screenshot: None },
            action: Action::new("click").with_arg("target", "Next"),
            self_eval: String::new(),
            timestamp_ms: i as u64,
            terminal,
        }
    }

    #[test]
    fn empty_trajectory_is_running() {
        let log = TrajectoryLog::new("t", "g", "d", "m");
        assert_eq!(detect_completeness(&log, DEFAULT_HARD_CAP), TrajectoryStatus::Running);
    }

    #[test]
    fn terminal_marker_anywhere_completes() {
        let mut log = TrajectoryLog::new("t", "g", "d", "m");
        log.steps = vec![step(0, false), step(1, true), step(2, false)];
        assert_eq!(detect_completeness(&log, DEFAULT_HARD_CAP), TrajectoryStatus::Complete);
    }

    #[test]
    fn cap_reached_completes() {
        let mut log = TrajectoryLog::new("t", "g", "d", "m");
        log.steps = (0..DEFAULT_HARD_CAP).map(|i| step(i, false)).collect();
        assert_eq!(DEFAULT_HARD_CAP, 50);
        assert_eq!(detect_completeness(&log, DEFAULT_HARD_CAP), TrajectoryStatus::Complete);
        log.steps.pop();
        assert_eq!(detect_completeness(&log, DEFAULT_HARD_CAP), TrajectoryStatus::Running);
    }

    #[test]
    fn schema_version_is_checked() {
        let mut log = TrajectoryLog::new("t", "g", "d", "m");
        log.schema_version = 2;
        let err = TrajectoryLog::from_json(&log.to_json()).unwrap_err();
        assert!(matches!(err, TrajectoryError::SchemaVersion(2)));
    }

    #[test]
    fn offsets_from_line_and_column() {
        let text = "ab\ncdef\ng";
        assert_eq!(line_col_to_offset(text, 1, 1), 0);
        assert_eq!(line_col_to_offset(text, 2, 3), 5);
        assert_eq!(line_col_to_offset(text, 3, 1), 8);
    }
}
