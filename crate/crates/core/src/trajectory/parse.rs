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

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::adapter::{AdapterSpec, Envelope, JsonPath};
use super::{
    detect_completeness, line_col_to_offset, Action, Observation, StepRecord, TrajectoryError, TrajectoryLog,
    TrajectoryStatus,
};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ParseWarning {
    /// The log carried more steps than the cap; the tail was dropped.
    Truncated { original: usize, cap: usize },
    /// Records after the first done flag were dropped.
    StepsAfterTerminal { dropped: usize },
    /// A timestamp went backwards and was clamped to its predecessor.
    TimestampClamped { step: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedLog {
    pub trajectory: TrajectoryLog,
    pub warnings: Vec<ParseWarning>,
}

struct SourceStep {
    value: Value,
    offset: usize,
}

pub(super) fn parse_with(spec: &AdapterSpec, raw: &[u8], hard_cap: usize) -> Result<ParsedLog, TrajectoryError> {
    let text = std::str::from_utf8(raw)
        .map_err(|e| TrajectoryError::Parse { offset: e.valid_up_to(), message: "invalid UTF-8".into() })?;

    let (source, root) = match &spec.envelope {
        Envelope::Lines => (split_lines(text)?, None),
        Envelope::Document { steps } => {
            let doc: Value = serde_json::from_str(text).map_err(|e| TrajectoryError::Parse {
                offset: line_col_to_offset(text, e.line(), e.column()),
                message: e.to_string(),
            })?;
            let items = match steps.get(&doc) {
                Some(Value::Array(items)) => items.clone(),
                None => Vec::new(),
                Some(_) => {
                    return Err(TrajectoryError::Parse { offset: 0, message: format!("{steps} is not an array") })
                }
            };
            let source = items.into_iter().map(|value| SourceStep { value, offset: 0 }).collect();
            (source, Some(doc))
        }
    };

    let mut warnings = Vec::new();
    let mut log = TrajectoryLog::new("", "", "", "");
    let meta_sources: Vec<&Value> = root.iter().chain(source.iter().map(|s| &s.value)).collect();
    log.task_id = first_text(&meta_sources, spec.task_id.as_ref());
    log.goal = first_text(&meta_sources, spec.goal.as_ref());
    log.domain_root = first_text(&meta_sources, spec.domain_root.as_ref());
    log.model_name = first_text(&meta_sources, spec.model_name.as_ref());

    let mut last_ts = 0u64;
    let mut terminal_success = None;
    let total = source.len();
    for (i, src) in source.into_iter().enumerate() {
        if log.steps.len() == hard_cap {
            warnings.push(ParseWarning::Truncated { original: total, cap: hard_cap });
            tracing::warn!(original = total, cap = hard_cap, "step log exceeds cap; truncated");
            break;
        }
        let v = &src.value;
        if !v.is_object() {
            return Err(TrajectoryError::Parse { offset: src.offset, message: format!("step {i} is not an object") });
        }
        let obs = spec.observation.get(v).ok_or_else(|| missing(i, "observation", &spec.observation))?;
        let act = spec.action.get(v).ok_or_else(|| missing(i, "action", &spec.action))?;
        let mut ts = spec.timestamp.as_ref().and_then(|p| p.get(v)).and_then(as_millis).unwrap_or(last_ts);
        if ts < last_ts {
            warnings.push(ParseWarning::TimestampClamped { step: i });
            ts = last_ts;
        }
        last_ts = ts;
        let terminal = spec.done.get(v).is_some_and(truthy);
        log.steps.push(StepRecord {
            step_index: i,
            observation: Observation {
                text: value_text(obs),
                screenshot: spec.screenshot.as_ref().and_then(|p| p.get(v)).map(value_text),
            },
            action: to_action(act),
            self_eval: spec.self_eval.as_ref().and_then(|p| p.get(v)).map(value_text).unwrap_or_default(),
            timestamp_ms: ts,
            terminal,
        });
        if terminal {
            terminal_success = spec.success.as_ref().and_then(|p| p.get(v)).and_then(as_bool);
            let dropped = total - i - 1;
            if dropped > 0 {
                warnings.push(ParseWarning::StepsAfterTerminal { dropped });
                tracing::warn!(dropped, "records after done flag dropped");
            }
            break;
        }
    }

    log.status = detect_completeness(&log, hard_cap);
    log.declared_success = match log.status {
        TrajectoryStatus::Running => None,
        TrajectoryStatus::Complete => terminal_success,
    };
    Ok(ParsedLog { trajectory: log, warnings })
}

fn split_lines(text: &str) -> Result<Vec<SourceStep>, TrajectoryError> {
    let mut out = Vec::new();
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let start = offset;
        offset += line.len();
        if line.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(line).map_err(|e| TrajectoryError::Parse {
            offset: start + e.column().saturating_sub(1).min(line.len()),
            message: e.to_string(),
        })?;
        out.push(SourceStep { value, offset: start });
    }
    Ok(out)
}

fn missing(step: usize, field: &'static str, path: &JsonPath) -> TrajectoryError {
    TrajectoryError::MissingField { step, field, path: path.to_string() }
}

fn first_text(sources: &[&Value], path: Option<&JsonPath>) -> String {
    path.and_then(|p| sources.iter().find_map(|v| p.get(v))).map(value_text).unwrap_or_default()
}

fn value_text(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn truthy(v: &Value) -> bool {
    match v {
        Value::Bool(b) => *b,
        Value::Number(n) => n.as_f64().is_some_and(|x| x != 0.0),
        Value::String(s) => matches!(s.trim().to_ascii_lowercase().as_str(), "true" | "yes" | "1" | "done"),
        _ => false,
    }
}

fn as_bool(v: &Value) -> Option<bool> {
    match v {
        Value::Bool(b) => Some(*b),
        Value::String(s) => match s.trim().to_ascii_lowercase().as_str() {
            "true" => Some(true),
            "false" => Some(false),
            _ => None,
        },
        _ => None,
    }
}

fn as_millis(v: &Value) -> Option<u64> {
    match v {
        Value::Number(n) => n.as_u64().or_else(|| n.as_f64().filter(|x| *x >= 0.0).map(|x| x as u64)),
        Value::String(s) => s.trim().parse().ok(),
        _ => None,
    }
}

/// Accepts `"click"`, `{"name": .., "args": {..}}` or the single-key form
/// `{"click_element": {"index": 3}}`.
fn to_action(v: &Value) -> Action {
    match v {
        Value::Object(map) => {
            if let Some(name) = map.get("name").and_then(Value::as_str) {
                let args = match map.get("args") {
                    Some(Value::Object(a)) => flatten_args(a),
                    _ => map
                        .iter()
                        .filter(|(k, _)| k.as_str() != "name")
                        .map(|(k, v)| (k.clone(), value_text(v)))
                        .collect(),
                };
                Action { name: name.to_string(), args }
            } else if map.len() == 1 {
                let (name, inner) = map.iter().next().expect("len checked");
                let args = match inner {
                    Value::Object(a) => flatten_args(a),
                    Value::Null => BTreeMap::new(),
                    other => BTreeMap::from([("value".to_string(), value_text(other))]),
                };
                Action { name: name.clone(), args }
            } else {
                Action { name: "composite".into(), args: flatten_args(map) }
            }
        }
        other => Action::new(value_text(other)),
    }
}

fn flatten_args(map: &serde_json::Map<String, Value>) -> BTreeMap<String, String> {
    map.iter().map(|(k, v)| (k.clone(), value_text(v))).collect()
}
