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

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use super::parse::{parse_with, ParsedLog};
use super::TrajectoryError;

/// A `$.a.b[0]` style path into a JSON value.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct JsonPath {
    raw: String,
    pointer: String,
}

impl JsonPath {
    pub fn parse(raw: &str) -> Result<Self, String> {
        let rest = raw.strip_prefix('$').ok_or_else(|| format!("path {raw:?} must start with '$'"))?;
        let mut pointer = String::new();
        let mut chars = rest.chars().peekable();
        while let Some(c) = chars.next() {
            match c {
                '.' => {
                    let mut key = String::new();
                    while let Some(&n) = chars.peek() {
                        if n == '.' || n == '[' {
                            break;
                        }
                        key.push(n);
                        chars.next();
                    }
                    if key.is_empty() {
                        return Err(format!("path {raw:?} has an empty segment"));
                    }
                    pointer.push('/');
                    pointer.push_str(&key.replace('~', "~0").replace('/', "~1"));
                }
                '[' => {
                    let mut idx = String::new();
                    for n in chars.by_ref() {
                        if n == ']' {
                            break;
                        }
                        idx.push(n);
                    }
                    if idx.is_empty() || !idx.chars().all(|d| d.is_ascii_digit()) {
                        return Err(format!("path {raw:?} has a bad index [{idx}]"));
                    }
                    pointer.push('/');
                    pointer.push_str(&idx);
                }
                other => return Err(format!("path {raw:?}: unexpected {other:?}")),
            }
        }
        Ok(JsonPath { raw: raw.to_string(), pointer })
    }

    pub fn get<'v>(&self, value: &'v Value) -> Option<&'v Value> {
        value.pointer(&self.pointer).filter(|v| !v.is_null())
    }

    pub fn as_str(&self) -> &str {
        &self.raw
    }
}

impl TryFrom<String> for JsonPath {
    type Error = String;
    fn try_from(s: String) -> Result<Self, String> {
        JsonPath::parse(&s)
    }
}

impl From<JsonPath> for String {
    fn from(p: JsonPath) -> String {
        p.raw
    }
}

impl fmt::Display for JsonPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.raw)
    }
}

/// How steps are laid out in the raw bytes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Envelope {
    /// One JSON object per line, one line per step.
    Lines,
    /// A single JSON document with the step array at `steps`.
    Document { steps: JsonPath },
}

/// Validated adapter descriptor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AdapterSpec {
    pub envelope: Envelope,
    pub observation: JsonPath,
    pub action: JsonPath,
    pub done: JsonPath,
    pub success: Option<JsonPath>,
    pub self_eval: Option<JsonPath>,
    pub timestamp: Option<JsonPath>,
    pub screenshot: Option<JsonPath>,
    pub task_id: Option<JsonPath>,
    pub goal: Option<JsonPath>,
    pub domain_root: Option<JsonPath>,
    pub model_name: Option<JsonPath>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpec {
    #[serde(default)]
    envelope: Option<String>,
    #[serde(default)]
    steps: Option<String>,
    #[serde(default, alias = "obs")]
    observation: Option<String>,
    #[serde(default, alias = "act")]
    action: Option<String>,
    #[serde(default, alias = "terminal")]
    done: Option<String>,
    #[serde(default)]
    success: Option<String>,
    #[serde(default, alias = "reward")]
    self_eval: Option<String>,
    #[serde(default)]
    timestamp: Option<String>,
    #[serde(default)]
    screenshot: Option<String>,
    #[serde(default)]
    task_id: Option<String>,
    #[serde(default)]
    goal: Option<String>,
    #[serde(default)]
    domain_root: Option<String>,
    #[serde(default)]
    model_name: Option<String>,
}

impl AdapterSpec {
    /// Parses an adapter descriptor file (JSON).
    pub fn from_json(text: &str) -> Result<Self, TrajectoryError> {
        let raw: RawSpec = serde_json::from_str(text).map_err(|e| TrajectoryError::InvalidAdapter(e.to_string()))?;
        let required = |v: Option<String>, name: &str| {
            v.ok_or_else(|| TrajectoryError::InvalidAdapter(format!("missing mapping: {name}"))).and_then(|p| path(&p))
        };
        let optional = |v: Option<String>| v.map(|p| path(&p)).transpose();
        let observation = required(raw.observation, "observation")?;
        let action = required(raw.action, "action")?;
        let done = required(raw.done, "done")?;
        let envelope = match raw.envelope.as_deref().unwrap_or("lines") {
            "lines" => Envelope::Lines,
            "document" => Envelope::Document { steps: required(raw.steps, "steps")? },
            other => return Err(TrajectoryError::InvalidAdapter(format!("unknown envelope {other:?}"))),
        };
        Ok(AdapterSpec {
            envelope,
            observation,
            action,
            done,
            success: optional(raw.success)?,
            self_eval: optional(raw.self_eval)?,
            timestamp: optional(raw.timestamp)?,
            screenshot: optional(raw.screenshot)?,
            task_id: optional(raw.task_id)?,
            goal: optional(raw.goal)?,
            domain_root: optional(raw.domain_root)?,
            model_name: optional(raw.model_name)?,
        })
    }

    /// Layout of the canonical step line emitted by the bundled tooling:
    /// `{"observation", "screenshot"?, "action": {"name", "args"}, "self_eval",
    /// "timestamp", "is_done", "success"}`, plus optional meta keys.
    pub fn canonical() -> Self {
        let p = |s: &str| JsonPath::parse(s).expect("static path");
        AdapterSpec {
            envelope: Envelope::Lines,
            observation: p("$.observation"),
            action: p("$.action"),
            done: p("$.is_done"),
            success: Some(p("$.success")),
            self_eval: Some(p("$.self_eval")),
            timestamp: Some(p("$.timestamp")),
            screenshot: Some(p("$.screenshot")),
            task_id: Some(p("$.task_id")),
            goal: Some(p("$.goal")),
            domain_root: Some(p("$.domain_root")),
            model_name: Some(p("$.model_name")),
        }
    }

    /// Content-addressed identifier.
    pub fn id(&self) -> AdapterId {
        let canonical = serde_json::to_vec(self).expect("spec serializes");
        let digest = Sha256::digest(&canonical);
        AdapterId(format!("a-{}", &hex::encode(digest)[..16]))
    }
}

fn path(raw: &str) -> Result<JsonPath, TrajectoryError> {
    JsonPath::parse(raw).map_err(TrajectoryError::InvalidAdapter)
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AdapterId(pub String);

impl fmt::Display for AdapterId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for AdapterId {
    fn from(s: &str) -> Self {
        AdapterId(s.to_string())
    }
}

#[derive(Debug, Clone)]
pub struct Adapter {
    pub id: AdapterId,
    pub spec: AdapterSpec,
}

impl Adapter {
    pub fn parse(&self, raw: &[u8], hard_cap: usize) -> Result<ParsedLog, TrajectoryError> {
        parse_with(&self.spec, raw, hard_cap)
    }
}

/// Registry of adapters. Reads are shared, registration is exclusive.
#[derive(Debug)]
pub struct AdapterRegistry {
    adapters: RwLock<HashMap<AdapterId, Arc<Adapter>>>,
    canonical: AdapterId,
}

impl Default for AdapterRegistry {
    fn default() -> Self {
        Self::new()
    }
}

impl AdapterRegistry {
    /// A registry pre-loaded with the canonical adapter.
    pub fn new() -> Self {
        let spec = AdapterSpec::canonical();
        let id = spec.id();
        let mut adapters = HashMap::new();
        adapters.insert(id.clone(), Arc::new(Adapter { id: id.clone(), spec }));
        AdapterRegistry { adapters: RwLock::new(adapters), canonical: id }
    }

    pub fn canonical_id(&self) -> &AdapterId {
        &self.canonical
    }

    pub fn register(&self, spec: AdapterSpec) -> AdapterId {
        let id = spec.id();
        self.adapters.write().entry(id.clone()).or_insert_with(|| Arc::new(Adapter { id: id.clone(), spec }));
        id
    }

    pub fn register_json(&self, text: &str) -> Result<AdapterId, TrajectoryError> {
        Ok(self.register(AdapterSpec::from_json(text)?))
    }

    pub fn get(&self, id: &AdapterId) -> Result<Arc<Adapter>, TrajectoryError> {
        self.adapters.read().get(id).cloned().ok_or_else(|| TrajectoryError::UnknownAdapter(id.0.clone()))
    }

    pub fn contains(&self, id: &AdapterId) -> bool {
        self.adapters.read().contains_key(id)
    }

    pub fn parse_step_log(&self, raw: &[u8], id: &AdapterId, hard_cap: usize) -> Result<ParsedLog, TrajectoryError> {
        self.get(id)?.parse(raw, hard_cap)
    }
}
