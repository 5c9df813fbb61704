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

//! Sidecar configuration file and environment overrides.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::coach::CoachPolicy;
use crate::condenser::DEFAULT_EMBEDDING_DIM;
use crate::ems::IndexConfig;
use crate::trajectory::DEFAULT_HARD_CAP;

pub const ENV_CONFIG: &str = "WEBCOACH_CONFIG";
pub const ENV_SNAPSHOT: &str = "WEBCOACH_SNAPSHOT";
pub const ENV_MODE: &str = "WEBCOACH_MODE";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemoryMode {
    /// Finalized episodes are condensed and logged but never stored.
    Frozen,
    /// Finalized episodes are stored and retrievable right away.
    Dynamic,
}

impl FromStr for MemoryMode {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, ConfigError> {
        match s.trim().to_ascii_lowercase().as_str() {
            "frozen" => Ok(MemoryMode::Frozen),
            "dynamic" => Ok(MemoryMode::Dynamic),
            other => Err(ConfigError::Invalid(format!("unknown memory mode '{other}'"))),
        }
    }
}

impl std::fmt::Display for MemoryMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MemoryMode::Frozen => "frozen",
            MemoryMode::Dynamic => "dynamic",
        })
    }
}

/// One model backend. `kind = "stub"` needs nothing else; `kind = "http"`
/// talks to an OpenAI-compatible endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendSpec {
    pub kind: String,
    pub endpoint: Option<String>,
    pub model: Option<String>,
    pub timeout_s: f64,
}

impl Default for BackendSpec {
    fn default() -> Self {
        BackendSpec { kind: "stub".into(), endpoint: None, model: None, timeout_s: 10.0 }
    }
}

impl BackendSpec {
    pub fn is_stub(&self) -> bool {
        self.kind == "stub"
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Backends {
    pub summarizer: BackendSpec,
    pub embedder: BackendSpec,
    pub coach: BackendSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SidecarConfig {
    /// Retrieved experiences per coach call.
    pub k: usize,
    pub coach: CoachPolicy,
    pub hard_cap: usize,
    /// Actor-side action budget.
    pub step_timeout_s: f64,
    /// Budget for condense, retrieve and decide on one step. Capped by
    /// `step_timeout_s`.
    pub coach_deadline_s: f64,
    pub memory_mode: MemoryMode,
    pub snapshot_path: Option<PathBuf>,
    /// Run the coach on every `stride`-th step.
    pub stride: usize,
    /// Open sessions idle longer than this are closed without persisting.
    pub idle_timeout_s: f64,
    pub embedding_dim: usize,
    pub index: IndexConfig,
    /// Exact scan instead of the graph index.
    pub exact_search: bool,
    pub backends: Backends,
    pub seed: u64,
}

impl Default for SidecarConfig {
    fn default() -> Self {
        SidecarConfig {
            k: 5,
            coach: CoachPolicy::default(),
            hard_cap: DEFAULT_HARD_CAP,
            step_timeout_s: 30.0,
            coach_deadline_s: 10.0,
            memory_mode: MemoryMode::Dynamic,
            snapshot_path: None,
            stride: 1,
            idle_timeout_s: 3600.0,
            embedding_dim: DEFAULT_EMBEDDING_DIM,
            index: IndexConfig::default(),
            exact_search: false,
            backends: Backends::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{0}")]
    Invalid(String),
}

impl SidecarConfig {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text =
            std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
        let cfg: SidecarConfig = serde_json::from_str(&text)
            .map_err(|e| ConfigError::Parse { path: path.to_path_buf(), message: e.to_string() })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads `path`, or the file named by `WEBCOACH_CONFIG`, or defaults,
    /// then applies the snapshot and mode overrides.
    pub fn resolve(path: Option<&Path>) -> Result<Self, ConfigError> {
        Self::resolve_with(path, |k| std::env::var(k).ok())
    }

    pub fn resolve_with(path: Option<&Path>, env: impl Fn(&str) -> Option<String>) -> Result<Self, ConfigError> {
        let from_env = env(ENV_CONFIG).filter(|s| !s.is_empty()).map(PathBuf::from);
        let mut cfg = match path.map(Path::to_path_buf).or(from_env) {
            Some(p) => Self::from_file(&p)?,
            None => SidecarConfig::default(),
        };
        if let Some(s) = env(ENV_SNAPSHOT).filter(|s| !s.is_empty()) {
            cfg.snapshot_path = Some(PathBuf::from(s));
        }
        if let Some(m) = env(ENV_MODE).filter(|s| !s.is_empty()) {
            cfg.memory_mode = m.parse()?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.into()));
        if self.k == 0 {
            return bad("k must be positive");
        }
        if self.hard_cap == 0 {
            return bad("hard_cap must be positive");
        }
        if self.stride == 0 {
            return bad("stride must be positive");
        }
        if self.embedding_dim == 0 {
            return bad("embedding_dim must be positive");
        }
        if self.index.m < 2 {
            return bad("index.m must be at least 2");
        }
        for (name, v) in [
            ("step_timeout_s", self.step_timeout_s),
            ("coach_deadline_s", self.coach_deadline_s),
            ("idle_timeout_s", self.idle_timeout_s),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(ConfigError::Invalid(format!("{name} must be a positive number")));
            }
        }
        for t in [self.coach.failure_threshold, self.coach.success_threshold] {
            if !(-1.0..=1.0).contains(&t) {
                return bad("coach thresholds must lie in [-1, 1]");
            }
        }
        Ok(())
    }

    pub fn coach_deadline(&self) -> std::time::Duration {
        std::time::Duration::from_secs_f64(self.coach_deadline_s.min(self.step_timeout_s))
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
