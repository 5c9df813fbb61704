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

//! Resolved run configuration, artifact bookkeeping and `run.json`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use webcoach_core::coach::coach_template_sha256;
use webcoach_core::condenser::condenser_template_sha256;
use webcoach_core::config::{MemoryMode, SidecarConfig};

use crate::cli::Command;

pub const RUN_FILE: &str = "run.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Applies one `key=value` override. Keys are dotted paths into the config
/// and must already exist; values parse as JSON, falling back to a string.
pub fn apply_override(config: &SidecarConfig, assignment: &str) -> Result<SidecarConfig> {
    let (key, raw) = assignment.split_once('=').with_context(|| format!("override '{assignment}' is not key=value"))?;
    let mut doc = serde_json::to_value(config)?;
    let mut slot = &mut doc;
    for part in key.trim().split('.') {
        slot = match slot {
            Value::Object(map) if map.contains_key(part) => map.get_mut(part).expect("key checked"),
            _ => bail!("unknown config key '{key}'"),
        };
    }
    *slot = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let cfg: SidecarConfig =
        serde_json::from_value(doc).with_context(|| format!("override '{assignment}' does not fit the config"))?;
    cfg.validate()?;
    Ok(cfg)
}

/// File config (or `WEBCOACH_CONFIG`), env overrides, then flags.
pub fn resolve_config(
    path: Option<&Path>,
    mode: Option<MemoryMode>,
    seed: Option<u64>,
    overrides: &[String],
) -> Result<SidecarConfig> {
    let mut cfg = SidecarConfig::resolve(path)?;
    for o in overrides {
        cfg = apply_override(&cfg, o)?;
    }
    if let Some(m) = mode {
        cfg.memory_mode = m;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Templates {
    pub condenser_sha256: String,
    pub coach_sha256: String,
}

impl Templates {
    pub fn current() -> Self {
        Templates { condenser_sha256: condenser_template_sha256(), coach_sha256: coach_template_sha256() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputFile {
    pub name: String,
    pub sha256: String,
    /// False for timing measurements, which differ run to run.
    pub replayable: bool,
}

/// Everything needed to rerun a command: written as `run.json` next to
/// the outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub tool: String,
    pub version: String,
    pub command: Command,
    /// The global --seed, which also reaches suites and benchmarks.
    #[serde(default)]
    pub seed: Option<u64>,
    pub config: SidecarConfig,
    pub templates: Templates,
    /// Input path → sha256 of its bytes.
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<OutputFile>,
}

impl RunRecord {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("{} is not a run record", path.display()))
    }
}

/// Collects inputs read and outputs written by one command.
#[derive(Debug)]
pub struct Artifacts {
    dir: Option<PathBuf>,
    inputs: BTreeMap<String, String>,
    outputs: Vec<OutputFile>,
}

impl Artifacts {
    pub fn new(dir: Option<PathBuf>) -> Result<Self> {
        if let Some(d) = &dir {
            std::fs::create_dir_all(d).with_context(|| format!("cannot create {}", d.display()))?;
        }
        Ok(Artifacts { dir, inputs: BTreeMap::new(), outputs: Vec::new() })
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    pub fn read_input(&mut self, path: &Path) -> Result<Vec<u8>> {
        let bytes = std::fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
        self.inputs.insert(path.display().to_string(), sha256_hex(&bytes));
        Ok(bytes)
    }

    pub fn read_input_string(&mut self, path: &Path) -> Result<String> {
        String::from_utf8(self.read_input(path)?).with_context(|| format!("{} is not UTF-8", path.display()))
    }

    /// Records an input the command reads through some other API.
    pub fn note_input(&mut self, path: &Path) -> Result<()> {
        self.read_input(path).map(|_| ())
    }

    pub fn write(&mut self, name: &str, bytes: &[u8], replayable: bool) -> Result<()> {
        if let Some(d) = &self.dir {
            let p = d.join(name);
            std::fs::write(&p, bytes).with_context(|| format!("cannot write {}", p.display()))?;
        }
        self.outputs.push(OutputFile { name: name.into(), sha256: sha256_hex(bytes), replayable });
        Ok(())
    }

    pub fn write_json(&mut self, name: &str, value: &impl Serialize) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, text.as_bytes(), true)
    }

    pub fn write_jsonl<T: Serialize>(&mut self, name: &str, rows: impl IntoIterator<Item = T>) -> Result<()> {
        let mut text = String::new();
        for r in rows {
            text.push_str(&serde_json::to_string(&r)?);
            text.push('\n');
        }
        self.write(name, text.as_bytes(), true)
    }

    /// A file a library call already wrote into the output directory.
    pub fn adopt(&mut self, name: &str, replayable: bool) -> Result<()> {
        if let Some(d) = &self.dir {
            let bytes = std::fs::read(d.join(name))?;
            self.outputs.push(OutputFile { name: name.into(), sha256: sha256_hex(&bytes), replayable });
        }
        Ok(())
    }

    pub fn finish(self, command: &Command, seed: Option<u64>, config: &SidecarConfig) -> Result<RunRecord> {
        let record = RunRecord {
            tool: "webcoach".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.clone(),
            seed,
            config: config.clone(),
            templates: Templates::current(),
            inputs: self.inputs,
            outputs: self.outputs,
        };
        if let Some(d) = &self.dir {
            let mut text = serde_json::to_string_pretty(&record)?;
            text.push('\n');
            std::fs::write(d.join(RUN_FILE), text)?;
        }
        Ok(record)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_reach_nested_keys() {
        let cfg = SidecarConfig::default();
        let cfg = apply_override(&cfg, "k=3").unwrap();
        let cfg = apply_override(&cfg, "coach.failure_threshold=0.5").unwrap();
        let cfg = apply_override(&cfg, "memory_mode=frozen").unwrap();
        assert_eq!(cfg.k, 3);
        assert_eq!(cfg.coach.failure_threshold, 0.5);
        assert_eq!(cfg.memory_mode, MemoryMode::Frozen);
    }

    #[test]
    fn bad_overrides_are_rejected() {
        let cfg = SidecarConfig::default();
        assert!(apply_override(&cfg, "nope=1").is_err());
        assert!(apply_override(&cfg, "k").is_err());
        assert!(apply_override(&cfg, "k=zero").is_err());
        assert!(apply_override(&cfg, "k=0").is_err());
    }

    #[test]
    fn artifacts_hash_what_they_write() {
        let dir = tempfile::tempdir().unwrap();
        let mut a = Artifacts::new(Some(dir.path().join("o"))).unwrap();
        a.write("x.txt", b"abc", true).unwrap();
        let rec = a.finish(&crate::cli::Command::Report(Default::default()), None, &SidecarConfig::default()).unwrap();
        assert_eq!(rec.outputs[0].sha256, sha256_hex(b"abc"));
        assert!(dir.path().join("o").join(RUN_FILE).exists());
    }
}
