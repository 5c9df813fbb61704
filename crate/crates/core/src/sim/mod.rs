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

//! Closed-loop simulator: scripted agents on synthetic sites, optionally
//! coached through any [`CoachLink`].

mod agent;
mod site;

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use agent::{AdviceEffect, AgentSpec, ScriptedAgent};
pub use site::{generate_site, product_pages, task_for, Edge, Page, SimTask, SiteParams, SyntheticSite, TrapKind};

use crate::ems::MemoryRecord;
use crate::session::{OpenSession, Sidecar};
use crate::trajectory::{Observation, StepRecord, TrajectoryLog, TrajectoryStatus};

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("suite: {0}")]
    Suite(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkReply {
    /// Advice texts in delivery order.
    pub advice: Vec<String>,
    /// The sidecar closed the session on its own (step cap).
    pub closed: bool,
}

/// How an episode reaches a coach: in process or over the wire.
pub trait CoachLink: Send + Sync {
    fn open(&self, req: &OpenSession) -> Result<String, String>;
    /// Sends every step so far in the canonical line envelope.
    fn step(&self, session_id: &str, lines: &str) -> Result<LinkReply, String>;
    fn finalize(&self, session_id: &str, lines: &str) -> Result<(), String>;
}

impl CoachLink for Sidecar {
    fn open(&self, req: &OpenSession) -> Result<String, String> {
        self.open_session(req.clone()).map_err(|e| e.to_string())
    }

    fn step(&self, session_id: &str, lines: &str) -> Result<LinkReply, String> {
        let out = self.submit_step(session_id, lines.as_bytes()).map_err(|e| e.to_string())?;
        Ok(LinkReply {
            advice: out.advice.into_iter().map(|m| m.content).collect(),
            closed: out.auto_finalized.is_some(),
        })
    }

    fn finalize(&self, session_id: &str, lines: &str) -> Result<(), String> {
        self.finalize_session(session_id, lines.as_bytes()).map(|_| ()).map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub task_id: String,
    pub domain: String,
    pub agent: String,
    pub seed: u64,
    pub coached: bool,
    pub success: bool,
    pub steps: usize,
    pub advice_received: usize,
    pub advice_heeded: usize,
    pub trajectory: TrajectoryLog,
}

/// Runs one episode. With a link, every non-final step is submitted and the
/// returned advice is shown to the agent before its next action. A link
/// that fails is dropped with a warning and the episode goes on uncoached.
pub fn run_episode(
    site: &SyntheticSite,
    task: &SimTask,
    spec: &AgentSpec,
    seed: u64,
    hard_cap: usize,
    link: Option<&dyn CoachLink>,
) -> Result<EpisodeResult, SimError> {
    let mut agent = ScriptedAgent::new(spec, site, task, seed);
    let mut log = TrajectoryLog::new(&task.task_id, &task.goal, &task.domain, &spec.name);
    let mut session = link.and_then(|l| {
        let req = OpenSession {
            task_id: task.task_id.clone(),
            goal: task.goal.clone(),
            domain_root: task.domain.clone(),
            model_name: spec.name.clone(),
            adapter_id: None,
        };
        l.open(&req)
            .map_err(|e| tracing::warn!(task = %task.task_id, error = %e, "coach unreachable; running uncoached"))
            .ok()
    });
    let coached = session.is_some();
    let (mut received, mut heeded, mut closed, mut success) = (0, 0, false, false);
    for i in 0..hard_cap {
        let observation = site.observation(agent.page());
        let on_trap = site.pages[agent.page()].trap.is_some();
        let (action, done) = agent.next_action();
        log.steps.push(StepRecord {
            step_index: i,
            observation: Observation { text: observation, screenshot: None },
            action: action.clone(),
            self_eval: if done {
                "goal reached".into()
            } else if on_trap {
                "retrying".into()
            } else {
                "on track".into()
            },
            timestamp_ms: 1_700_000_000_000 + i as u64 * 1000,
            terminal: done,
        });
        agent.apply(&action);
        if done {
            success = true;
            log.declared_success = Some(true);
            break;
        }
        if let (Some(l), Some(id)) = (link, &session) {
            let reply = match l.step(id, &log.to_step_lines()) {
                Ok(r) => r,
                Err(e) => {
                    tracing::warn!(task = %task.task_id, error = %e, "coach lost; continuing uncoached");
                    session = None;
                    continue;
                }
            };
            received += reply.advice.len();
            for a in &reply.advice {
                if agent.heed(a) != AdviceEffect::Ignored {
                    heeded += 1;
                }
            }
            if reply.closed {
                closed = true;
                break;
            }
        }
    }
    log.refresh_status(hard_cap);
    if success {
        log.declared_success = Some(true);
    }
    debug_assert_eq!(log.status, TrajectoryStatus::Complete);
    if let (Some(l), Some(id)) = (link, &session) {
        if !closed {
            if let Err(e) = l.finalize(id, &log.to_step_lines()) {
                tracing::warn!(task = %task.task_id, error = %e, "finalize failed; episode not stored");
            }
        }
    }
    Ok(EpisodeResult {
        task_id: task.task_id.clone(),
        domain: task.domain.clone(),
        agent: spec.name.clone(),
        seed,
        coached,
        success,
        steps: log.steps.len(),
        advice_received: received,
        advice_heeded: heeded,
        trajectory: log,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuiteConfig {
    pub name: String,
    pub seed: u64,
    pub domains: usize,
    pub site: SiteParams,
    /// Tasks per domain that are run and scored.
    pub eval_tasks: usize,
    /// Further tasks per domain whose uncoached runs seed memory.
    pub memory_tasks: usize,
    pub agents: Vec<AgentSpec>,
    pub hard_cap: usize,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            name: "default".into(),
            seed: 0,
            domains: 4,
            site: SiteParams::default(),
            eval_tasks: 4,
            memory_tasks: 4,
            agents: vec![AgentSpec::uniform("scripted-agent", 0.5, 0.1)],
            hard_cap: crate::trajectory::DEFAULT_HARD_CAP,
        }
    }
}

impl SuiteConfig {
    /// Trap-heavy suite used to check that coaching pays off.
    pub fn calibration() -> Self {
        serde_json::from_str(CALIBRATION_SUITE).expect("bundled calibration suite parses")
    }

    pub fn from_file(path: &Path) -> Result<Self, SimError> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| SimError::Suite(format!("{}: {e}", path.display())))
    }

    pub fn build(&self) -> Result<Suite, SimError> {
        if self.domains == 0 || self.agents.is_empty() || self.hard_cap == 0 {
            return Err(SimError::Suite("need at least one domain, one agent and a positive hard_cap".into()));
        }
        let per_site = self.site.categories.max(1) * self.site.products_per_category.max(1);
        if self.eval_tasks + self.memory_tasks > per_site {
            return Err(SimError::Suite(format!(
                "{} tasks per domain requested but a site has only {per_site} products",
                self.eval_tasks + self.memory_tasks
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut suite = Suite { config: self.clone(), sites: Vec::new(), eval: Vec::new(), memory: Vec::new() };
        for d in 0..self.domains {
            let site = generate_site(d, &self.site, self.seed);
            site.validate().map_err(SimError::Suite)?;
            let mut products = product_pages(&site);
            products.shuffle(&mut rng);
            for (j, &p) in products.iter().take(self.eval_tasks).enumerate() {
                suite.eval.push((d, task_for(&site, p, format!("d{d:02}-t{j}"))));
            }
            for (j, &p) in products.iter().skip(self.eval_tasks).take(self.memory_tasks).enumerate() {
                suite.memory.push((d, task_for(&site, p, format!("d{d:02}-m{j}"))));
            }
            suite.sites.push(site);
        }
        Ok(suite)
    }
}

const CALIBRATION_SUITE: &str = include_str!("../../fixtures/calibration_suite.json");

#[derive(Debug, Clone)]
pub struct Suite {
    pub config: SuiteConfig,
    pub sites: Vec<SyntheticSite>,
    /// (site index, task) pairs that are scored.
    pub eval: Vec<(usize, SimTask)>,
    /// (site index, task) pairs used to build memory.
    pub memory: Vec<(usize, SimTask)>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub suite: String,
    pub coached: bool,
    pub episodes: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub mean_steps: f64,
    pub advice_received: usize,
}

impl BenchmarkReport {
    pub fn from_results(suite: &str, coached: bool, results: &[EpisodeResult]) -> Self {
        let n = results.len();
        let successes = results.iter().filter(|r| r.success).count();
        BenchmarkReport {
            suite: suite.into(),
            coached,
            episodes: n,
            successes,
            success_rate: if n == 0 { 0.0 } else { successes as f64 / n as f64 },
            mean_steps: if n == 0 { 0.0 } else { results.iter().map(|r| r.steps as f64).sum::<f64>() / n as f64 },
            advice_received: results.iter().map(|r| r.advice_received).sum(),
        }
    }
}

impl Suite {
    fn episode_seed(&self, agent: usize) -> u64 {
        self.config.seed.wrapping_add(agent as u64)
    }

    fn run_tasks(
        &self,
        tasks: &[(usize, SimTask)],
        link: Option<&dyn CoachLink>,
    ) -> Result<Vec<EpisodeResult>, SimError> {
        let mut out = Vec::with_capacity(tasks.len() * self.config.agents.len());
        for (a, spec) in self.config.agents.iter().enumerate() {
            for (d, task) in tasks {
                out.push(run_episode(&self.sites[*d], task, spec, self.episode_seed(a), self.config.hard_cap, link)?);
            }
        }
        Ok(out)
    }

    /// Runs every scored task with every agent, in a fixed order.
    pub fn run(&self, link: Option<&dyn CoachLink>) -> Result<Vec<EpisodeResult>, SimError> {
        self.run_tasks(&self.eval, link)
    }

    pub fn report(&self, link: Option<&dyn CoachLink>) -> Result<(BenchmarkReport, Vec<EpisodeResult>), SimError> {
        let results = self.run(link)?;
        Ok((BenchmarkReport::from_results(&self.config.name, link.is_some(), &results), results))
    }

    /// Uncoached runs of the memory tasks, condensed into records.
    pub fn memory_records(&self, sidecar: &Sidecar) -> Result<Vec<MemoryRecord>, SimError> {
        let mut records = Vec::new();
        for r in self.run_tasks(&self.memory, None)? {
            let id = format!("mem-{}-{}", r.task_id, r.agent);
            let c =
                sidecar.condenser().condense(&r.trajectory, Some(&id)).map_err(|e| SimError::Suite(e.to_string()))?;
            records.push(MemoryRecord::from_condensed(&c));
        }
        Ok(records)
    }

    /// Seeds `sidecar` with [`Suite::memory_records`]; returns how many
    /// records went in.
    pub fn seed_memory(&self, sidecar: &Sidecar) -> Result<usize, SimError> {
        let report = sidecar.seed(self.memory_records(sidecar)?);
        if let Some((i, e)) = report.errors.first() {
            return Err(SimError::Suite(format!("memory record {i}: {e}")));
        }
        Ok(report.inserted)
    }
}
