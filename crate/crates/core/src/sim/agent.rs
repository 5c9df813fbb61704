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

//! Scripted actor. Its choices depend only on its seed, the task and the
//! page, so runs replay exactly.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::site::{SimTask, SyntheticSite, TrapKind};
use crate::hazard::hazards_in_text;
use crate::trajectory::Action;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentSpec {
    pub name: String,
    /// Chance of being lured by a trap link of each kind on first sight.
    pub susceptibility: BTreeMap<TrapKind, f64>,
    /// Chance of first trying a wrong category on a page.
    pub noise: f64,
}

impl Default for AgentSpec {
    fn default() -> Self {
        AgentSpec { name: "scripted-agent".into(), susceptibility: BTreeMap::new(), noise: 0.0 }
    }
}

impl AgentSpec {
    pub fn uniform(name: &str, p: f64, noise: f64) -> Self {
        AgentSpec { name: name.into(), susceptibility: TrapKind::ALL.into_iter().map(|k| (k, p)).collect(), noise }
    }

    fn lure(&self, kind: TrapKind) -> f64 {
        self.susceptibility.get(&kind).copied().unwrap_or(0.0)
    }
}

/// What the agent made of one advice message.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AdviceEffect {
    Ignored,
    /// The named link will never be clicked again.
    Pruned(String),
    /// No element named; the agent only leaves the trap page.
    BackedOff,
}

#[derive(Debug, Clone)]
pub struct ScriptedAgent<'a> {
    spec: &'a AgentSpec,
    site: &'a SyntheticSite,
    task: &'a SimTask,
    seed: u64,
    page: usize,
    history: Vec<usize>,
    pruned: BTreeSet<String>,
    /// Ordered edge indices the agent intends to try on each page.
    plans: BTreeMap<usize, Vec<usize>>,
    back_requested: bool,
}

impl<'a> ScriptedAgent<'a> {
    pub fn new(spec: &'a AgentSpec, site: &'a SyntheticSite, task: &'a SimTask, seed: u64) -> Self {
        ScriptedAgent {
            spec,
            site,
            task,
            seed,
            page: site.start,
            history: Vec::new(),
            pruned: BTreeSet::new(),
            plans: BTreeMap::new(),
            back_requested: false,
        }
    }

    pub fn page(&self) -> usize {
        self.page
    }

    pub fn pruned(&self) -> &BTreeSet<String> {
        &self.pruned
    }

    fn rng_for(&self, page: usize) -> ChaCha8Rng {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(self.task.task_id.as_bytes());
        h.update(self.spec.name.as_bytes());
        h.update((page as u64).to_le_bytes());
        let d = h.finalize();
        ChaCha8Rng::seed_from_u64(u64::from_le_bytes(d[..8].try_into().expect("8 bytes")))
    }

    fn plan(&mut self, page: usize) -> &mut Vec<usize> {
        if !self.plans.contains_key(&page) {
            let mut rng = self.rng_for(page);
            let edges: Vec<(usize, &super::site::Edge)> =
                self.site.edges.iter().enumerate().filter(|(_, e)| e.from == page).collect();
            let mut plan = Vec::new();
            for (i, e) in &edges {
                if let Some(kind) = e.trap {
                    if rng.random::<f64>() < self.spec.lure(kind) {
                        plan.push(*i);
                    }
                }
            }
            let next = self.site.safe_path(page, self.task.goal_page).and_then(|p| p.get(1).copied());
            let wrong: Vec<usize> = edges
                .iter()
                .filter(|(_, e)| e.trap.is_none() && Some(e.to) != next && e.label != "Home")
                .map(|(i, _)| *i)
                .collect();
            if !wrong.is_empty() && rng.random::<f64>() < self.spec.noise {
                plan.push(wrong[rng.random_range(0..wrong.len())]);
            }
            if let Some(n) = next {
                if let Some((i, _)) = edges.iter().find(|(_, e)| e.to == n && e.trap.is_none()) {
                    plan.push(*i);
                }
            }
            self.plans.insert(page, plan);
        }
        self.plans.get_mut(&page).expect("plan just inserted")
    }

    /// Picks the next action and whether it ends the episode.
    pub fn next_action(&mut self) -> (Action, bool) {
        let page = self.page;
        if self.back_requested && !self.history.is_empty() {
            self.back_requested = false;
            return (Action::new("go_back"), false);
        }
        self.back_requested = false;
        if page == self.task.goal_page {
            return (Action::new("done"), true);
        }
        if let Some(kind) = self.site.pages[page].trap {
            let a = match kind {
                TrapKind::CaptchaGate => Action::new("click").with_arg("target", "Try again"),
                other => Action::new(other.stuck_action()),
            };
            return (a, false);
        }
        let pruned = self.pruned.clone();
        let site = self.site;
        let plan = self.plan(page);
        let pick = plan.iter().position(|&i| !pruned.contains(&site.edges[i].label.to_ascii_lowercase()));
        match pick {
            Some(pos) => {
                let i = plan[pos];
                let e = &site.edges[i];
                // A wrong guess is not repeated; a lure is a habit.
                if e.trap.is_none() && pos + 1 < plan.len() {
                    plan.remove(pos);
                }
                (Action::new("click").with_arg("target", e.label.clone()), false)
            }
            None if !self.history.is_empty() => (Action::new("go_back"), false),
            None => (Action::new("wait"), false),
        }
    }

    /// Moves through the site according to `action`.
    pub fn apply(&mut self, action: &Action) {
        match action.name.as_str() {
            "go_back" => {
                if let Some(p) = self.history.pop() {
                    self.page = p;
                }
            }
            "click" => {
                let target = action.target().unwrap_or_default();
                if let Some(e) = self.site.out_edges(self.page).find(|e| e.label == target) {
                    if e.to != self.page {
                        self.history.push(self.page);
                        self.page = e.to;
                    }
                }
            }
            _ => {}
        }
    }

    /// Reacts to one advice message. Only advice naming a hazard is acted
    /// on. A quoted element after "clicking" is pruned for good; without
    /// one the agent just backs out of a trap page and keeps its habits.
    pub fn heed(&mut self, advice: &str) -> AdviceEffect {
        if hazards_in_text(advice).is_empty() {
            return AdviceEffect::Ignored;
        }
        let on_trap = self.site.pages[self.page].trap.is_some();
        if on_trap {
            self.back_requested = true;
        }
        match quoted_after(advice, "clicking '") {
            Some(label) => {
                let label = label.to_ascii_lowercase();
                self.pruned.insert(label.clone());
                AdviceEffect::Pruned(label)
            }
            None if on_trap => AdviceEffect::BackedOff,
            None => AdviceEffect::Ignored,
        }
    }
}

fn quoted_after<'t>(text: &'t str, marker: &str) -> Option<&'t str> {
    let lower = text.to_ascii_lowercase();
    let start = lower.find(marker)? + marker.len();
    let len = text[start..].find('\'')?;
    Some(&text[start..start + len]).filter(|s| !s.is_empty())
}
