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

//! A scripted agent framework with step and completion callbacks and a
//! mutable message history, plus the hook binding that ties it to a
//! sidecar.

use webcoach_core::session::OpenSession;
use webcoach_core::trajectory::{Action, Observation, StepRecord, TrajectoryLog};
use webcoach_sidecar::SidecarClient;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub role: String,
    pub content: String,
}

impl Message {
    fn new(role: &str, content: impl Into<String>) -> Self {
        Message { role: role.into(), content: content.into() }
    }
}

pub trait Hooks {
    /// Called after each non-final step; returns advice to splice in.
    fn on_step(&mut self, log: &TrajectoryLog) -> Vec<String>;
    fn on_complete(&mut self, log: &TrajectoryLog);
}

#[derive(Debug, Clone)]
pub struct FakeAgent {
    pub task_id: String,
    pub goal: String,
    pub domain: String,
    /// (page text, link clicked) per step; the last step ends the run.
    pub script: Vec<(String, String)>,
    pub success: bool,
}

impl FakeAgent {
    pub fn looping(task_id: &str, steps: usize, success: bool) -> Self {
        let script = (0..steps)
            .map(|i| {
                if i % 2 == 0 {
                    ("Home | shop".to_string(), "Deals".to_string())
                } else {
                    ("Deals | shop".to_string(), "Home".to_string())
                }
            })
            .collect();
        FakeAgent {
            task_id: task_id.into(),
            goal: "Find the price of the red kettle".into(),
            domain: "shop.test".into(),
            script,
            success,
        }
    }

    pub fn open_request(&self) -> OpenSession {
        OpenSession {
            task_id: self.task_id.clone(),
            goal: self.goal.clone(),
            domain_root: self.domain.clone(),
            model_name: "fake-agent".into(),
            adapter_id: None,
        }
    }

    /// Runs the script and returns the final message history.
    pub fn run(&self, mut hooks: Option<&mut dyn Hooks>) -> Vec<Message> {
        let mut history =
            vec![Message::new("system", "You are a web navigation agent."), Message::new("user", self.goal.clone())];
        let mut log = TrajectoryLog::new(&self.task_id, &self.goal, &self.domain, "fake-agent");
        let n = self.script.len();
        for (i, (page, target)) in self.script.iter().enumerate() {
            let last = i + 1 == n;
            history.push(Message::new("assistant", format!("click '{target}'")));
            log.steps.push(StepRecord {
                step_index: i,
                observation: Observation { text: page.clone(), screenshot: None },
                action: if last {
                    Action::new("done")
                } else {
                    Action::new("click").with_arg("target", target.clone())
                },
                self_eval: String::new(),
                timestamp_ms: 1_700_000_000_000 + i as u64 * 1000,
                terminal: last,
            });
            if last {
                log.declared_success = Some(self.success);
                if let Some(h) = hooks.as_deref_mut() {
                    h.on_complete(&log);
                }
            } else if let Some(h) = hooks.as_deref_mut() {
                for advice in h.on_step(&log) {
                    history.push(Message::new("system", advice));
                }
            }
        }
        history
    }
}

/// Hook binding: forwards steps, splices advice, finalizes at most once.
/// Any sidecar failure degrades to no advice.
pub struct HookBinding {
    client: SidecarClient,
    session: Option<String>,
    pub finalized: usize,
    pub errors: usize,
}

impl HookBinding {
    pub fn attach(client: SidecarClient, agent: &FakeAgent) -> Self {
        let session = client.open(&agent.open_request()).ok();
        HookBinding { client, session, finalized: 0, errors: 0 }
    }

    pub fn degraded(&self) -> bool {
        self.session.is_none()
    }

    pub fn session(&self) -> Option<&str> {
        self.session.as_deref()
    }
}

impl Hooks for HookBinding {
    fn on_step(&mut self, log: &TrajectoryLog) -> Vec<String> {
        let Some(id) = &self.session else { return Vec::new() };
        match self.client.submit_step(id, log.to_step_lines().as_bytes()) {
            Ok(out) => out.advice.into_iter().map(|m| m.content).collect(),
            Err(_) => {
                self.errors += 1;
                Vec::new()
            }
        }
    }

    fn on_complete(&mut self, log: &TrajectoryLog) {
        let Some(id) = self.session.take() else { return };
        match self.client.finalize(&id, log.to_step_lines().as_bytes()) {
            Ok(_) => self.finalized += 1,
            Err(_) => self.errors += 1,
        }
    }
}
