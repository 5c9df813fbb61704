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

mod common;

use std::sync::Arc;
use std::time::Duration;

use common::fake_agent::{FakeAgent, HookBinding, Hooks, Message};
use common::{config, dead_url, Running};
use webcoach_core::coach::{Coach, CoachBackend, CoachPrompt};
use webcoach_core::condenser::{BackendError, Condenser};
use webcoach_core::config::MemoryMode;
use webcoach_core::ems::{IndexConfig, MemoryStore};
use webcoach_core::session::Sidecar;
use webcoach_sidecar::SidecarClient;

const ADVICE: &str = "Stop clicking 'Deals'. Open the Kettles category instead.";

/// Speaks only after the second step.
struct SecondStepCoach;

impl CoachBackend for SecondStepCoach {
    fn name(&self) -> &str {
        "second-step"
    }

    fn decide_raw(&self, prompt: &CoachPrompt<'_>) -> Result<String, BackendError> {
        if prompt.input.step_count() == 2 {
            Ok(serde_json::json!({"intervene": true, "advice": ADVICE}).to_string())
        } else {
            Ok(r#"{"intervene": false}"#.into())
        }
    }

    fn deterministic(&self) -> bool {
        true
    }
}

struct SilentCoach;

impl CoachBackend for SilentCoach {
    fn name(&self) -> &str {
        "silent"
    }

    fn decide_raw(&self, _: &CoachPrompt<'_>) -> Result<String, BackendError> {
        Ok(r#"{"intervene": false}"#.into())
    }

    fn deterministic(&self) -> bool {
        true
    }
}

fn sidecar_with(coach: Arc<dyn CoachBackend>) -> Sidecar {
    let cfg = config(MemoryMode::Dynamic);
    let store = MemoryStore::new(cfg.embedding_dim, IndexConfig::default());
    Sidecar::new(cfg.clone(), Condenser::stub(cfg.embedding_dim), Coach::new(coach), store).unwrap()
}

fn client(url: &str) -> SidecarClient {
    SidecarClient::new(url, Duration::from_secs(5))
}

#[test]
fn advice_on_step_two_lands_before_step_three() {
    let srv = Running::start(sidecar_with(Arc::new(SecondStepCoach)));
    let agent = FakeAgent::looping("T-hook", 3, true);
    let mut hook = HookBinding::attach(client(&srv.url()), &agent);
    assert!(!hook.degraded());
    let history = agent.run(Some(&mut hook as &mut dyn Hooks));

    let system: Vec<(usize, &Message)> =
        history.iter().enumerate().skip(1).filter(|(_, m)| m.role == "system").collect();
    assert_eq!(system.len(), 1, "{history:#?}");
    let (pos, msg) = system[0];
    assert_eq!(msg.content, ADVICE);
    assert_eq!(history[pos - 1].content, "click 'Home'", "after the step-2 action");
    assert_eq!(history[pos + 1].role, "assistant", "before the step-3 action");
    assert_eq!(pos + 2, history.len());
    assert_eq!((hook.finalized, hook.errors), (1, 0));
    assert_eq!(srv.sidecar.store_len(), 1);
}

#[test]
fn silent_coach_leaves_history_untouched() {
    let srv = Running::start(sidecar_with(Arc::new(SilentCoach)));
    let agent = FakeAgent::looping("T-quiet", 6, false);
    let plain = agent.run(None);
    let mut hook = HookBinding::attach(client(&srv.url()), &agent);
    let hooked = agent.run(Some(&mut hook as &mut dyn Hooks));
    assert_eq!(plain, hooked);
    assert_eq!(hook.finalized, 1);
    assert_eq!(srv.sidecar.store_len(), 1);
}

#[test]
fn finalize_is_sent_at_most_once() {
    let srv = Running::start(sidecar_with(Arc::new(SilentCoach)));
    let agent = FakeAgent::looping("T-once", 3, true);
    let mut hook = HookBinding::attach(client(&srv.url()), &agent);
    agent.run(Some(&mut hook as &mut dyn Hooks));
    agent.run(Some(&mut hook as &mut dyn Hooks));
    assert_eq!((hook.finalized, hook.errors), (1, 0));
    assert_eq!(srv.sidecar.stats().finalized, 1);
}

#[test]
fn sidecar_down_for_the_whole_run() {
    let agent = FakeAgent::looping("T-down", 6, false);
    let plain = agent.run(None);
    let mut hook = HookBinding::attach(client(&dead_url()), &agent);
    assert!(hook.degraded());
    assert_eq!(agent.run(Some(&mut hook as &mut dyn Hooks)), plain);
}

#[test]
fn sidecar_lost_mid_run_degrades_to_no_advice() {
    let srv = Running::start(sidecar_with(Arc::new(SecondStepCoach)));
    let agent = FakeAgent::looping("T-lost", 5, true);
    let mut hook = HookBinding::attach(client(&srv.url()), &agent);
    srv.shutdown().unwrap();
    let hooked = agent.run(Some(&mut hook as &mut dyn Hooks));
    assert_eq!(hooked, agent.run(None));
    assert_eq!(hook.finalized, 0);
    assert!(hook.errors > 0);
}
