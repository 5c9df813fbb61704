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

#![allow(dead_code)]

pub mod fuzz;
pub mod routing;

use proptest::prelude::*;
use webcoach_core::trajectory::{Action, Observation, StepRecord, TrajectoryLog, TrajectoryStatus};

pub const CAP: usize = 50;

const PAGES: [&str; 6] = [
    "Home | shop.test | welcome",
    "Search results | shop.test | 12 items",
    "Verify you are human | shop.test | please solve the captcha",
    "Gone | shop.test | HTTP 404 Not Found",
    "Dead end | shop.test | nothing here",
    "Cart | shop.test | 1 item",
];
const TARGETS: [&str; 5] = ["Next", "Search", "Cart", "Home", "Buy now"];

fn step_strategy() -> impl Strategy<Value = (usize, usize, usize, u64)> {
    (0..PAGES.len(), 0..3usize, 0..TARGETS.len(), 1..5_000u64)
}

/// Random logs: up to 60 steps, with or without a done flag and outcome.
pub fn arb_log() -> impl Strategy<Value = TrajectoryLog> {
    (prop::collection::vec(step_strategy(), 0..60), prop::option::of(any::<bool>()), any::<bool>(), "[a-z]{1,6}")
        .prop_map(|(steps, outcome, done, task)| build_log(&task, &steps, done, outcome))
}

pub fn build_log(task: &str, steps: &[(usize, usize, usize, u64)], done: bool, outcome: Option<bool>) -> TrajectoryLog {
    let mut log = TrajectoryLog::new(task, format!("Buy a lamp for {task}"), "shop.test", "test-model");
    let mut ts = 1_000u64;
    for (i, &(page, act, target, dt)) in steps.iter().take(CAP).enumerate() {
        ts += dt;
        let action = match act {
            0 => Action::new("click").with_arg("target", TARGETS[target]),
            1 => Action::new("type").with_arg("text", TARGETS[target]),
            _ => Action::new("scroll"),
        };
        log.steps.push(StepRecord {
            step_index: i,
            observation: Observation {
                text: PAGES[page].into(),
                screenshot: (i % 7 == 3).then(|| format!("shot-{i}.png")),
            },
            action,
            self_eval: if i % 2 == 0 { "on track".into() } else { "0.5".into() },
            timestamp_ms: ts,
            terminal: false,
        });
    }
    if done {
        if let Some(last) = log.steps.last_mut() {
            last.terminal = true;
        }
    }
    log.refresh_status(CAP);
    if log.status == TrajectoryStatus::Complete && log.steps.iter().any(|s| s.terminal) {
        log.declared_success = outcome;
    }
    log
}
