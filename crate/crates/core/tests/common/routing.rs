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

//! Randomized submit/finalize interleavings against one sidecar.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use webcoach_core::config::{MemoryMode, SidecarConfig};
use webcoach_core::session::{OpenSession, Sidecar, SidecarError};
use webcoach_core::trajectory::{detect_completeness, TrajectoryStatus};

use super::build_log;

pub const STREAM_CAP: usize = 8;

#[derive(Debug)]
enum Op {
    Step {
        ep: usize,
        upto: usize,
    },
    Finalize {
        ep: usize,
    },
    /// Finalize while the trace is still partial.
    EarlyFinalize {
        ep: usize,
        upto: usize,
    },
}

/// Runs one generated stream; returns a description of the first broken
/// expectation, if any.
pub fn run_stream(seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = SidecarConfig {
        memory_mode: MemoryMode::Dynamic,
        hard_cap: STREAM_CAP,
        embedding_dim: 32,
        exact_search: true,
        ..Default::default()
    };
    let sc = Sidecar::with_stubs(cfg).map_err(|e| e.to_string())?;
    let n = rng.random_range(1..=5);
    let mut logs = Vec::new();
    let mut sessions = Vec::new();
    let mut per_ep: Vec<Vec<Op>> = Vec::new();
    for ep in 0..n {
        let len = rng.random_range(1..=STREAM_CAP + 2);
        let finish = rng.random_bool(0.6);
        let steps: Vec<(usize, usize, usize, u64)> =
            (0..len).map(|_| (rng.random_range(0..6), rng.random_range(0..3), rng.random_range(0..5), 10)).collect();
        let outcome = if rng.random_bool(0.8) { Some(rng.random_bool(0.5)) } else { None };
        let task = format!("task{}", rng.random_range(0..3));
        logs.push((task.clone(), steps, finish, outcome));
        let id = sc
            .open_session(OpenSession {
                task_id: task,
                goal: "g".into(),
                domain_root: "shop.test".into(),
                ..OpenSession::default_for("")
            })
            .map_err(|e| e.to_string())?;
        sessions.push(id);
        let mut ops: Vec<Op> = (1..len).map(|upto| Op::Step { ep, upto }).collect();
        if rng.random_bool(0.2) && len > 1 {
            ops.insert(rng.random_range(0..ops.len()), Op::EarlyFinalize { ep, upto: 1 });
        }
        if finish {
            ops.push(Op::Finalize { ep });
        }
        per_ep.push(ops);
    }
    // Interleave while keeping each episode's own order.
    let mut order: Vec<usize> = per_ep.iter().enumerate().flat_map(|(i, o)| std::iter::repeat_n(i, o.len())).collect();
    order.shuffle(&mut rng);
    let mut cursors = vec![0usize; n];
    let mut expected = BTreeSet::new();
    let mut closed = vec![false; n];
    for ep in order {
        let op = &per_ep[ep][cursors[ep]];
        cursors[ep] += 1;
        let (task, steps, _, outcome) = &logs[ep];
        let sid = &sessions[ep];
        match op {
            Op::Step { upto, .. } | Op::EarlyFinalize { upto, .. } => {
                let partial = build_log(task, &steps[..*upto], false, None);
                let lines = partial.to_step_lines();
                let res = if matches!(op, Op::Step { .. }) {
                    sc.submit_step(sid, lines.as_bytes()).map(|o| o.auto_finalized.is_some())
                } else {
                    sc.finalize_session(sid, lines.as_bytes()).map(|_| true)
                };
                let complete = detect_completeness(&partial, STREAM_CAP) == TrajectoryStatus::Complete;
                match (res, closed[ep], complete) {
                    (Ok(true), false, true) => {
                        closed[ep] = true;
                        expected.insert(format!("ep-{sid}"));
                    }
                    (Ok(false), false, false) => {}
                    (Err(SidecarError::Finalized(_)), true, _) => {}
                    (Err(SidecarError::RoutingViolation(_)), false, false)
                        if matches!(op, Op::EarlyFinalize { .. }) => {}
                    (r, c, complete) => return Err(format!("{op:?}: got {r:?} (closed {c}, complete {complete})")),
                }
            }
            Op::Finalize { .. } => {
                let full = build_log(task, steps, true, *outcome);
                match (sc.finalize_session(sid, full.to_step_lines().as_bytes()), closed[ep]) {
                    (Ok(f), false) => {
                        if !f.persisted || f.final_success.is_none() {
                            return Err(format!("finalize did not persist: {f:?}"));
                        }
                        closed[ep] = true;
                        expected.insert(f.episode_id);
                    }
                    (Err(SidecarError::Finalized(_)), true) => {}
                    (r, c) => return Err(format!("finalize: got {r:?} (closed {c})")),
                }
            }
        }
    }
    let store = sc.store().read();
    let stored: BTreeSet<String> = store.records().map(|r| r.meta.episode_id.clone()).collect();
    if stored != expected {
        return Err(format!("stored {stored:?} but finalized {expected:?}"));
    }
    if let Some(r) = store.records().find(|r| r.meta.final_success.is_none()) {
        return Err(format!("partial record {} in store", r.meta.episode_id));
    }
    Ok(())
}
