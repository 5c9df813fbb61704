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

//! Rule-based coach.
//!
//! Checked in order, first match wins:
//!
//! 1. the current trace hit a hazard and a retrieved failure scoring at
//!    least `failure_threshold` shares that fail mode: repeat the past
//!    failure's description, which names the element to avoid;
//! 2. the current summary mentions a hazard token backed by a detected
//!    fail mode: generic back-off advice, no citation;
//! 3. a retrieved success scoring at least `success_threshold` finished in
//!    fewer steps than the current trace has taken: point at its workflow.
//!
//! Otherwise the coach stays silent.

use super::{CoachBackend, CoachDecision, CoachInput, CoachPolicy, CoachPrompt, MAX_ADVICE_SENTENCES};
use crate::condenser::BackendError;
use crate::hazard::{hazards_in_text, Hazard};
use crate::text::truncate_sentences;

#[derive(Debug, Clone, Default)]
pub struct StubCoach {
    policy: CoachPolicy,
}

impl StubCoach {
    pub fn new(policy: CoachPolicy) -> Self {
        StubCoach { policy }
    }

    pub fn policy(&self) -> CoachPolicy {
        self.policy
    }

    pub fn decide_input(&self, input: &CoachInput) -> CoachDecision {
        let current = &input.current;
        let summary_hazards = hazards_in_text(&current.summary_text);
        let live: Vec<Hazard> = current.evidence.iter().filter_map(|e| Hazard::from_fail_mode_name(&e.name)).collect();

        for name in current.evidence.iter().map(|e| e.name.as_str()) {
            let matched = input.retrieved.iter().find_map(|h| {
                if h.score < self.policy.failure_threshold || h.record.meta.final_success != Some(false) {
                    return None;
                }
                h.record.evidence.iter().find(|e| e.name.eq_ignore_ascii_case(name)).map(|e| (h, e))
            });
            if let Some((hit, past)) = matched {
                let advice = format!(
                    "Avoid repeating a past failure ({}): {} Go back and pick a different element.",
                    past.name,
                    ensure_period(&truncate_sentences(&past.description, 1)),
                );
                return CoachDecision {
                    intervene: true,
                    advice: Some(truncate_sentences(&advice, MAX_ADVICE_SENTENCES)),
                    cited_episode_ids: vec![hit.record.meta.episode_id.clone()],
                    rationale: Some(format!(
                        "current trace shows '{}' and episode {} failed the same way (score {:.4})",
                        name, hit.record.meta.episode_id, hit.score
                    )),
                };
            }
        }

        if let Some(h) = summary_hazards.iter().find(|h| live.contains(h)) {
            return CoachDecision {
                intervene: true,
                advice: Some(format!(
                    "You appear to be stuck in a {}. Step back and try a different approach.",
                    h.phrase()
                )),
                cited_episode_ids: Vec::new(),
                rationale: Some(format!("hazard '{}' detected in the current trace", h.token())),
            };
        }

        let steps = input.step_count();
        let shortcut = input.retrieved.iter().find(|h| {
            h.score >= self.policy.success_threshold
                && h.record.meta.final_success == Some(true)
                && h.record.meta.total_steps < steps
        });
        if let Some(hit) = shortcut {
            let how = hit
                .record
                .evidence
                .first()
                .map(|e| ensure_period(&truncate_sentences(&e.description, 1)))
                .unwrap_or_else(|| "Follow the route it took.".into());
            let advice = format!("A similar task was solved before in {} steps. {}", hit.record.meta.total_steps, how);
            return CoachDecision {
                intervene: true,
                advice: Some(truncate_sentences(&advice, MAX_ADVICE_SENTENCES)),
                cited_episode_ids: vec![hit.record.meta.episode_id.clone()],
                rationale: Some(format!(
                    "episode {} succeeded in {} steps; current trace is at {steps}",
                    hit.record.meta.episode_id, hit.record.meta.total_steps
                )),
            };
        }
        CoachDecision::silent()
    }
}

fn ensure_period(s: &str) -> String {
    let t = s.trim();
    if t.is_empty() || t.ends_with(['.', '!', '?']) {
        t.to_string()
    } else {
        format!("{t}.")
    }
}

impl CoachBackend for StubCoach {
    fn name(&self) -> &str {
        "stub-coach"
    }

    fn decide_raw(&self, prompt: &CoachPrompt<'_>) -> Result<String, BackendError> {
        Ok(self.decide_input(prompt.input).to_json())
    }

    fn deterministic(&self) -> bool {
        true
    }
}
