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

//! Adversarial backend replies for robustness tests.

use parking_lot::Mutex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use webcoach_core::coach::{CoachBackend, CoachPrompt};
use webcoach_core::condenser::{BackendError, SummarizerBackend, SummaryPrompt};

const SENTENCES: [&str; 6] = [
    "The agent opened the site.",
    "It searched for the item!",
    "Was the price shown?",
    "It hit a captcha gate.",
    "Go back and pick a different element.",
    "Dr. Smith's page loaded at 3.5 s.",
];
const JUNK: [&str; 9] = [
    "",
    "I cannot help with that.",
    "{",
    "}{",
    "```json\n{\"intervene\": tru}\n```",
    "null",
    "[1, 2, 3]",
    "{\"summary_text\": 42}",
    "\u{0}\u{ffff}{\"a\":\"\\ud800\"}",
];

fn sentences(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> String {
    let n = rng.random_range(lo..=hi);
    (0..n).map(|_| SENTENCES[rng.random_range(0..SENTENCES.len())]).collect::<Vec<_>>().join(" ")
}

fn evidence(rng: &mut ChaCha8Rng) -> Value {
    let n = rng.random_range(0..4);
    Value::Array(
        (0..n)
            .map(|i| match rng.random_range(0..20) {
                0 => json!({"name": "", "description": "blank"}),
                1 => json!({"description": "no name"}),
                2 => json!("just a string"),
                _ => json!({"name": format!("Item {i}"), "description": sentences(rng, 1, 2)}),
            })
            .collect(),
    )
}

fn wrap(rng: &mut ChaCha8Rng, v: &Value) -> String {
    let body = if rng.random_bool(0.5) { v.to_string() } else { serde_json::to_string_pretty(v).unwrap() };
    let mut s = match rng.random_range(0..6) {
        0 => format!("Here is the JSON:\n```json\n{body}\n```"),
        1 => format!("{body}\nHope this helps."),
        _ => body,
    };
    if rng.random_bool(0.05) {
        let mut cut = rng.random_range(0..=s.len());
        while !s.is_char_boundary(cut) {
            cut -= 1;
        }
        s.truncate(cut);
    }
    s
}

pub fn summary_reply(rng: &mut ChaCha8Rng) -> String {
    if rng.random_bool(0.15) {
        return JUNK[rng.random_range(0..JUNK.len())].to_string();
    }
    let text = if rng.random_bool(0.7) { sentences(rng, 3, 5) } else { sentences(rng, 0, 7) };
    let mut v = json!({"summary_text": text});
    match rng.random_range(0..4) {
        0 => v["final_success"] = json!(true),
        1 => v["final_success"] = json!(false),
        2 => v["final_success"] = Value::Null,
        _ => {}
    }
    match rng.random_range(0..10) {
        0..=3 => v["fail_modes"] = evidence(rng),
        4..=7 => v["success_workflows"] = evidence(rng),
        8 => {
            v["fail_modes"] = evidence(rng);
            v["success_workflows"] = evidence(rng);
        }
        _ => v["fail_modes"] = json!("oops"),
    }
    if rng.random_bool(0.1) {
        v["extra"] = json!({"nested": [1, null]});
    }
    wrap(rng, &v)
}

pub fn coach_reply(rng: &mut ChaCha8Rng, known_ids: &[String]) -> String {
    if rng.random_bool(0.15) {
        return JUNK[rng.random_range(0..JUNK.len())].to_string();
    }
    let mut v = json!({});
    match rng.random_range(0..5) {
        0 => v["intervene"] = json!(false),
        1 | 2 => v["intervene"] = json!(true),
        3 => v["intervene"] = json!("yes"),
        _ => {}
    }
    if rng.random_bool(0.7) {
        v["advice"] = if rng.random_bool(0.1) { Value::Null } else { json!(sentences(rng, 0, 6)) };
    }
    if rng.random_bool(0.7) {
        let n = rng.random_range(0..4);
        let ids: Vec<Value> = (0..n)
            .map(|_| {
                if !known_ids.is_empty() && rng.random_bool(0.6) {
                    json!(known_ids[rng.random_range(0..known_ids.len())])
                } else if rng.random_bool(0.2) {
                    json!(7)
                } else {
                    json!(format!("ep-unknown-{}", rng.random_range(0..100)))
                }
            })
            .collect();
        v["cited_episode_ids"] = Value::Array(ids);
    }
    if rng.random_bool(0.3) {
        v["rationale"] = json!(sentences(rng, 0, 3));
    }
    wrap(rng, &v)
}

pub struct FuzzSummarizer(pub Mutex<ChaCha8Rng>);

impl FuzzSummarizer {
    pub fn new(seed: u64) -> Self {
        FuzzSummarizer(Mutex::new(ChaCha8Rng::seed_from_u64(seed)))
    }
}

impl SummarizerBackend for FuzzSummarizer {
    fn name(&self) -> &str {
        "fuzz-summarizer"
    }
    fn generate(&self, _: &SummaryPrompt<'_>) -> Result<String, BackendError> {
        Ok(summary_reply(&mut self.0.lock()))
    }
    fn deterministic(&self) -> bool {
        false
    }
}

pub struct FuzzCoach(pub Mutex<ChaCha8Rng>);

impl FuzzCoach {
    pub fn new(seed: u64) -> Self {
        FuzzCoach(Mutex::new(ChaCha8Rng::seed_from_u64(seed)))
    }
}

impl CoachBackend for FuzzCoach {
    fn name(&self) -> &str {
        "fuzz-coach"
    }
    fn decide_raw(&self, prompt: &CoachPrompt<'_>) -> Result<String, BackendError> {
        let ids: Vec<String> = prompt.input.retrieved.iter().map(|h| h.record.meta.episode_id.clone()).collect();
        let mut rng = self.0.lock();
        if rng.random_bool(0.03) {
            return Err(BackendError::Transport("connection reset".into()));
        }
        Ok(coach_reply(&mut rng, &ids))
    }
    fn deterministic(&self) -> bool {
        false
    }
}
