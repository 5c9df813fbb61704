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

//! Rule-based summarizer and feature-hashing embedder. Both are
//! deterministic so the whole pipeline runs and replays without a model.

use std::collections::BTreeMap;

use serde_json::json;
use sha2::{Digest, Sha256};

use super::backend::{BackendError, EmbedderBackend, SummarizerBackend, SummaryPrompt};
use super::Evidence;
use crate::hazard::{hazards_in_text, Hazard};
use crate::text::{fragment, page_label};
use crate::trajectory::{Action, TrajectoryLog};

/// Repeats of the same (action, target) pair that count as a loop.
pub const LOOP_REPEATS: usize = 3;

/// A hazard observed in a trajectory together with the step that led into it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HazardPattern {
    pub hazard: Hazard,
    pub step: usize,
    pub evidence: Evidence,
}

/// Scans a trajectory for hazards. Observation hazards (CAPTCHA, dead end,
/// HTTP 4xx) come first in step order, followed by at most one loop.
pub fn detect_patterns(log: &TrajectoryLog) -> Vec<HazardPattern> {
    let mut out: Vec<HazardPattern> = Vec::new();
    for (i, step) in log.steps.iter().enumerate() {
        for hazard in hazards_in_text(&step.observation.text) {
            if hazard == Hazard::Loop || out.iter().any(|p| p.hazard == hazard) {
                continue;
            }
            let page = page_label(&step.observation.text);
            let description = match i.checked_sub(1).map(|p| &log.steps[p]) {
                Some(prev) => format!(
                    "{} on '{}' led to a {}.",
                    capitalize(&describe_action(&prev.action)),
                    page_label(&prev.observation.text),
                    hazard.phrase()
                ),
                None => format!("The agent met a {} on '{}'.", hazard.phrase(), page),
            };
            out.push(HazardPattern {
                hazard,
                step: i,
                evidence: Evidence { name: hazard.fail_mode_name().into(), description },
            });
        }
    }

    // (action, target) -> (count, first step)
    let mut pairs: BTreeMap<(String, String), (usize, usize)> = BTreeMap::new();
    for (i, step) in log.steps.iter().enumerate() {
        let key = (step.action.name.to_ascii_lowercase(), step.action.target().unwrap_or_default().to_string());
        pairs.entry(key).or_insert((0, i)).0 += 1;
    }
    if let Some((_, (count, first))) =
        pairs.iter().filter(|(_, (count, _))| *count >= LOOP_REPEATS).min_by_key(|(_, (_, first))| *first)
    {
        let step = &log.steps[*first];
        out.push(HazardPattern {
            hazard: Hazard::Loop,
            step: *first,
            evidence: Evidence {
                name: Hazard::Loop.fail_mode_name().into(),
                description: format!(
                    "{} on '{}' was repeated {} times in a {}.",
                    capitalize(&describe_action(&step.action)),
                    page_label(&step.observation.text),
                    count,
                    Hazard::Loop.phrase()
                ),
            },
        });
    }
    out
}

pub fn describe_action(action: &Action) -> String {
    let name = action.name.to_ascii_lowercase();
    let target = action.target().map(|t| fragment(t, 60));
    match (name.as_str(), target) {
        (n, Some(t)) if n.contains("click") => format!("clicking '{t}'"),
        (n, Some(t)) if n.contains("type") || n.contains("input") => format!("typing '{t}'"),
        (n, _) if n.contains("scroll") => "scrolling".into(),
        (n, _) if n.contains("back") => "going back".into(),
        (n, Some(t)) if n.contains("search") => format!("searching for '{t}'"),
        (n, Some(t)) if n.contains("go_to") || n.contains("navigate") || n.contains("open") => {
            format!("opening '{t}'")
        }
        (_, Some(t)) => format!("using {} on '{t}'", fragment(&action.name, 30)),
        (_, None) => format!("using {}", fragment(&action.name, 30)),
    }
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().collect::<String>() + c.as_str(),
        None => String::new(),
    }
}

fn join_phrases(items: &[&str]) -> String {
    match items {
        [] => String::new(),
        [one] => format!("a {one}"),
        [init @ .., last] => {
            format!("{} and a {last}", init.iter().map(|s| format!("a {s}")).collect::<Vec<_>>().join(", "))
        }
    }
}

/// Deterministic rule-based summarizer: restates the goal, reports the first
/// and last actions, and flags loops and other hazards.
#[derive(Debug, Clone, Default)]
pub struct StubSummarizer;

impl StubSummarizer {
    pub fn summarize(&self, log: &TrajectoryLog) -> serde_json::Value {
        let patterns = detect_patterns(log);
        let goal = fragment(&log.goal, 200);
        let domain =
            if log.domain_root.is_empty() { "the website".to_string() } else { fragment(&log.domain_root, 80) };

        let mut sentences = vec![format!(
            "The agent is working on the task: {}.",
            if goal.is_empty() { "an unspecified goal" } else { &goal }
        )];
        match (log.steps.first(), log.steps.last()) {
            (Some(first), Some(last)) => {
                sentences.push(format!(
                    "It started on '{}' at {} by {}.",
                    page_label(&first.observation.text),
                    domain,
                    describe_action(&first.action)
                ));
                sentences.push(format!(
                    "After {} step{} it is on '{}', most recently {}.",
                    log.steps.len(),
                    if log.steps.len() == 1 { "" } else { "s" },
                    page_label(&last.observation.text),
                    describe_action(&last.action)
                ));
            }
            _ => {
                sentences.push(format!("No steps have been taken yet at {domain}."));
                sentences.push("The agent has not interacted with any page so far.".into());
            }
        }
        if patterns.is_empty() {
            sentences.push("No obstacles have been observed so far.".into());
        } else {
            let phrases: Vec<&str> = patterns.iter().map(|p| p.hazard.phrase()).collect();
            sentences.push(format!("It has run into {}.", join_phrases(&phrases)));
        }

        let final_success = if log.is_complete() {
            Some(
                log.declared_success
                    .unwrap_or_else(|| log.steps.last().is_some_and(|s| s.terminal) && patterns.is_empty()),
            )
        } else {
            None
        };
        match final_success {
            Some(true) => sentences.push("The task ended in success.".into()),
            Some(false) => sentences.push("The task ended in failure.".into()),
            None => {}
        }

        let mut out = json!({
            "summary_text": sentences.join(" "),
            "final_success": final_success,
        });
        if final_success == Some(true) {
            out["success_workflows"] = json!(success_workflows(log));
        } else {
            let mut modes: Vec<Evidence> = patterns.into_iter().map(|p| p.evidence).collect();
            if final_success == Some(false) && modes.is_empty() {
                modes.push(Evidence {
                    name: "Unfinished task".into(),
                    description: format!(
                        "The agent stopped after {} steps without reaching the goal.",
                        log.steps.len()
                    ),
                });
            }
            out["fail_modes"] = json!(modes);
        }
        out
    }
}

fn success_workflows(log: &TrajectoryLog) -> Vec<Evidence> {
    let first = log.steps.first().map(|s| page_label(&s.observation.text)).unwrap_or_default();
    let last = log.steps.last().map(|s| page_label(&s.observation.text)).unwrap_or_default();
    let clicks: Vec<String> = log
        .steps
        .iter()
        .filter(|s| !s.terminal || s.action.target().is_some())
        .filter_map(|s| s.action.target().map(|t| format!("'{}'", fragment(t, 40))))
        .take(6)
        .collect();
    let mut out = vec![Evidence {
        name: format!("Navigation to {}", fragment(&last, 60)),
        description: if clicks.is_empty() {
            format!("The agent completed the task directly on '{first}'.")
        } else {
            format!("The agent went from '{first}' to '{last}' via {}.", clicks.join(" then "))
        },
    }];
    out.push(Evidence {
        name: "Goal completion".into(),
        description: format!("The agent finished in {} steps and reported the task done.", log.steps.len()),
    });
    out
}

impl SummarizerBackend for StubSummarizer {
    fn name(&self) -> &str {
        "stub-summarizer"
    }

    fn generate(&self, prompt: &SummaryPrompt<'_>) -> Result<String, BackendError> {
        Ok(self.summarize(prompt.trajectory).to_string())
    }

    fn deterministic(&self) -> bool {
        true
    }
}

/// Signed feature hashing of word unigrams and bigrams, L2-normalized.
#[derive(Debug, Clone)]
pub struct StubEmbedder {
    dimension: usize,
    seed: u64,
}

pub const DEFAULT_EMBEDDING_DIM: usize = 1536;

impl Default for StubEmbedder {
    fn default() -> Self {
        StubEmbedder::new(DEFAULT_EMBEDDING_DIM, 0)
    }
}

impl StubEmbedder {
    pub fn new(dimension: usize, seed: u64) -> Self {
        assert!(dimension > 0, "embedding dimension must be positive");
        StubEmbedder { dimension, seed }
    }

    fn bucket(&self, feature: &str) -> (usize, f32) {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(feature.as_bytes());
        let d = h.finalize();
        let v = u64::from_le_bytes(d[..8].try_into().expect("8 bytes"));
        let sign = if d[8] & 1 == 0 { 1.0 } else { -1.0 };
        ((v % self.dimension as u64) as usize, sign)
    }
}

fn tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()).map(str::to_lowercase).collect()
}

impl EmbedderBackend for StubEmbedder {
    fn name(&self) -> &str {
        "stub-embedder"
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<Vec<f32>, BackendError> {
        let toks = tokens(text);
        let mut counts: BTreeMap<String, f64> = BTreeMap::new();
        for t in &toks {
            *counts.entry(t.clone()).or_default() += 1.0;
        }
        for w in toks.windows(2) {
            *counts.entry(format!("{} {}", w[0], w[1])).or_default() += 0.5;
        }
        if counts.is_empty() {
            counts.insert(format!("\u{0}{}", text.to_lowercase()), 1.0);
        }
        let mut v = vec![0f64; self.dimension];
        for (feature, count) in &counts {
            let (idx, sign) = self.bucket(feature);
            v[idx] += f64::from(sign) * (1.0 + count.ln().max(0.0));
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            // Colliding features cancelled exactly; fall back to one hot.
            let (idx, _) = self.bucket(text);
            v[idx] = 1.0;
            return Ok(v.into_iter().map(|x| x as f32).collect());
        }
        Ok(v.into_iter().map(|x| (x / norm) as f32).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::{Observation, StepRecord, DEFAULT_HARD_CAP};

    fn step(i: usize, page: &str, target: &str) -> StepRecord {
        StepRecord {
            step_index: i,
            observation: Observation { text: page.into(), screenshot: None },
            action: Action::new("click").with_arg("target", target),
            self_eval: String::new(),
            timestamp_ms: i as u64,
            terminal: false,
        }
    }

    #[test]
    fn loop_detected_at_first_repeated_pair() {
        let mut log = TrajectoryLog::new("t", "find shoes", "shop.example", "m");
        for i in 0..6 {
            if i % 2 == 0 {
                log.steps.push(step(i, "Home | shop", "Special Offers"));
            } else {
                log.steps.push(step(i, "Offers | shop", "Back to Home"));
            }
        }
        let patterns = detect_patterns(&log);
        assert_eq!(patterns.len(), 1);
        assert_eq!(patterns[0].hazard, Hazard::Loop);
        assert_eq!(
            patterns[0].evidence.description,
            "Clicking 'Special Offers' on 'Home' was repeated 3 times in a navigation loop."
        );
    }

    #[test]
    fn captcha_entry_is_previous_click() {
        let mut log = TrajectoryLog::new("t", "g", "d", "m");
        log.steps.push(step(0, "Home | shop", "Deals"));
        log.steps.push(step(1, "Security check | please solve the CAPTCHA", "I am not a robot"));
        let p = detect_patterns(&log);
        assert_eq!(p[0].hazard, Hazard::Captcha);
        assert_eq!(p[0].evidence.description, "Clicking 'Deals' on 'Home' led to a captcha gate.");
    }

    #[test]
    fn summaries_have_three_to_five_sentences() {
        let mut log = TrajectoryLog::new("t", "Find it. Then buy!", "d", "m");
        let s = StubSummarizer.summarize(&log);
        let n = crate::text::sentence_count(s["summary_text"].as_str().unwrap());
        assert!((3..=5).contains(&n), "{n}: {s}");
        log.steps = (0..DEFAULT_HARD_CAP).map(|i| step(i, "P", "x")).collect();
        log.refresh_status(DEFAULT_HARD_CAP);
        let s = StubSummarizer.summarize(&log);
        let n = crate::text::sentence_count(s["summary_text"].as_str().unwrap());
        assert!((3..=5).contains(&n), "{n}: {s}");
        assert_eq!(s["final_success"], json!(false));
    }

    #[test]
    fn embedder_unit_norm_and_deterministic() {
        let e = StubEmbedder::default();
        let v = e.embed("a").unwrap();
        assert_eq!(v.len(), 1536);
        let norm = v.iter().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-9);
        let long = e.embed("the agent clicked the offers link twice").unwrap();
        let norm = long.iter().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-6);
        assert_eq!(v, e.embed("a").unwrap());
        let punct = e.embed("!!!").unwrap();
        assert_eq!(punct.len(), 1536);
    }
}
