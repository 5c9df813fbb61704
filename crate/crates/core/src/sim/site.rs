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

//! Synthetic websites: a hub page with category links, product pages
//! below them, and trap links on the hub that all tasks of a domain share.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::hazard::Hazard;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrapKind {
    LoopCycle,
    CaptchaGate,
    DeadEnd,
    Http4xx,
}

impl TrapKind {
    pub const ALL: [TrapKind; 4] = [TrapKind::LoopCycle, TrapKind::CaptchaGate, TrapKind::DeadEnd, TrapKind::Http4xx];

    pub fn hazard(self) -> Hazard {
        match self {
            TrapKind::LoopCycle => Hazard::Loop,
            TrapKind::CaptchaGate => Hazard::Captcha,
            TrapKind::DeadEnd => Hazard::DeadEnd,
            TrapKind::Http4xx => Hazard::Http4xx,
        }
    }

    /// Action a stuck agent keeps repeating on the trap page.
    pub fn stuck_action(self) -> &'static str {
        match self {
            TrapKind::LoopCycle => "click",
            TrapKind::CaptchaGate => "click",
            TrapKind::DeadEnd => "scroll",
            TrapKind::Http4xx => "reload",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Page {
    pub id: usize,
    pub title: String,
    /// Body text shown after the title; carries domain vocabulary.
    pub text: String,
    /// Set on pages an agent can get stuck on.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trap: Option<TrapKind>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trap: Option<TrapKind>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticSite {
    pub domain: String,
    pub pages: Vec<Page>,
    pub edges: Vec<Edge>,
    pub start: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimTask {
    pub task_id: String,
    pub domain: String,
    pub goal: String,
    pub goal_page: usize,
}

impl SyntheticSite {
    pub fn out_edges(&self, page: usize) -> impl Iterator<Item = &Edge> {
        self.edges.iter().filter(move |e| e.from == page)
    }

    pub fn observation(&self, page: usize) -> String {
        let p = &self.pages[page];
        let links: Vec<&str> = self.out_edges(page).map(|e| e.label.as_str()).collect();
        let mut text = format!("{} | {} | {}", p.title, self.domain, p.text);
        if !links.is_empty() {
            text.push_str(&format!(" | links: {}", links.join(", ")));
        }
        text
    }

    /// Shortest click path avoiding trap edges.
    pub fn safe_path(&self, from: usize, to: usize) -> Option<Vec<usize>> {
        let mut prev: BTreeMap<usize, usize> = BTreeMap::new();
        let mut seen = BTreeSet::from([from]);
        let mut q = VecDeque::from([from]);
        while let Some(p) = q.pop_front() {
            if p == to {
                let mut path = vec![to];
                let mut cur = to;
                while let Some(&b) = prev.get(&cur) {
                    path.push(b);
                    cur = b;
                }
                path.reverse();
                return Some(path);
            }
            for e in self.out_edges(p).filter(|e| e.trap.is_none()) {
                if seen.insert(e.to) {
                    prev.insert(e.to, p);
                    q.push_back(e.to);
                }
            }
        }
        None
    }

    /// Steps a perfect agent needs: one click per edge plus the closing
    /// `done` action.
    pub fn optimal_steps(&self, goal: usize) -> Option<usize> {
        self.safe_path(self.start, goal).map(|p| p.len())
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.start >= self.pages.len() {
            return Err("start page out of range".into());
        }
        for (i, p) in self.pages.iter().enumerate() {
            if p.id != i {
                return Err(format!("page {i} has id {}", p.id));
            }
        }
        for e in &self.edges {
            if e.from >= self.pages.len() || e.to >= self.pages.len() {
                return Err(format!("edge '{}' points outside the site", e.label));
            }
            if e.label.contains('\'') || e.label.contains('.') {
                return Err(format!("edge label '{}' may not contain quotes or periods", e.label));
            }
        }
        Ok(())
    }

    /// Linear chain of `n` pages without traps.
    pub fn linear(domain: &str, n: usize) -> Self {
        let pages = (0..n)
            .map(|i| Page { id: i, title: format!("Step {i}"), text: format!("section {i} of {domain}"), trap: None })
            .collect();
        let edges = (1..n).map(|i| Edge { from: i - 1, to: i, label: format!("Next {i}"), trap: None }).collect();
        SyntheticSite { domain: domain.into(), pages, edges, start: 0 }
    }
}

const CATEGORIES: [&str; 12] =
    ["Kitchen", "Garden", "Office", "Toys", "Sports", "Audio", "Books", "Bath", "Lighting", "Travel", "Pets", "Crafts"];
const ADJECTIVES: [&str; 10] =
    ["red", "blue", "steel", "compact", "wooden", "silver", "folding", "cordless", "classic", "large"];
const NOUNS: [&str; 12] = [
    "kettle", "lamp", "chair", "speaker", "backpack", "blender", "desk", "umbrella", "clock", "mirror", "toaster",
    "fan",
];
const TRAP_LABELS: [(TrapKind, &str, &str); 4] = [
    (TrapKind::LoopCycle, "Deals", "Today's deals"),
    (TrapKind::CaptchaGate, "Gift cards", "Verify you are human"),
    (TrapKind::DeadEnd, "Archive", "Dead end"),
    (TrapKind::Http4xx, "Clearance", "HTTP 404 Not Found"),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SiteParams {
    pub categories: usize,
    pub products_per_category: usize,
    /// Trap kinds that may be placed on a domain's hub.
    pub traps: Vec<TrapKind>,
    /// How many of `traps` each domain gets; 0 places all of them.
    pub traps_per_domain: usize,
}

impl Default for SiteParams {
    fn default() -> Self {
        SiteParams { categories: 4, products_per_category: 3, traps: vec![TrapKind::CaptchaGate], traps_per_domain: 0 }
    }
}

/// Builds domain `index` of a suite. Product names, category choice and
/// link order come from `seed`.
pub fn generate_site(index: usize, params: &SiteParams, seed: u64) -> SyntheticSite {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (index as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let domain = format!("shop-{index:02}.test");
    let mut cats: Vec<&str> = CATEGORIES.to_vec();
    cats.shuffle(&mut rng);
    cats.truncate(params.categories.clamp(1, CATEGORIES.len()));

    let mut pages =
        vec![Page { id: 0, title: "Home".into(), text: format!("welcome to {domain}, browse categories"), trap: None }];
    let mut edges = Vec::new();
    let mut used = BTreeSet::new();
    for cat in &cats {
        let cid = pages.len();
        pages.push(Page { id: cid, title: (*cat).into(), text: format!("{cat} products at {domain}"), trap: None });
        edges.push(Edge { from: 0, to: cid, label: (*cat).into(), trap: None });
        edges.push(Edge { from: cid, to: 0, label: "Home".into(), trap: None });
        for _ in 0..params.products_per_category.max(1) {
            let name = loop {
                let n = format!(
                    "{} {}",
                    ADJECTIVES[rng.random_range(0..ADJECTIVES.len())],
                    NOUNS[rng.random_range(0..NOUNS.len())]
                );
                if used.insert(n.clone()) {
                    break n;
                }
            };
            let pid = pages.len();
            let price = rng.random_range(5..500);
            pages.push(Page {
                id: pid,
                title: capitalize(&name),
                text: format!("{name} in {cat}, price ${price}"),
                trap: None,
            });
            edges.push(Edge { from: cid, to: pid, label: capitalize(&name), trap: None });
            edges.push(Edge { from: pid, to: cid, label: (*cat).into(), trap: None });
        }
    }
    let mut traps = params.traps.clone();
    if params.traps_per_domain > 0 && params.traps_per_domain < traps.len() {
        traps.shuffle(&mut rng);
        traps.truncate(params.traps_per_domain);
        traps.sort();
    }
    for kind in &traps {
        let (_, label, title) = TRAP_LABELS.iter().find(|(k, _, _)| k == kind).copied().expect("label for trap");
        let tid = pages.len();
        let text = match kind {
            TrapKind::LoopCycle => format!("limited offers at {domain}, see Home for more"),
            TrapKind::CaptchaGate => "please solve the captcha to continue".to_string(),
            TrapKind::DeadEnd => "this page is a dead end with nothing to click".to_string(),
            TrapKind::Http4xx => "the requested page was not found".to_string(),
        };
        pages.push(Page { id: tid, title: title.into(), text, trap: (*kind != TrapKind::LoopCycle).then_some(*kind) });
        edges.push(Edge { from: 0, to: tid, label: label.into(), trap: Some(*kind) });
        match kind {
            TrapKind::LoopCycle => edges.push(Edge { from: tid, to: 0, label: "Home".into(), trap: None }),
            TrapKind::CaptchaGate => {
                edges.push(Edge { from: tid, to: tid, label: "Try again".into(), trap: Some(*kind) })
            }
            _ => {}
        }
    }
    SyntheticSite { domain, pages, edges, start: 0 }
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    c.next().map(|f| f.to_uppercase().collect::<String>() + c.as_str()).unwrap_or_default()
}

/// Product pages of a generated site, in page order.
pub fn product_pages(site: &SyntheticSite) -> Vec<usize> {
    site.pages
        .iter()
        .filter(|p| p.trap.is_none() && p.id != site.start)
        .filter(|p| site.out_edges(p.id).all(|e| e.label != "Home") && site.out_edges(p.id).count() > 0)
        .map(|p| p.id)
        .collect()
}

pub fn task_for(site: &SyntheticSite, page: usize, task_id: impl Into<String>) -> SimTask {
    let name = site.pages[page].title.to_ascii_lowercase();
    SimTask {
        task_id: task_id.into(),
        domain: site.domain.clone(),
        goal: format!("Find the price of the {name} on {}", site.domain),
        goal_page: page,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hazard::hazards_in_text;

    #[test]
    fn generated_site_is_valid_and_goal_reachable() {
        let params = SiteParams { traps: TrapKind::ALL.to_vec(), ..Default::default() };
        let site = generate_site(3, &params, 42);
        site.validate().unwrap();
        let products = product_pages(&site);
        assert_eq!(products.len(), 12);
        for p in products {
            assert_eq!(site.optimal_steps(p), Some(3));
        }
        assert_eq!(site, generate_site(3, &params, 42));
    }

    #[test]
    fn trap_pages_mention_their_hazard() {
        let params = SiteParams { traps: TrapKind::ALL.to_vec(), ..Default::default() };
        let site = generate_site(0, &params, 1);
        for e in site.edges.iter().filter(|e| e.from == 0 && e.trap.is_some()) {
            let kind = e.trap.unwrap();
            let found = hazards_in_text(&site.observation(e.to));
            if kind == TrapKind::LoopCycle {
                assert!(found.is_empty(), "loop pages look harmless");
            } else {
                assert_eq!(found, vec![kind.hazard()], "{}", site.observation(e.to));
            }
        }
        for p in product_pages(&site) {
            assert!(hazards_in_text(&site.observation(p)).is_empty());
        }
        assert!(hazards_in_text(&site.observation(0)).is_empty());
    }

    #[test]
    fn linear_site() {
        let s = SyntheticSite::linear("line.test", 5);
        s.validate().unwrap();
        assert_eq!(s.optimal_steps(4), Some(5));
    }
}
