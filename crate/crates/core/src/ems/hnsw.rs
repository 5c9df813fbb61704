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

//! Hierarchical navigable small-world graph over unit vectors.
//!
//! Distance is `1 - u·v` on L2-normalized copies of the inserted vectors.
//! Node ids are dense and assigned in insertion order. Level assignment
//! uses a seeded generator, so rebuilding from the same vectors in the same
//! order yields the same graph.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::cosine::dot_f32;

const MAX_LEVEL: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HnswParams {
    /// Max links per node on upper layers; layer 0 allows `2 * m`.
    pub m: usize,
    pub ef_construction: usize,
    pub ef_search: usize,
    pub seed: u64,
}

impl Default for HnswParams {
    fn default() -> Self {
        HnswParams { m: 32, ef_construction: 128, ef_search: 512, seed: 0x5eed }
    }
}

#[derive(Clone, Copy, PartialEq)]
struct Scored {
    dist: f32,
    id: u32,
}

impl Eq for Scored {}

impl Ord for Scored {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist.total_cmp(&other.dist).then(self.id.cmp(&other.id))
    }
}

impl PartialOrd for Scored {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone)]
pub struct Hnsw {
    dim: usize,
    params: HnswParams,
    level_mult: f64,
    data: Vec<f32>,
    /// links[node][level] -> neighbor ids
    links: Vec<Vec<Vec<u32>>>,
    entry: Option<u32>,
    top_level: usize,
    rng: ChaCha8Rng,
}

impl Hnsw {
    pub fn new(dim: usize, params: HnswParams) -> Self {
        assert!(params.m >= 2, "m must be at least 2");
        Hnsw {
            dim,
            level_mult: 1.0 / (params.m as f64).ln(),
            params,
            data: Vec::new(),
            links: Vec::new(),
            entry: None,
            top_level: 0,
            rng: ChaCha8Rng::seed_from_u64(params.seed),
        }
    }

    pub fn len(&self) -> usize {
        self.links.len()
    }

    pub fn is_empty(&self) -> bool {
        self.links.is_empty()
    }

    pub fn params(&self) -> HnswParams {
        self.params
    }

    fn vector(&self, id: u32) -> &[f32] {
        let start = id as usize * self.dim;
        &self.data[start..start + self.dim]
    }

    fn dist(&self, q: &[f32], id: u32) -> f32 {
        1.0 - dot_f32(q, self.vector(id))
    }

    fn max_links(&self, level: usize) -> usize {
        if level == 0 {
            self.params.m * 2
        } else {
            self.params.m
        }
    }

    fn random_level(&mut self) -> usize {
        let u: f64 = 1.0 - self.rng.random::<f64>();
        ((-u.ln() * self.level_mult).floor() as usize).min(MAX_LEVEL)
    }

    /// Inserts a vector (normalized internally) and returns its node id.
    /// The caller guarantees a non-zero, finite vector of the right length.
    pub fn insert(&mut self, vector: &[f32]) -> u32 {
        assert_eq!(vector.len(), self.dim, "dimension mismatch");
        let unit = normalize(vector);
        let id = self.links.len() as u32;
        let level = self.random_level();
        self.data.extend_from_slice(&unit);
        self.links.push(vec![Vec::new(); level + 1]);

        let Some(mut cur) = self.entry else {
            self.entry = Some(id);
            self.top_level = level;
            return id;
        };

        let q = self.vector(id).to_vec();
        for l in ((level + 1)..=self.top_level).rev() {
            cur = self.greedy(&q, cur, l);
        }
        for l in (0..=level.min(self.top_level)).rev() {
            let found = self.search_layer(&q, &[cur], self.params.ef_construction, l, &|_| true);
            let neighbors = self.select_neighbors(&found, self.params.m);
            self.links[id as usize][l] = neighbors.iter().map(|s| s.id).collect();
            for n in &neighbors {
                self.connect(n.id, id, l);
            }
            cur = found.first().map_or(cur, |s| s.id);
        }
        if level > self.top_level {
            self.top_level = level;
            self.entry = Some(id);
        }
        id
    }

    fn connect(&mut self, from: u32, to: u32, level: usize) {
        let cap = self.max_links(level);
        let list = &mut self.links[from as usize][level];
        if list.len() < cap {
            list.push(to);
            return;
        }
        let base = self.vector(from).to_vec();
        let mut candidates: Vec<Scored> = self.links[from as usize][level]
            .iter()
            .chain(std::iter::once(&to))
            .map(|&id| Scored { dist: self.dist(&base, id), id })
            .collect();
        candidates.sort();
        let kept = self.select_neighbors(&candidates, cap);
        self.links[from as usize][level] = kept.into_iter().map(|s| s.id).collect();
    }

    /// Diversity heuristic: keep a candidate only if it is closer to the
    /// base than to every neighbor already kept. `sorted` is ascending.
    fn select_neighbors(&self, sorted: &[Scored], limit: usize) -> Vec<Scored> {
        let mut kept: Vec<Scored> = Vec::with_capacity(limit);
        for c in sorted {
            if kept.len() == limit {
                break;
            }
            let cv = self.vector(c.id);
            if kept.iter().all(|k| 1.0 - dot_f32(cv, self.vector(k.id)) > c.dist) {
                kept.push(*c);
            }
        }
        kept
    }

    fn greedy(&self, q: &[f32], start: u32, level: usize) -> u32 {
        let mut cur = start;
        let mut best = self.dist(q, cur);
        loop {
            let mut improved = false;
            for &n in &self.links[cur as usize][level] {
                let d = self.dist(q, n);
                if d < best {
                    best = d;
                    cur = n;
                    improved = true;
                }
            }
            if !improved {
                return cur;
            }
        }
    }

    /// Beam search on one layer. Nodes rejected by `allow` are traversed but
    /// never enter the result set. Returns results sorted ascending.
    fn search_layer(
        &self,
        q: &[f32],
        entries: &[u32],
        ef: usize,
        level: usize,
        allow: &dyn Fn(u32) -> bool,
    ) -> Vec<Scored> {
        let mut visited = vec![false; self.links.len()];
        let mut candidates: BinaryHeap<std::cmp::Reverse<Scored>> = BinaryHeap::new();
        let mut results: BinaryHeap<Scored> = BinaryHeap::new();
        for &e in entries {
            visited[e as usize] = true;
            let s = Scored { dist: self.dist(q, e), id: e };
            candidates.push(std::cmp::Reverse(s));
            if allow(e) {
                results.push(s);
            }
        }
        while let Some(std::cmp::Reverse(c)) = candidates.pop() {
            if results.len() >= ef && results.peek().is_some_and(|w| c.dist > w.dist) {
                break;
            }
            for &n in &self.links[c.id as usize][level] {
                if std::mem::replace(&mut visited[n as usize], true) {
                    continue;
                }
                let d = self.dist(q, n);
                let full = results.len() >= ef;
                if !full || results.peek().is_some_and(|w| d < w.dist) {
                    let s = Scored { dist: d, id: n };
                    candidates.push(std::cmp::Reverse(s));
                    if allow(n) {
                        results.push(s);
                        if results.len() > ef {
                            results.pop();
                        }
                    }
                }
            }
        }
        results.into_sorted_vec()
    }

    /// Approximate `fetch` nearest nodes accepted by `allow`, nearest first,
    /// as `(id, cosine similarity)` pairs.
    pub fn search(&self, query: &[f32], fetch: usize, ef: usize, allow: &dyn Fn(u32) -> bool) -> Vec<(u32, f32)> {
        let Some(mut cur) = self.entry else {
            return Vec::new();
        };
        if fetch == 0 {
            return Vec::new();
        }
        let q = normalize(query);
        for l in (1..=self.top_level).rev() {
            cur = self.greedy(&q, cur, l);
        }
        let found = self.search_layer(&q, &[cur], ef.max(fetch), 0, allow);
        found.into_iter().take(fetch).map(|s| (s.id, 1.0 - s.dist)).collect()
    }
}

fn normalize(v: &[f32]) -> Vec<f32> {
    let norm = super::cosine::norm_f64(v);
    v.iter().map(|x| (f64::from(*x) / norm) as f32).collect()
}
