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

//! Synthetic stores and measurement helpers shared by the CLI benches and
//! the acceptance suite.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{EpisodeMeta, IndexConfig, MemoryRecord, MemoryStore, RetrievalFilter};
use crate::condenser::Evidence;

/// `n` records with uniform random embeddings in [-1, 1). Task ids cycle
/// through `tasks` values; every third record is a failure.
pub fn synthetic_records(n: usize, dim: usize, tasks: usize, seed: u64) -> Vec<MemoryRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tasks = tasks.max(1);
    (0..n)
        .map(|i| {
            let success = i % 3 != 0;
            MemoryRecord {
                embedding: random_vector(&mut rng, dim),
                summary_text: format!("Synthetic episode {i} on site-{}.test.", i % 7),
                meta: EpisodeMeta {
                    episode_id: format!("syn-{i:06}"),
                    domain_root: format!("site-{}.test", i % 7),
                    user_goal: format!("synthetic goal {}", i % tasks),
                    model_name: "synthetic".into(),
                    total_steps: 1 + i % 30,
                    timestamp_ms: 1_700_000_000_000 + i as u64,
                    task_id: format!("task-{}", i % tasks),
                    final_success: Some(success),
                },
                evidence: vec![Evidence {
                    name: if success { "Workflow".into() } else { "Navigation loop".into() },
                    description: "Synthetic evidence.".into(),
                }],
            }
        })
        .collect()
}

pub fn random_vector(rng: &mut impl Rng, dim: usize) -> Vec<f32> {
    (0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect()
}

/// `n` seeded query vectors.
pub fn random_queries(n: usize, dim: usize, seed: u64) -> Vec<Vec<f32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| random_vector(&mut rng, dim)).collect()
}

pub fn synthetic_store(n: usize, dim: usize, tasks: usize, seed: u64, config: IndexConfig) -> MemoryStore {
    let mut store = MemoryStore::new(dim, config);
    let report = store.seed(synthetic_records(n, dim, tasks, seed));
    debug_assert!(report.errors.is_empty());
    store
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyRow {
    pub k: usize,
    pub repeats: usize,
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
}

/// Times `repeats` searches for every `k`, each against a fresh random
/// query. One untimed warm-up pass runs first.
pub fn latency_sweep(store: &MemoryStore, ks: &[usize], repeats: usize, exact: bool, seed: u64) -> Vec<LatencyRow> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let filter = RetrievalFilter::default();
    let run = |q: &[f32], k: usize| {
        let r = if exact { store.search_exact(q, k, &filter) } else { store.search_ann(q, k, &filter) };
        std::hint::black_box(r.expect("valid query").hits.len());
    };
    for _ in 0..repeats.min(20) {
        run(&random_vector(&mut rng, store.dimension()), 5);
    }
    ks.iter()
        .map(|&k| {
            let mut samples: Vec<f64> = (0..repeats)
                .map(|_| {
                    let q = random_vector(&mut rng, store.dimension());
                    let t = Instant::now();
                    run(&q, k);
                    t.elapsed().as_secs_f64() * 1e3
                })
                .collect();
            samples.sort_by(f64::total_cmp);
            let pct = |p: f64| samples[((samples.len() as f64 - 1.0) * p).round() as usize];
            LatencyRow {
                k,
                repeats,
                mean_ms: samples.iter().sum::<f64>() / samples.len().max(1) as f64,
                p50_ms: pct(0.5),
                p95_ms: pct(0.95),
            }
        })
        .collect()
}

/// Largest mean latency over the smallest.
pub fn flatness(rows: &[LatencyRow]) -> f64 {
    let max = rows.iter().map(|r| r.mean_ms).fold(f64::MIN, f64::max);
    let min = rows.iter().map(|r| r.mean_ms).fold(f64::MAX, f64::min);
    max / min
}

/// Mean overlap of graph-index and exact top-`k` id sets.
pub fn recall_at_k(store: &MemoryStore, queries: &[Vec<f32>], k: usize) -> f64 {
    let filter = RetrievalFilter::default();
    let mut total = 0.0;
    for q in queries {
        let exact = store.search_exact(q, k, &filter).expect("valid query");
        let ann = store.search_ann(q, k, &filter).expect("valid query");
        let truth: Vec<&str> = exact.episode_ids();
        let hit = ann.episode_ids().iter().filter(|id| truth.contains(id)).count();
        total += hit as f64 / truth.len().max(1) as f64;
    }
    total / queries.len().max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_shapes() {
        let store = synthetic_store(50, 16, 5, 1, IndexConfig::default());
        assert_eq!(store.len(), 50);
        let rows = latency_sweep(&store, &[1, 3], 5, true, 2);
        assert_eq!(rows.iter().map(|r| r.k).collect::<Vec<_>>(), vec![1, 3]);
        assert!(rows.iter().all(|r| r.mean_ms >= 0.0 && r.p50_ms <= r.p95_ms));
        assert!(flatness(&rows) >= 1.0);
        let qs: Vec<Vec<f32>> = (0..5).map(|i| synthetic_records(1, 16, 1, 100 + i)[0].embedding.clone()).collect();
        assert!(recall_at_k(&store, &qs, 5) > 0.9);
    }
}
