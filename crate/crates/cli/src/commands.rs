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

//! Subcommand bodies. Each reads its inputs and writes its outputs through
//! [`Artifacts`] so the run can be recorded and replayed.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};
use webcoach_core::condenser::route;
use webcoach_core::config::{MemoryMode, SidecarConfig};
use webcoach_core::ems::{self, bench, MemoryStore, RetrievalFilter};
use webcoach_core::scheduler::{
    dynamic_queue_run, group_by_subdomain, parse_job_file, reference_run, render_report, schedule_list, Job,
    ReferenceRun, ScheduleResult, REFERENCE_JOBS, REFERENCE_JOB_SECONDS,
};
use webcoach_core::session::Sidecar;
use webcoach_core::sim::{BenchmarkReport, EpisodeResult, Suite, SuiteConfig};
use webcoach_core::trajectory::{AdapterRegistry, ParsedLog};
use webcoach_sidecar::{build_coach, build_condenser, build_sidecar, SearchHit};

use crate::cli::*;
use crate::run::Artifacts;

/// Runs one recorded-style command. `serve`, `report` and `replay` are
/// handled by the caller.
pub fn execute(cmd: &Command, cfg: &SidecarConfig, seed: Option<u64>, art: &mut Artifacts) -> Result<()> {
    match cmd {
        Command::Ingest(a) => ingest(a, cfg, art),
        Command::Condense(a) => condense(a, cfg, art),
        Command::Seed(a) => seed_memory(a, cfg, seed, art),
        Command::Search(a) => search(a, cfg, art),
        Command::BenchRetrieval(a) => bench_retrieval(a, seed, art),
        Command::Schedule(a) => schedule(a, art),
        Command::Simulate(a) => simulate(a, cfg, seed, art),
        Command::Serve(_) | Command::Report(_) | Command::Replay(_) => {
            bail!("{} cannot run here", cmd.name())
        }
    }
}

fn parse_log(log: &Path, adapter: Option<&Path>, cfg: &SidecarConfig, art: &mut Artifacts) -> Result<ParsedLog> {
    let registry = AdapterRegistry::new();
    let id = match adapter {
        Some(p) => registry.register_json(&art.read_input_string(p)?)?,
        None => registry.canonical_id().clone(),
    };
    let raw = art.read_input(log)?;
    registry.parse_step_log(&raw, &id, cfg.hard_cap).with_context(|| format!("cannot parse {}", log.display()))
}

fn ingest(a: &IngestArgs, cfg: &SidecarConfig, art: &mut Artifacts) -> Result<()> {
    let parsed = parse_log(&a.log, a.adapter.as_deref(), cfg, art)?;
    let t = &parsed.trajectory;
    art.write_json("trajectory.json", t)?;
    art.write_jsonl("warnings.jsonl", &parsed.warnings)?;
    println!(
        "{}: {} steps, status {}, declared success {}, {} warnings",
        if t.task_id.is_empty() { "(no task id)" } else { &t.task_id },
        t.steps.len(),
        serde_json::to_string(&t.status)?.trim_matches('"'),
        t.declared_success.map_or("unknown".into(), |s| s.to_string()),
        parsed.warnings.len()
    );
    Ok(())
}

fn condense(a: &CondenseArgs, cfg: &SidecarConfig, art: &mut Artifacts) -> Result<()> {
    let parsed = parse_log(&a.log, a.adapter.as_deref(), cfg, art)?;
    let condenser = build_condenser(cfg)?;
    let record = condenser.condense(&parsed.trajectory, a.episode_id.as_deref())?;
    let mut text = record.to_json();
    text.push('\n');
    art.write("condensed.json", text.as_bytes(), true)?;
    println!("episode    {}", record.source.episode_id);
    println!("routing    {:?}", route(&record));
    println!("outcome    {}", record.final_success.map_or("unknown".into(), |s| s.to_string()));
    for e in &record.evidence {
        println!("evidence   {}: {}", e.name, e.description);
    }
    println!("summary    {}", record.summary_text);
    Ok(())
}

fn load_suite(name: &str, seed: Option<u64>, art: &mut Artifacts) -> Result<Suite> {
    let mut config = if name == "calibration" {
        SuiteConfig::calibration()
    } else {
        let text = art.read_input_string(Path::new(name))?;
        serde_json::from_str(&text).with_context(|| format!("{name} is not a suite file"))?
    };
    if let Some(s) = seed {
        config.seed = s;
    }
    Ok(config.build()?)
}

fn empty_sidecar(cfg: &SidecarConfig) -> Result<Sidecar> {
    let store = MemoryStore::new(cfg.embedding_dim, cfg.index).with_hard_cap(cfg.hard_cap);
    Ok(Sidecar::new(cfg.clone(), build_condenser(cfg)?, build_coach(cfg)?, store)?)
}

fn seed_memory(a: &SeedArgs, cfg: &SidecarConfig, seed: Option<u64>, art: &mut Artifacts) -> Result<()> {
    let sidecar = empty_sidecar(cfg)?;
    let report = match (&a.input, &a.suite) {
        (Some(p), _) => {
            let text = art.read_input_string(p)?;
            sidecar.store().write().seed_jsonl(&text)
        }
        (None, Some(s)) => {
            let suite = load_suite(s, seed, art)?;
            sidecar.seed(suite.memory_records(&sidecar)?)
        }
        (None, None) => bail!("seed needs --input or --suite"),
    };
    let (target, in_out) = match (&a.snapshot, art.dir()) {
        (Some(p), _) => (p.clone(), false),
        (None, Some(d)) => (d.join("memory.snap"), true),
        (None, None) => match &cfg.snapshot_path {
            Some(p) => (p.clone(), false),
            None => bail!("nowhere to write the snapshot: pass --snapshot or --out"),
        },
    };
    sidecar.snapshot_to(&target)?;
    if in_out {
        art.adopt("memory.snap", true)?;
    }
    art.write_json("seed_report.json", &report)?;
    println!("inserted {}, skipped {}, errors {}", report.inserted, report.skipped, report.errors.len());
    for (i, e) in report.errors.iter().take(10) {
        println!("  record {i}: {e}");
    }
    println!("snapshot {} ({} records)", target.display(), sidecar.store_len());
    Ok(())
}

fn search(a: &SearchArgs, cfg: &SidecarConfig, art: &mut Artifacts) -> Result<()> {
    let path: PathBuf = a
        .snapshot
        .clone()
        .or_else(|| cfg.snapshot_path.clone())
        .ok_or_else(|| anyhow!("no snapshot: pass --snapshot or set snapshot_path"))?;
    art.note_input(&path)?;
    let mut cfg = cfg.clone();
    cfg.snapshot_path = Some(path);
    let sidecar = build_sidecar(cfg.clone())?;
    let k = a.k.unwrap_or(cfg.k);
    if k == 0 {
        bail!("k must be positive");
    }
    let filter = RetrievalFilter {
        exclude_task_ids: a.exclude_task.iter().filter(|t| !t.is_empty()).cloned().collect::<BTreeSet<_>>(),
        require_domain_root: a.domain.clone(),
        require_outcome: a.outcome.map(|o| o == Outcome::Success),
    };
    let result = sidecar.search_text(&a.query, k, &filter)?;
    let hits: Vec<SearchHit> = result.hits.iter().map(SearchHit::from).collect();
    art.write_jsonl("results.jsonl", &hits)?;
    println!("{:>4} {:>8}  {:<8} {:<20} {:<28} episode", "rank", "score", "outcome", "task", "domain");
    for (i, h) in hits.iter().enumerate() {
        let outcome = match h.final_success {
            Some(true) => "success",
            Some(false) => "failure",
            None => "unknown",
        };
        println!(
            "{:>4} {:>8.4}  {:<8} {:<20} {:<28} {}",
            i + 1,
            h.score,
            outcome,
            h.task_id,
            h.domain_root,
            h.episode_id
        );
    }
    if hits.is_empty() {
        println!("(no results)");
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct BenchSummary {
    records: usize,
    dim: usize,
    repeats: usize,
    exact: bool,
    flatness: f64,
    worst_mean_ms: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    recall: Option<f64>,
}

fn bench_retrieval(a: &BenchArgs, seed: Option<u64>, art: &mut Artifacts) -> Result<()> {
    if a.records == 0 || a.dim == 0 || a.repeats == 0 {
        bail!("--records, --dim and --repeats must be positive");
    }
    let seed = seed.unwrap_or(7);
    let store = bench::synthetic_store(a.records, a.dim, 50, seed, ems::IndexConfig::default());
    let rows = bench::latency_sweep(&store, &a.k.0, a.repeats, !a.ann, seed);
    let recall = (a.recall_queries > 0).then(|| {
        let queries = bench::random_queries(a.recall_queries, a.dim, seed ^ 0xa5a5);
        bench::recall_at_k(&store, &queries, *a.k.0.iter().max().expect("k set is non-empty"))
    });
    let summary = BenchSummary {
        records: a.records,
        dim: a.dim,
        repeats: a.repeats,
        exact: !a.ann,
        flatness: bench::flatness(&rows),
        worst_mean_ms: rows.iter().map(|r| r.mean_ms).fold(0.0, f64::max),
        recall,
    };
    let mut lines = String::new();
    for r in &rows {
        lines.push_str(&serde_json::to_string(r)?);
        lines.push('\n');
    }
    art.write("latency.jsonl", lines.as_bytes(), false)?;
    let mut text = serde_json::to_string_pretty(&summary)?;
    text.push('\n');
    art.write("summary.json", text.as_bytes(), false)?;

    println!(
        "{} search, {} records of dimension {}, {} repeats per k",
        if a.ann { "graph" } else { "exact" },
        a.records,
        a.dim,
        a.repeats
    );
    println!("{:>4} {:>10} {:>10} {:>10}", "k", "mean_ms", "p50_ms", "p95_ms");
    for r in &rows {
        println!("{:>4} {:>10.3} {:>10.3} {:>10.3}", r.k, r.mean_ms, r.p50_ms, r.p95_ms);
    }
    println!("max/min mean latency {:.3}", summary.flatness);
    if let Some(r) = recall {
        println!("recall@{} {:.4}", a.k.0.iter().max().expect("non-empty"), r);
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ScheduleOutput {
    pub jobs: usize,
    pub results: Vec<ScheduleResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<ReferenceRun>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub subdomains: Vec<ScheduleResult>,
}

pub fn render_schedule(out: &ScheduleOutput) -> String {
    let mut text = format!("{} jobs\n", out.jobs);
    text.push_str(&render_report(&out.results.iter().collect::<Vec<_>>()));
    if !out.subdomains.is_empty() {
        text.push_str("\nsubdomain units\n");
        text.push_str(&render_report(&out.subdomains.iter().collect::<Vec<_>>()));
    }
    if let Some(r) = &out.reference {
        text.push('\n');
        text.push_str(&r.render());
    }
    text
}

fn schedule(a: &ScheduleArgs, art: &mut Artifacts) -> Result<()> {
    let jobs: Vec<Job> = match &a.jobs {
        Some(p) => parse_job_file(&art.read_input_string(p)?)?,
        None => (0..REFERENCE_JOBS).map(|i| Job::exact(format!("task-{i:03}"), REFERENCE_JOB_SECONDS)).collect(),
    };
    let mut policies = vec![a.policy];
    for p in &a.compare {
        if !policies.contains(p) {
            policies.push(*p);
        }
    }
    let results = policies.iter().map(|p| schedule_list(&jobs, a.workers, *p)).collect::<Result<Vec<_>, _>>()?;
    let subdomains = if a.subdomains {
        let groups = group_by_subdomain(&jobs);
        vec![
            dynamic_queue_run(&groups, a.workers, true)?.schedule,
            dynamic_queue_run(&groups, a.workers, false)?.schedule,
        ]
    } else {
        Vec::new()
    };
    let out = ScheduleOutput { jobs: jobs.len(), results, reference: a.reference.then(reference_run), subdomains };
    let text = render_schedule(&out);
    art.write_json("schedule.json", &out)?;
    art.write("schedule.txt", text.as_bytes(), true)?;
    print!("{text}");
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SimulationReport {
    pub suite: String,
    pub seed: u64,
    pub memory_mode: MemoryMode,
    pub seeded_records: usize,
    pub uncoached: BenchmarkReport,
    pub coached: Vec<BenchmarkReport>,
    pub store_size: usize,
}

#[derive(Serialize)]
struct EpisodeRow<'a> {
    run: &'a str,
    #[serde(flatten)]
    result: &'a EpisodeResult,
}

pub fn render_simulation(r: &SimulationReport) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "suite {} (seed {}), {} memory, {} seeded records, final store size {}",
        r.suite, r.seed, r.memory_mode, r.seeded_records, r.store_size
    );
    let _ = writeln!(
        s,
        "{:<12} {:>8} {:>9} {:>12} {:>11} {:>7}",
        "run", "episodes", "successes", "success_rate", "mean_steps", "advice"
    );
    let mut row = |name: &str, b: &BenchmarkReport| {
        let _ = writeln!(
            s,
            "{:<12} {:>8} {:>9} {:>12.4} {:>11.2} {:>7}",
            name, b.episodes, b.successes, b.success_rate, b.mean_steps, b.advice_received
        );
    };
    row("uncoached", &r.uncoached);
    for (i, b) in r.coached.iter().enumerate() {
        row(&format!("coached-{}", i + 1), b);
    }
    if let Some(first) = r.coached.first() {
        let _ = writeln!(s, "success_rate change {:+.4}", first.success_rate - r.uncoached.success_rate);
    }
    s
}

fn simulate(a: &SimulateArgs, cfg: &SidecarConfig, seed: Option<u64>, art: &mut Artifacts) -> Result<()> {
    let suite = load_suite(&a.suite, seed, art)?;
    if let Some(p) = cfg.snapshot_path.as_deref().filter(|p| p.exists()) {
        art.note_input(p)?;
    }
    let passes = a.passes.unwrap_or(match cfg.memory_mode {
        MemoryMode::Frozen => 1,
        MemoryMode::Dynamic => 2,
    });
    if passes == 0 {
        bail!("--passes must be positive");
    }
    let seeded = match a.memory {
        MemoryInit::Seeded => true,
        MemoryInit::Empty => false,
        MemoryInit::Auto => cfg.memory_mode == MemoryMode::Frozen,
    };
    let sidecar = Arc::new(build_sidecar(cfg.clone())?);
    let seeded_records = if seeded { suite.seed_memory(&sidecar)? } else { 0 };

    let (uncoached, plain) = suite.report(None)?;
    let mut rows: Vec<(String, EpisodeResult)> = plain.into_iter().map(|r| ("uncoached".to_string(), r)).collect();
    let mut coached = Vec::new();
    for pass in 1..=passes {
        let (report, results) = suite.report(Some(sidecar.as_ref()))?;
        rows.extend(results.into_iter().map(|r| (format!("coached-{pass}"), r)));
        coached.push(report);
    }
    let report = SimulationReport {
        suite: suite.config.name.clone(),
        seed: suite.config.seed,
        memory_mode: cfg.memory_mode,
        seeded_records,
        uncoached,
        coached,
        store_size: sidecar.store_len(),
    };
    art.write_json("report.json", &report)?;
    art.write_jsonl("episodes.jsonl", rows.iter().map(|(run, result)| EpisodeRow { run, result }))?;
    if let Some(d) = art.dir().map(Path::to_path_buf) {
        art.write_json("suite.json", &suite.config)?;
        sidecar.snapshot_to(&d.join("memory.snap"))?;
        art.adopt("memory.snap", true)?;
    }
    let text = render_simulation(&report);
    art.write("report.txt", text.as_bytes(), true)?;
    print!("{text}");
    Ok(())
}

/// Prints the tables stored in a run directory.
pub fn report(dir: &Path) -> Result<()> {
    let sim = dir.join("report.json");
    let sched = dir.join("schedule.json");
    if sim.exists() {
        let r: SimulationReport = serde_json::from_str(&std::fs::read_to_string(&sim)?)
            .with_context(|| format!("{} is not a simulation report", sim.display()))?;
        print!("{}", render_simulation(&r));
    } else if sched.exists() {
        let r: ScheduleOutput = serde_json::from_str(&std::fs::read_to_string(&sched)?)
            .with_context(|| format!("{} is not a schedule report", sched.display()))?;
        print!("{}", render_schedule(&r));
    } else {
        bail!("{} holds neither report.json nor schedule.json", dir.display());
    }
    Ok(())
}
