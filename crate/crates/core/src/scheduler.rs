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

//! Evaluation job scheduling: list scheduling (LPT or FIFO) over parallel
//! workers, a brute-force optimum for small instances, and the
//! subdomain-level refill queue.
//!
//! The dispatcher only talks to an [`Executor`]; [`SimExecutor`] replays
//! `actual_runtime_s` on a virtual clock so every schedule is exact and
//! deterministic.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

pub const REFERENCE_JOBS: usize = 643;
pub const REFERENCE_JOB_SECONDS: f64 = 460.0;
pub const REFERENCE_WORKERS: usize = 5;
pub const REFERENCE_CLAIMED_HOURS: f64 = 14.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Job {
    pub job_id: String,
    #[serde(default)]
    pub subdomain: String,
    pub est_runtime_s: f64,
    pub actual_runtime_s: f64,
}

impl Job {
    pub fn new(id: impl Into<String>, subdomain: impl Into<String>, est: f64, actual: f64) -> Self {
        Job { job_id: id.into(), subdomain: subdomain.into(), est_runtime_s: est, actual_runtime_s: actual }
    }

    /// Estimate and actual both equal to `runtime`.
    pub fn exact(id: impl Into<String>, runtime: f64) -> Self {
        Job::new(id, "", runtime, runtime)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    Lpt,
    Fifo,
}

impl std::str::FromStr for Policy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "lpt" => Ok(Policy::Lpt),
            "fifo" => Ok(Policy::Fifo),
            o => Err(format!("unknown policy '{o}' (expected lpt or fifo)")),
        }
    }
}

impl std::fmt::Display for Policy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Policy::Lpt => "lpt",
            Policy::Fifo => "fifo",
        })
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ScheduleError {
    #[error("at least one worker is required")]
    NoWorkers,
    #[error("no jobs to schedule")]
    NoJobs,
    #[error("job {0}: runtimes must be finite and positive")]
    BadRuntime(String),
    #[error("instance too large for exhaustive search ({jobs} jobs, {workers} workers; limit 12 and 3)")]
    TooLarge { jobs: usize, workers: usize },
    #[error("job file line {line}: {message}")]
    JobFile { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Slot {
    pub job_id: String,
    pub start_s: f64,
    pub end_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleResult {
    pub policy: String,
    pub workers: usize,
    /// One ordered timeline per worker.
    pub timeline: Vec<Vec<Slot>>,
    pub makespan_s: f64,
}

impl ScheduleResult {
    pub fn slots(&self) -> impl Iterator<Item = &Slot> {
        self.timeline.iter().flatten()
    }

    pub fn busy_s(&self) -> f64 {
        self.slots().map(|s| s.end_s - s.start_s).sum()
    }

    pub fn utilization(&self) -> f64 {
        if self.makespan_s <= 0.0 {
            return 0.0;
        }
        self.busy_s() / (self.workers as f64 * self.makespan_s)
    }

    /// Nearest-rank percentile of job completion times.
    pub fn completion_percentile(&self, p: f64) -> f64 {
        let mut ends: Vec<f64> = self.slots().map(|s| s.end_s).collect();
        if ends.is_empty() {
            return 0.0;
        }
        ends.sort_by(f64::total_cmp);
        let rank = ((p / 100.0) * ends.len() as f64).ceil().max(1.0) as usize;
        ends[rank.min(ends.len()) - 1]
    }

    /// No overlap per worker, and every slot non-negative.
    pub fn check(&self) -> Result<(), String> {
        for (w, line) in self.timeline.iter().enumerate() {
            let mut t = 0.0;
            for s in line {
                if s.start_s < t || s.end_s < s.start_s {
                    return Err(format!("worker {w}: slot {} overlaps or is inverted", s.job_id));
                }
                t = s.end_s;
            }
        }
        let max_end = self.slots().map(|s| s.end_s).fold(0.0, f64::max);
        if max_end != self.makespan_s {
            return Err("makespan differs from last completion".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Completion {
    pub worker: usize,
    pub at_s: f64,
}

/// What the dispatcher needs from whatever actually runs jobs.
pub trait Executor {
    fn launch(&mut self, worker: usize, job: &Job, now_s: f64);
    /// Blocks until the next in-flight job ends. `None` when idle.
    fn wait(&mut self) -> Option<Completion>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Pending {
    at_s: f64,
    worker: usize,
}

impl Eq for Pending {}

impl Ord for Pending {
    // min-heap on (time, worker)
    fn cmp(&self, o: &Self) -> Ordering {
        o.at_s.total_cmp(&self.at_s).then(o.worker.cmp(&self.worker))
    }
}

impl PartialOrd for Pending {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

/// Virtual-clock executor using `actual_runtime_s`.
#[derive(Debug, Default)]
pub struct SimExecutor {
    heap: BinaryHeap<Pending>,
}

impl Executor for SimExecutor {
    fn launch(&mut self, worker: usize, job: &Job, now_s: f64) {
        self.heap.push(Pending { at_s: now_s + job.actual_runtime_s, worker });
    }

    fn wait(&mut self) -> Option<Completion> {
        self.heap.pop().map(|p| Completion { worker: p.worker, at_s: p.at_s })
    }
}

fn validate(jobs: &[Job], workers: usize) -> Result<(), ScheduleError> {
    if workers == 0 {
        return Err(ScheduleError::NoWorkers);
    }
    if jobs.is_empty() {
        return Err(ScheduleError::NoJobs);
    }
    for j in jobs {
        let ok = |x: f64| x.is_finite() && x > 0.0;
        if !ok(j.est_runtime_s) || !ok(j.actual_runtime_s) {
            return Err(ScheduleError::BadRuntime(j.job_id.clone()));
        }
    }
    Ok(())
}

/// Global queue order: longest estimate first (ties by job_id) or input order.
pub fn queue_order(jobs: &[Job], policy: Policy) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..jobs.len()).collect();
    if policy == Policy::Lpt {
        idx.sort_by(|&a, &b| {
            jobs[b].est_runtime_s.total_cmp(&jobs[a].est_runtime_s).then_with(|| jobs[a].job_id.cmp(&jobs[b].job_id))
        });
    }
    idx
}

/// Single dispatcher: fills all workers, then hands the head of the queue to
/// whichever worker reports completion first (lowest index on ties).
pub fn dispatch(
    jobs: &[Job],
    order: &[usize],
    workers: usize,
    exec: &mut dyn Executor,
    policy_name: &str,
) -> ScheduleResult {
    let mut timeline: Vec<Vec<Slot>> = vec![Vec::new(); workers];
    let mut queue = order.iter().copied();
    let mut now = 0.0;
    let mut in_flight = 0;
    let mut start_next = |w: usize, now: f64, exec: &mut dyn Executor, timeline: &mut Vec<Vec<Slot>>| {
        queue.next().map(|j| {
            let job = &jobs[j];
            exec.launch(w, job, now);
            timeline[w].push(Slot { job_id: job.job_id.clone(), start_s: now, end_s: now + job.actual_runtime_s });
        })
    };
    for w in 0..workers {
        if start_next(w, now, exec, &mut timeline).is_some() {
            in_flight += 1;
        }
    }
    while in_flight > 0 {
        let c = exec.wait().expect("executor lost an in-flight job");
        in_flight -= 1;
        now = c.at_s;
        if start_next(c.worker, now, exec, &mut timeline).is_some() {
            in_flight += 1;
        }
    }
    let makespan_s = timeline.iter().flatten().map(|s| s.end_s).fold(0.0, f64::max);
    ScheduleResult { policy: policy_name.to_string(), workers, timeline, makespan_s }
}

pub fn schedule_list(jobs: &[Job], workers: usize, policy: Policy) -> Result<ScheduleResult, ScheduleError> {
    validate(jobs, workers)?;
    let order = queue_order(jobs, policy);
    Ok(dispatch(jobs, &order, workers, &mut SimExecutor::default(), &policy.to_string()))
}

/// Exact minimum makespan by exhaustive assignment (≤ 12 jobs, ≤ 3 workers).
pub fn brute_force_opt(runtimes: &[f64], workers: usize) -> Result<f64, ScheduleError> {
    if workers == 0 {
        return Err(ScheduleError::NoWorkers);
    }
    if runtimes.is_empty() {
        return Err(ScheduleError::NoJobs);
    }
    if runtimes.len() > 12 || workers > 3 {
        return Err(ScheduleError::TooLarge { jobs: runtimes.len(), workers });
    }
    fn go(i: usize, rt: &[f64], loads: &mut [f64], best: &mut f64) {
        if i == rt.len() {
            let m = loads.iter().copied().fold(0.0, f64::max);
            if m < *best {
                *best = m;
            }
            return;
        }
        for w in 0..loads.len() {
            // Empty workers are interchangeable; try only the first.
            if loads[w] == 0.0 && loads[..w].contains(&0.0) {
                continue;
            }
            loads[w] += rt[i];
            if loads[w] < *best {
                go(i + 1, rt, loads, best);
            }
            loads[w] -= rt[i];
        }
    }
    let mut loads = vec![0.0; workers];
    let mut best = f64::INFINITY;
    go(0, runtimes, &mut loads, &mut best);
    Ok(best)
}

/// Graham's list-scheduling bound for LPT.
pub fn graham_factor(workers: usize) -> f64 {
    4.0 / 3.0 - 1.0 / (3.0 * workers as f64)
}

pub fn lower_bound(jobs: &[Job], workers: usize) -> f64 {
    let total: f64 = jobs.iter().map(|j| j.actual_runtime_s).sum();
    let longest = jobs.iter().map(|j| j.actual_runtime_s).fold(0.0, f64::max);
    (total / workers as f64).max(longest)
}

/// Subdomain-level schedule: tasks of one subdomain run back to back on one
/// worker; subdomains are dispatched in LPT order of their summed estimates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DynamicRun {
    pub schedule: ScheduleResult,
    /// Subdomain name → completion time.
    pub completed_s: BTreeMap<String, f64>,
    pub refill: bool,
}

/// Groups jobs by subdomain, keeping first-seen order of subdomains and of
/// tasks within one.
pub fn group_by_subdomain(jobs: &[Job]) -> Vec<(String, Vec<Job>)> {
    let mut out: Vec<(String, Vec<Job>)> = Vec::new();
    for j in jobs {
        match out.iter_mut().find(|(s, _)| *s == j.subdomain) {
            Some((_, v)) => v.push(j.clone()),
            None => out.push((j.subdomain.clone(), vec![j.clone()])),
        }
    }
    out
}

pub fn dynamic_queue_run(
    groups: &[(String, Vec<Job>)],
    width: usize,
    refill: bool,
) -> Result<DynamicRun, ScheduleError> {
    let units: Vec<Job> = groups
        .iter()
        .map(|(name, tasks)| {
            Job::new(
                name.clone(),
                name.clone(),
                tasks.iter().map(|t| t.est_runtime_s).sum(),
                tasks.iter().map(|t| t.actual_runtime_s).sum(),
            )
        })
        .collect();
    validate(&units, width)?;
    let order = queue_order(&units, Policy::Lpt);
    let schedule = if refill {
        dispatch(&units, &order, width, &mut SimExecutor::default(), "lpt-refill")
    } else {
        batch_synchronous(&units, &order, width)
    };
    let completed_s = schedule.slots().map(|s| (s.job_id.clone(), s.end_s)).collect();
    Ok(DynamicRun { schedule, completed_s, refill })
}

/// Batches of `width` start together; the next batch waits for the slowest.
fn batch_synchronous(units: &[Job], order: &[usize], width: usize) -> ScheduleResult {
    let mut timeline: Vec<Vec<Slot>> = vec![Vec::new(); width];
    let mut t = 0.0;
    for batch in order.chunks(width) {
        let mut end = t;
        for (w, &j) in batch.iter().enumerate() {
            let e = t + units[j].actual_runtime_s;
            timeline[w].push(Slot { job_id: units[j].job_id.clone(), start_s: t, end_s: e });
            end = f64::max(end, e);
        }
        t = end;
    }
    ScheduleResult { policy: "lpt-batch".into(), workers: width, timeline, makespan_s: t }
}

/// The makespan arithmetic for 643 identical 460 s jobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceRun {
    pub sequential_s: f64,
    pub five_worker_s: f64,
    pub lower_bound_s: f64,
    pub claimed_hours: f64,
}

pub fn reference_run() -> ReferenceRun {
    let jobs: Vec<Job> =
        (0..REFERENCE_JOBS).map(|i| Job::exact(format!("task-{i:03}"), REFERENCE_JOB_SECONDS)).collect();
    let seq = schedule_list(&jobs, 1, Policy::Lpt).expect("valid instance");
    let par = schedule_list(&jobs, REFERENCE_WORKERS, Policy::Lpt).expect("valid instance");
    ReferenceRun {
        sequential_s: seq.makespan_s,
        five_worker_s: par.makespan_s,
        lower_bound_s: lower_bound(&jobs, REFERENCE_WORKERS),
        claimed_hours: REFERENCE_CLAIMED_HOURS,
    }
}

impl ReferenceRun {
    pub fn render(&self) -> String {
        let h = |s: f64| s / 3600.0;
        let mut out = String::new();
        let _ = writeln!(
            out,
            "sequential, 1 worker         {:>10.0} s  {:>6.2} h",
            self.sequential_s,
            h(self.sequential_s)
        );
        let _ = writeln!(
            out,
            "identical jobs, 5 workers    {:>10.0} s  {:>6.2} h",
            self.five_worker_s,
            h(self.five_worker_s)
        );
        let _ = writeln!(
            out,
            "analytic lower bound (sum/5) {:>10.0} s  {:>6.2} h",
            self.lower_bound_s,
            h(self.lower_bound_s)
        );
        let _ = writeln!(out, "claimed with async LPT       {:>10} <  {:>6.2} h", "", self.claimed_hours);
        if self.claimed_hours < h(self.lower_bound_s) {
            let _ = writeln!(
                out,
                "note: the claim is below the identical-job lower bound; it needs runtimes shorter than 460 s on average"
            );
        }
        out
    }
}

pub fn parse_job_file(text: &str) -> Result<Vec<Job>, ScheduleError> {
    let mut jobs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let job: Job =
            serde_json::from_str(line).map_err(|e| ScheduleError::JobFile { line: i + 1, message: e.to_string() })?;
        jobs.push(job);
    }
    Ok(jobs)
}

/// Human-readable comparison table.
pub fn render_report(results: &[&ScheduleResult]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<12} {:>7} {:>12} {:>9} {:>12} {:>12}",
        "policy", "workers", "makespan_s", "util", "p50_end_s", "p95_end_s"
    );
    for r in results {
        let _ = writeln!(
            out,
            "{:<12} {:>7} {:>12.1} {:>8.1}% {:>12.1} {:>12.1}",
            r.policy,
            r.workers,
            r.makespan_s,
            100.0 * r.utilization(),
            r.completion_percentile(50.0),
            r.completion_percentile(95.0)
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn jobs(rt: &[f64]) -> Vec<Job> {
        rt.iter().enumerate().map(|(i, &r)| Job::exact(format!("j{i:02}"), r)).collect()
    }

    #[test]
    fn reference_run_numbers() {
        let p = reference_run();
        assert_eq!(p.sequential_s, 295_780.0);
        assert_eq!(p.five_worker_s, 129.0 * 460.0);
        assert_eq!(p.five_worker_s, 59_340.0);
        assert!((p.lower_bound_s - 643.0 * 460.0 / 5.0).abs() < 1e-9);
        assert!(p.lower_bound_s / 3600.0 > 16.4);
        assert!(p.render().contains("lower bound"));
    }

    #[test]
    fn small_lpt_example() {
        // By hand: 8|7, 6 joins 7 (13), 5 joins 8 (13), 4 joins worker 0 on
        // the tie (17). The optimum splits 8+7 against 6+5+4.
        let r = schedule_list(&jobs(&[8.0, 7.0, 6.0, 5.0, 4.0]), 2, Policy::Lpt).unwrap();
        assert_eq!(r.makespan_s, 17.0);
        let opt = brute_force_opt(&[8.0, 7.0, 6.0, 5.0, 4.0], 2).unwrap();
        assert_eq!(opt, 15.0);
        assert!(r.makespan_s <= graham_factor(2) * opt);
        r.check().unwrap();
    }

    #[test]
    fn brute_force_examples() {
        assert_eq!(brute_force_opt(&[7.5], 3).unwrap(), 7.5);
        assert_eq!(brute_force_opt(&[3.0, 3.0, 3.0], 3).unwrap(), 3.0);
        assert_eq!(brute_force_opt(&[5.0, 4.0, 3.0, 3.0, 3.0], 2).unwrap(), 9.0);
        assert!(matches!(brute_force_opt(&[1.0; 13], 2), Err(ScheduleError::TooLarge { .. })));
        assert!(matches!(brute_force_opt(&[1.0; 3], 4), Err(ScheduleError::TooLarge { .. })));
    }

    #[test]
    fn fifo_keeps_input_order_and_lpt_uses_estimates() {
        let js = vec![Job::new("a", "", 1.0, 5.0), Job::new("b", "", 9.0, 1.0)];
        let f = schedule_list(&js, 1, Policy::Fifo).unwrap();
        assert_eq!(f.timeline[0][0].job_id, "a");
        let l = schedule_list(&js, 1, Policy::Lpt).unwrap();
        assert_eq!(l.timeline[0][0].job_id, "b");
        assert_eq!(l.timeline[0][1].start_s, 1.0);
    }

    #[test]
    fn invalid_inputs() {
        assert_eq!(schedule_list(&jobs(&[1.0]), 0, Policy::Lpt).unwrap_err(), ScheduleError::NoWorkers);
        assert_eq!(schedule_list(&[], 2, Policy::Lpt).unwrap_err(), ScheduleError::NoJobs);
        assert!(matches!(schedule_list(&jobs(&[f64::NAN]), 1, Policy::Lpt), Err(ScheduleError::BadRuntime(_))));
    }

    #[test]
    fn equal_subdomains_pack_perfectly() {
        let groups: Vec<(String, Vec<Job>)> = (0..15).map(|i| (format!("d{i}"), jobs(&[30.0, 70.0]))).collect();
        let r = dynamic_queue_run(&groups, 5, true).unwrap();
        assert_eq!(r.schedule.makespan_s, 300.0);
        assert_eq!(r.completed_s.len(), 15);
    }

    #[test]
    fn long_subdomain_dominates() {
        let mut groups: Vec<(String, Vec<Job>)> = (0..6).map(|i| (format!("d{i}"), jobs(&[10.0]))).collect();
        groups.push(("big".into(), jobs(&[20.0])));
        // total 80, total/5 = 16 < 20
        let r = dynamic_queue_run(&groups, 5, true).unwrap();
        let total: f64 = 80.0;
        assert_eq!(r.schedule.makespan_s, f64::max(total / 5.0, 20.0));
        assert_eq!(r.completed_s["big"], 20.0);
    }

    #[test]
    fn job_file_round_trip() {
        let text = "{\"job_id\":\"a\",\"subdomain\":\"x\",\"est_runtime_s\":2,\"actual_runtime_s\":3}\n# c\n\n";
        let js = parse_job_file(text).unwrap();
        assert_eq!(js, vec![Job::new("a", "x", 2.0, 3.0)]);
        assert!(matches!(parse_job_file("{}"), Err(ScheduleError::JobFile { line: 1, .. })));
    }

    #[test]
    fn report_percentiles() {
        let r = schedule_list(&jobs(&[1.0, 2.0, 3.0, 4.0]), 1, Policy::Fifo).unwrap();
        assert_eq!(r.completion_percentile(50.0), 3.0);
        assert_eq!(r.completion_percentile(95.0), 10.0);
        assert!((r.utilization() - 1.0).abs() < 1e-12);
        assert!(render_report(&[&r]).contains("fifo"));
    }

    fn arb_jobs(max: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(1u32..100, 1..=max).prop_map(|v| v.into_iter().map(f64::from).collect())
    }

    proptest! {
        #[test]
        fn graham_bound_and_lower_bounds(rt in arb_jobs(12), m in 1usize..=3) {
            let js = jobs(&rt);
            let lpt = schedule_list(&js, m, Policy::Lpt).unwrap();
            let opt = brute_force_opt(&rt, m).unwrap();
            prop_assert!(lpt.makespan_s <= graham_factor(m) * opt + 1e-9);
            prop_assert!(opt <= lpt.makespan_s + 1e-9);
            let fifo = schedule_list(&js, m, Policy::Fifo).unwrap();
            for r in [&lpt, &fifo] {
                prop_assert!(r.makespan_s + 1e-9 >= lower_bound(&js, m));
                r.check().unwrap();
                let mut ids: Vec<&str> = r.slots().map(|s| s.job_id.as_str()).collect();
                ids.sort();
                let mut want: Vec<&str> = js.iter().map(|j| j.job_id.as_str()).collect();
                want.sort();
                prop_assert_eq!(ids, want);
                prop_assert!((r.busy_s() - rt.iter().sum::<f64>()).abs() < 1e-9);
            }
        }

        #[test]
        fn refill_dominates_batching(sizes in proptest::collection::vec(arb_jobs(4), 1..20), width in 1usize..7) {
            let groups: Vec<(String, Vec<Job>)> =
                sizes.iter().enumerate().map(|(i, rt)| (format!("d{i:02}"), jobs(rt))).collect();
            let on = dynamic_queue_run(&groups, width, true).unwrap();
            let off = dynamic_queue_run(&groups, width, false).unwrap();
            prop_assert!(on.schedule.makespan_s <= off.schedule.makespan_s + 1e-9);
            off.schedule.check().unwrap();
        }
    }
}
