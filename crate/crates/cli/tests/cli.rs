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

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn webcoach(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_webcoach"))
        .args(args)
        .current_dir(dir)
        .env_remove("WEBCOACH_CONFIG")
        .env_remove("WEBCOACH_SNAPSHOT")
        .env_remove("WEBCOACH_MODE")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = webcoach(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn fixture(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name).display().to_string()
}

fn jsonl(path: &Path) -> Vec<Value> {
    std::fs::read_to_string(path).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

fn run_record(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("run.json")).unwrap()).unwrap()
}

#[test]
fn usage_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    for args in
        [&["frobnicate"][..], &["search"], &["bench-retrieval", "--k", "0"], &["schedule", "--policy", "random"]]
    {
        let out = webcoach(tmp.path(), args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn runtime_errors_exit_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    let out = webcoach(tmp.path(), &["ingest", "--log", "missing.jsonl"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
    let out = webcoach(tmp.path(), &["--set", "no_such_key=1", "schedule", "--reference"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn ingest_and_condense_a_step_log() {
    let tmp = tempfile::tempdir().unwrap();
    let log = fixture("looping.steps.jsonl");
    let text = ok(tmp.path(), &["ingest", "--log", &log, "--out", "ing"]);
    assert!(text.contains("T7: 6 steps"), "{text}");
    let traj: Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("ing/trajectory.json")).unwrap()).unwrap();
    assert_eq!(traj["steps"].as_array().unwrap().len(), 6);
    assert_eq!(traj["declared_success"], Value::Bool(false));

    ok(tmp.path(), &["--set", "embedding_dim=32", "condense", "--log", &log, "--episode-id", "ep-1", "--out", "cond"]);
    let rec: Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("cond/condensed.json")).unwrap()).unwrap();
    assert_eq!(rec["source"]["episode_id"], "ep-1");
    assert_eq!(rec["embedding"].as_array().unwrap().len(), 32);
    assert_eq!(run_record(&tmp.path().join("cond"))["config"]["embedding_dim"], 32);
}

#[test]
fn search_honours_k_and_exclusions() {
    let tmp = tempfile::tempdir().unwrap();
    ok(tmp.path(), &["--set", "embedding_dim=64", "seed", "--suite", "calibration", "--snapshot", "mem.snap"]);
    assert!(tmp.path().join("mem.snap").exists());

    let args = ["--set", "embedding_dim=64", "search", "-q", "sponsored result loop", "--snapshot", "mem.snap"];
    ok(tmp.path(), &[&args[..], &["--k", "5", "--out", "all"]].concat());
    let all = jsonl(&tmp.path().join("all/results.jsonl"));
    assert_eq!(all.len(), 5);
    let top_task = all[0]["task_id"].as_str().unwrap().to_string();

    ok(tmp.path(), &[&args[..], &["--k", "5", "--exclude-task", &top_task, "--out", "ex"]].concat());
    let ex = jsonl(&tmp.path().join("ex/results.jsonl"));
    assert!(!ex.is_empty() && ex.len() <= 5);
    assert!(ex.iter().all(|h| h["task_id"] != top_task.as_str()));

    ok(tmp.path(), &[&args[..], &["--k", "40", "--outcome", "failure", "--out", "fail"]].concat());
    let fail = jsonl(&tmp.path().join("fail/results.jsonl"));
    assert!(!fail.is_empty());
    assert!(fail.iter().all(|h| h["final_success"] == Value::Bool(false)));
}

#[test]
fn bench_retrieval_small() {
    let tmp = tempfile::tempdir().unwrap();
    let text = ok(
        tmp.path(),
        &[
            "bench-retrieval",
            "--records",
            "120",
            "--dim",
            "32",
            "--k",
            "1..4",
            "--repeats",
            "10",
            "--recall-queries",
            "5",
            "--ann",
            "--out",
            "b",
        ],
    );
    assert!(text.contains("recall@4"), "{text}");
    let rows = jsonl(&tmp.path().join("b/latency.jsonl"));
    assert_eq!(rows.iter().map(|r| r["k"].as_u64().unwrap()).collect::<Vec<_>>(), vec![1, 2, 3, 4]);
    let rec = run_record(&tmp.path().join("b"));
    assert!(rec["outputs"].as_array().unwrap().iter().all(|o| o["replayable"] == Value::Bool(false)));
}

#[test]
fn reference_schedule_arithmetic() {
    let tmp = tempfile::tempdir().unwrap();
    let text = ok(tmp.path(), &["schedule", "--reference", "--compare", "fifo"]);
    assert!(text.contains("295780"), "{text}");
    assert!(text.contains("59340"), "{text}");
    assert!(text.lines().any(|l| l.starts_with("fifo")), "{text}");
}

#[test]
fn job_file_schedule_with_subdomains() {
    let tmp = tempfile::tempdir().unwrap();
    let jobs: String = (0..12)
        .map(|i| {
            format!(
                "{{\"job_id\":\"j{i}\",\"subdomain\":\"s{}\",\"est_runtime_s\":{},\"actual_runtime_s\":{}}}\n",
                i % 3,
                100 + i * 10,
                90 + i * 12
            )
        })
        .collect();
    std::fs::write(tmp.path().join("jobs.jsonl"), jobs).unwrap();
    let text = ok(
        tmp.path(),
        &["schedule", "--jobs", "jobs.jsonl", "--workers", "3", "--compare", "fifo", "--subdomains", "--out", "s"],
    );
    assert!(text.contains("12 jobs"), "{text}");
    assert!(text.contains("subdomain units"), "{text}");
    let rec = run_record(&tmp.path().join("s"));
    assert!(rec["inputs"].as_object().unwrap().contains_key("jobs.jsonl"));
    let report = ok(tmp.path(), &["report", "s"]);
    assert_eq!(report, std::fs::read_to_string(tmp.path().join("s/schedule.txt")).unwrap());
}

#[test]
fn simulate_then_replay_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    ok(tmp.path(), &["--set", "embedding_dim=64", "--seed", "11", "simulate", "--out", "run"]);
    let rec = run_record(&tmp.path().join("run"));
    assert_eq!(rec["command"]["name"], "simulate");
    assert_eq!(rec["seed"], 11);
    for key in ["condenser_sha256", "coach_sha256"] {
        assert_eq!(rec["templates"][key].as_str().unwrap().len(), 64, "{key}");
    }
    let names: Vec<&str> = rec["outputs"].as_array().unwrap().iter().map(|o| o["name"].as_str().unwrap()).collect();
    for f in ["report.json", "episodes.jsonl", "report.txt", "memory.snap"] {
        assert!(names.contains(&f), "{f} missing from {names:?}");
    }

    let text = ok(tmp.path(), &["replay", "run", "--out", "again"]);
    assert!(text.contains("identical"), "{text}");
    for f in names {
        assert_eq!(
            std::fs::read(tmp.path().join("run").join(f)).unwrap(),
            std::fs::read(tmp.path().join("again").join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn replay_detects_tampered_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    ok(tmp.path(), &["schedule", "--reference", "--out", "run"]);
    let path = tmp.path().join("run/run.json");
    let mut rec: Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    rec["outputs"][0]["sha256"] = Value::String("0".repeat(64));
    std::fs::write(&path, serde_json::to_string(&rec).unwrap()).unwrap();
    let out = webcoach(tmp.path(), &["replay", "run/run.json", "--out", "again"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("MISMATCH"));
}

#[test]
fn frozen_simulation_seeds_memory_and_keeps_it() {
    let tmp = tempfile::tempdir().unwrap();
    ok(tmp.path(), &["--set", "embedding_dim=64", "--mode", "frozen", "simulate", "--out", "f"]);
    let report: Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("f/report.json")).unwrap()).unwrap();
    let seeded = report["seeded_records"].as_u64().unwrap();
    assert!(seeded > 0);
    assert_eq!(report["store_size"].as_u64().unwrap(), seeded);
    assert_eq!(report["coached"].as_array().unwrap().len(), 1);
}
