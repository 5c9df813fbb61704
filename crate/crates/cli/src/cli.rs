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

//! Argument definitions. Subcommand arguments are serializable so a run
//! can be replayed from `run.json`.

use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use webcoach_core::config::MemoryMode;
use webcoach_core::scheduler::Policy;

#[derive(Debug, Parser)]
#[command(name = "webcoach", version, about = "Coaching sidecar for web-navigation agents")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Global {
    /// Sidecar config file (JSON). Falls back to $WEBCOACH_CONFIG.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Directory for outputs and the resolved run.json.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, value_parser = parse_mode)]
    pub mode: Option<MemoryMode>,
    /// Config override as dotted.key=value; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// More log output on stderr (-v, -vv).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

fn parse_mode(s: &str) -> Result<MemoryMode, String> {
    s.parse().map_err(|e: webcoach_core::config::ConfigError| e.to_string())
}

fn parse_policy(s: &str) -> Result<Policy, String> {
    s.parse()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Subcommand)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum Command {
    /// Parse a raw step log into the canonical trajectory.
    Ingest(IngestArgs),
    /// Condense a step log into a memory record.
    Condense(CondenseArgs),
    /// Build a memory snapshot from records or from a simulated suite.
    Seed(SeedArgs),
    /// Query a memory snapshot.
    Search(SearchArgs),
    /// Retrieval latency across k on a synthetic store.
    BenchRetrieval(BenchArgs),
    /// Run the HTTP sidecar.
    Serve(ServeArgs),
    /// Simulate list scheduling of evaluation jobs.
    Schedule(ScheduleArgs),
    /// Run the synthetic benchmark with and without coaching.
    Simulate(SimulateArgs),
    /// Print the tables for a finished run directory.
    Report(ReportArgs),
    /// Rerun a recorded run and compare its outputs byte for byte.
    Replay(ReplayArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Ingest(_) => "ingest",
            Command::Condense(_) => "condense",
            Command::Seed(_) => "seed",
            Command::Search(_) => "search",
            Command::BenchRetrieval(_) => "bench-retrieval",
            Command::Serve(_) => "serve",
            Command::Schedule(_) => "schedule",
            Command::Simulate(_) => "simulate",
            Command::Report(_) => "report",
            Command::Replay(_) => "replay",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Args)]
pub struct IngestArgs {
    /// Step log file.
    #[arg(long)]
    pub log: PathBuf,
    /// Adapter descriptor (JSON); canonical layout when absent.
    #[arg(long)]
    pub adapter: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Args)]
pub struct CondenseArgs {
    #[arg(long)]
    pub log: PathBuf,
    #[arg(long)]
    pub adapter: Option<PathBuf>,
    #[arg(long)]
    pub episode_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Args)]
pub struct SeedArgs {
    /// Line-delimited memory records.
    #[arg(long, conflicts_with = "suite", required_unless_present = "suite")]
    pub input: Option<PathBuf>,
    /// Suite file, or `calibration`, whose memory tasks are run uncoached
    /// and condensed.
    #[arg(long)]
    pub suite: Option<String>,
    /// Snapshot to write; defaults to memory.snap in --out, then to the
    /// configured snapshot path.
    #[arg(long)]
    pub snapshot: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Success,
    Failure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Args)]
pub struct SearchArgs {
    #[arg(long, short)]
    pub query: String,
    /// Results to return; the config's k when absent.
    #[arg(long)]
    pub k: Option<usize>,
    /// Task ids to exclude; repeatable or comma-separated.
    #[arg(long = "exclude-task", value_delimiter = ',')]
    pub exclude_task: Vec<String>,
    #[arg(long)]
    pub domain: Option<String>,
    #[arg(long, value_enum)]
    pub outcome: Option<Outcome>,
    /// Snapshot to search; the configured snapshot path when absent.
    #[arg(long)]
    pub snapshot: Option<PathBuf>,
}

/// A set of k values: `5`, `1..10` (inclusive) or `1,3,5`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct KSet(pub Vec<usize>);

impl FromStr for KSet {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let s = s.trim();
        let ks: Vec<usize> = if let Some((a, b)) = s.split_once("..") {
            let a: usize = a.trim().parse().map_err(|_| format!("bad range start in '{s}'"))?;
            let b: usize = b.trim_start_matches('=').trim().parse().map_err(|_| format!("bad range end in '{s}'"))?;
            if a > b {
                return Err(format!("empty range '{s}'"));
            }
            (a..=b).collect()
        } else {
            s.split(',')
                .map(|p| p.trim().parse::<usize>().map_err(|_| format!("bad k '{p}'")))
                .collect::<Result<_, _>>()?
        };
        if ks.is_empty() || ks.contains(&0) {
            return Err(format!("k values must be positive: '{s}'"));
        }
        Ok(KSet(ks))
    }
}

impl TryFrom<String> for KSet {
    type Error = String;
    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

impl From<KSet> for String {
    fn from(k: KSet) -> String {
        k.0.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Args)]
pub struct BenchArgs {
    #[arg(long, default_value_t = 600)]
    pub records: usize,
    #[arg(long, default_value_t = 1536)]
    pub dim: usize,
    #[arg(long, default_value = "1..10")]
    pub k: KSet,
    #[arg(long, default_value_t = 200)]
    pub repeats: usize,
    /// Time the graph index instead of the exact scan.
    #[arg(long)]
    pub ann: bool,
    /// Also measure ANN recall at the largest k over this many queries.
    #[arg(long, default_value_t = 0)]
    pub recall_queries: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8377")]
    pub addr: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Args)]
pub struct ScheduleArgs {
    /// Line-delimited jobs: {job_id, subdomain, est_runtime_s, actual_runtime_s}.
    #[arg(long, conflicts_with = "reference", required_unless_present = "reference")]
    pub jobs: Option<PathBuf>,
    /// 643 identical 460 s jobs instead of a job file.
    #[arg(long)]
    pub reference: bool,
    #[arg(long, default_value_t = 5)]
    pub workers: usize,
    #[arg(long, default_value = "lpt", value_parser = parse_policy)]
    pub policy: Policy,
    /// Further policies to compare against; repeatable.
    #[arg(long, value_parser = parse_policy)]
    pub compare: Vec<Policy>,
    /// Also schedule whole subdomains, with immediate refill and in
    /// synchronous batches.
    #[arg(long)]
    pub subdomains: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum, Default)]
#[serde(rename_all = "snake_case")]
pub enum MemoryInit {
    /// Seeded for frozen memory, empty for dynamic memory.
    #[default]
    Auto,
    Seeded,
    Empty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Args)]
pub struct SimulateArgs {
    /// Suite file, or `calibration` for the bundled trap suite.
    #[arg(long, default_value = "calibration")]
    pub suite: String,
    /// Coached passes over the suite; 1 for frozen memory, 2 for dynamic.
    #[arg(long)]
    pub passes: Option<usize>,
    /// Whether coached runs start from memory built on the suite's memory
    /// tasks.
    #[arg(long, value_enum, default_value_t = MemoryInit::Auto)]
    pub memory: MemoryInit,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, Args)]
pub struct ReportArgs {
    /// Run directory written by simulate or schedule.
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Args)]
pub struct ReplayArgs {
    /// A run.json, or the directory holding one.
    pub run: PathBuf,
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn k_sets() {
        assert_eq!("1..10".parse::<KSet>().unwrap().0, (1..=10).collect::<Vec<_>>());
        assert_eq!("1..=3".parse::<KSet>().unwrap().0, vec![1, 2, 3]);
        assert_eq!("5".parse::<KSet>().unwrap().0, vec![5]);
        assert_eq!("2,4".parse::<KSet>().unwrap().0, vec![2, 4]);
        for bad in ["0", "3..1", "a", "1..x", ""] {
            assert!(bad.parse::<KSet>().is_err(), "{bad}");
        }
    }

    #[test]
    fn commands_round_trip_through_json() {
        let cli =
            Cli::try_parse_from(["webcoach", "search", "-q", "kettle", "--exclude-task", "T1,T2", "--k", "3"]).unwrap();
        let text = serde_json::to_string(&cli.command).unwrap();
        assert!(text.contains("\"name\":\"search\""));
        let back: Command = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cli.command);
        let cli = Cli::try_parse_from(["webcoach", "bench-retrieval", "--k", "1..4"]).unwrap();
        let back: Command = serde_json::from_str(&serde_json::to_string(&cli.command).unwrap()).unwrap();
        assert_eq!(back, cli.command);
    }
}
