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

mod cli;
mod commands;
mod run;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::Parser;
use tracing_subscriber::EnvFilter;
use webcoach_core::config::SidecarConfig;

use crate::cli::{Cli, Command};
use crate::run::{resolve_config, Artifacts, RunRecord, Templates, RUN_FILE};

fn init_tracing(verbose: u8) {
    let default = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let filter = EnvFilter::try_from_env("WEBCOACH_LOG").unwrap_or_else(|_| EnvFilter::new(default));
    tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr).init();
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    init_tracing(cli.global.verbose);
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    let g = &cli.global;
    match &cli.command {
        Command::Report(a) => {
            let dir = a.dir.clone().or_else(|| g.out.clone()).unwrap_or_else(|| PathBuf::from("."));
            commands::report(&dir)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Replay(a) => replay(&a.run, g.out.clone()),
        Command::Serve(a) => {
            let cfg = resolve_config(g.config.as_deref(), g.mode, g.seed, &g.overrides)?;
            serve(&a.addr, cfg)?;
            Ok(ExitCode::SUCCESS)
        }
        cmd => {
            let cfg = resolve_config(g.config.as_deref(), g.mode, g.seed, &g.overrides)?;
            let mut art = Artifacts::new(g.out.clone())?;
            commands::execute(cmd, &cfg, g.seed, &mut art)?;
            art.finish(cmd, g.seed, &cfg)?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn serve(addr: &str, cfg: SidecarConfig) -> Result<()> {
    let sidecar = Arc::new(webcoach_sidecar::build_sidecar(cfg)?);
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await.with_context(|| format!("cannot bind {addr}"))?;
        eprintln!("listening on http://{}", listener.local_addr()?);
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
        };
        webcoach_sidecar::serve(listener, sidecar, shutdown).await?;
        Ok(())
    })
}

fn replay(path: &Path, out: Option<PathBuf>) -> Result<ExitCode> {
    let file = if path.is_dir() { path.join(RUN_FILE) } else { path.to_path_buf() };
    let record = RunRecord::load(&file)?;
    let source_dir = file.parent().map(Path::to_path_buf).unwrap_or_default();
    let out = out.unwrap_or_else(|| source_dir.join("replay"));
    if out == source_dir {
        bail!("replay output must differ from the recorded directory");
    }
    let mut ok = true;
    if record.templates != Templates::current() {
        println!("MISMATCH prompt templates changed since the run was recorded");
        ok = false;
    }
    for (input, sha) in &record.inputs {
        match std::fs::read(input) {
            Ok(bytes) if run::sha256_hex(&bytes) == *sha => {}
            Ok(_) => {
                println!("MISMATCH input {input} changed");
                ok = false;
            }
            Err(e) => bail!("cannot read recorded input {input}: {e}"),
        }
    }
    let mut art = Artifacts::new(Some(out.clone()))?;
    commands::execute(&record.command, &record.config, record.seed, &mut art)?;
    let fresh = art.finish(&record.command, record.seed, &record.config)?;
    for old in record.outputs.iter().filter(|o| o.replayable) {
        match fresh.outputs.iter().find(|o| o.name == old.name) {
            Some(new) if new.sha256 == old.sha256 => println!("same     {}", old.name),
            Some(_) => {
                println!("MISMATCH {}", old.name);
                ok = false;
            }
            None => {
                println!("MISSING  {}", old.name);
                ok = false;
            }
        }
    }
    let skipped = record.outputs.iter().filter(|o| !o.replayable).count();
    if skipped > 0 {
        println!("({skipped} timing outputs not compared)");
    }
    println!("replay into {}: {}", out.display(), if ok { "identical" } else { "differs" });
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}
