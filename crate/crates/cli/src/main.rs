mod args;
mod commands;
mod plot;

use std::fs;
use std::process::ExitCode;

use chrono::{SecondsFormat, Utc};
use clap::Parser;
use serde_json::json;

use args::Cli;
use commands::Job;

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

const USAGE: u8 = 1;
const RUNTIME: u8 = 2;

fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

/// Provenance record written next to every run's outputs.
fn write_run_json(job: &Job, command: &str, argv: &[String], started: &str, outcome: &anyhow::Result<()>) -> anyhow::Result<()> {
    let dir = job.run_dir();
    if !dir.as_os_str().is_empty() {
        fs::create_dir_all(&dir)?;
    }
    let record = json!({
        "command": command,
        "argv": argv,
        "config": job.config_echo(),
        "seed": job.seed(),
        "versions": {
            "dclnet": env!("CARGO_PKG_VERSION"),
            "dclnet-core": dclnet_core::VERSION,
            "os": std::env::consts::OS,
            "arch": std::env::consts::ARCH,
        },
        "started": started,
        "finished": now(),
        "status": if outcome.is_ok() { "ok" } else { "failed" },
        "error": outcome.as_ref().err().map(|e| format!("{e:#}")),
    });
    fs::write(dir.join("run.json"), serde_json::to_string_pretty(&record)? + "\n")?;
    Ok(())
}

fn dispatch(argv: Vec<String>) -> u8 {
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            // --help and --version also come through here
            let code = if e.use_stderr() { USAGE } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let level = if cli.global.quiet { log::LevelFilter::Warn } else { log::LevelFilter::Info };
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .parse_default_env()
        .init();

    let job = match commands::plan(&cli) {
        Ok(j) => j,
        Err(e) => {
            eprintln!("error: {e:#}");
            return USAGE;
        }
    };
    let started = now();
    let outcome = job.run(cli.global.quiet);
    if let Err(e) = write_run_json(&job, cli.command.name(), &argv, &started, &outcome) {
        eprintln!("warning: could not write run.json: {e:#}");
    }
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            RUNTIME
        }
    }
}

fn main() -> ExitCode {
    ExitCode::from(dispatch(std::env::args().collect()))
}
