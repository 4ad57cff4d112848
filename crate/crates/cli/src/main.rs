//! `display-ir` command line tool.
//!
//! Exit codes: 0 success, 1 usage, 2 data error, 3 numerical failure.
//! `DISPLAY_IR_THREADS` sets the worker thread count.

mod args;
mod commands;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;
use serde::Serialize;

use args::Cli;
use commands::Inputs;
use error::{CliError, CliResult};

const THREADS_VAR: &str = "DISPLAY_IR_THREADS";

#[derive(Serialize)]
struct Versions {
    display_ir: &'static str,
    cli: &'static str,
}

/// Written to `run.json` in the output directory of every run.
#[derive(Serialize)]
struct RunManifest {
    command: &'static str,
    args: Vec<String>,
    seed: Option<u64>,
    threads: Option<usize>,
    versions: Versions,
    inputs: Vec<PathBuf>,
    status: &'static str,
    error: Option<String>,
}

fn configure_threads() -> CliResult<Option<usize>> {
    let Ok(raw) = std::env::var(THREADS_VAR) else {
        return Ok(None);
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Usage(format!("{THREADS_VAR}={raw:?} must be a positive integer")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(format!("cannot start {n} threads: {e}")))?;
    Ok(Some(n))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let threads = match configure_threads() {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let mut inputs = Inputs::default();
    let result = commands::run(&cli.command, &mut inputs);
    let manifest = RunManifest {
        command: cli.command.name(),
        args: std::env::args().skip(1).collect(),
        seed: cli.command.seed(),
        threads,
        versions: Versions {
            display_ir: display_ir::VERSION,
            cli: env!("CARGO_PKG_VERSION"),
        },
        inputs: inputs.0,
        status: if result.is_ok() { "ok" } else { "failed" },
        error: result.as_ref().err().map(ToString::to_string),
    };
    let out = cli.command.out();
    if out.is_dir() {
        if let Err(e) = display_ir::io::write_json(&out.join("run.json"), &manifest) {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
