//! The `bam` command line: scoring, decomposition, simulation and exact baselines.
//!
//! Every command emits one JSON document carrying its invocation and the
//! crate version. Apart from `wall_time_s` fields the document depends only
//! on the invocation, never on the worker count.

pub mod args;
pub mod catalog;
pub mod commands;
pub mod simulate;

use std::fmt;
use std::time::Instant;

use serde_json::{json, Value};

pub use args::{Cli, Command};

/// Exit status for malformed inputs or inconsistent flags.
pub const EXIT_INPUT: i32 = 2;
/// Exit status when exact enumeration (or the latent block) exceeds its cap.
pub const EXIT_CAP: i32 = 3;
/// Exit status when every particle weight is zero.
pub const EXIT_ZERO_WEIGHTS: i32 = 4;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<bam::Error> for CliError {
    fn from(e: bam::Error) -> Self {
        use bam::Error::*;
        let code = match &e {
            SearchSpaceTooLarge { .. } | LatentSpaceTooLarge { .. } => EXIT_CAP,
            AllWeightsZero => EXIT_ZERO_WEIGHTS,
            Io(_) => 1,
            _ => EXIT_INPUT,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError {
            code: 1,
            message: e.to_string(),
        }
    }
}

/// Runs one command and returns the full JSON report. CSV side outputs are
/// written here; the report itself is left to the caller.
pub fn execute(command: &Command, threads: Option<usize>) -> Result<Value, CliError> {
    let start = Instant::now();
    let outcome = bam::smc::with_threads(threads, || match command {
        Command::Score(a) => commands::score(a),
        Command::Decompose(a) => commands::decompose(a),
        Command::Simulate(a) => commands::simulate_cmd(a),
        Command::Exact(a) => commands::exact(a),
    })??;
    if let Some((path, text)) = &outcome.csv {
        std::fs::write(path, text)?;
    }
    Ok(json!({
        "version": env!("CARGO_PKG_VERSION"),
        "invocation": command,
        "result": outcome.result,
        "wall_time_s": start.elapsed().as_secs_f64(),
    }))
}

fn out_path(command: &Command) -> Option<&std::path::Path> {
    match command {
        Command::Score(a) => a.out.as_deref(),
        Command::Decompose(a) => a.out.as_deref(),
        Command::Exact(a) => a.out.as_deref(),
        Command::Simulate(_) => None,
    }
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let report = execute(&cli.command, cli.threads)?;
    let text = serde_json::to_string_pretty(&report).map_err(bam::Error::from)? + "\n";
    match out_path(&cli.command) {
        Some(path) => std::fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

/// Removes every `wall_time_s` field, leaving the deterministic part of a report.
pub fn strip_timings(value: &mut Value) {
    match value {
        Value::Object(map) => {
            map.retain(|k, _| !k.ends_with("wall_time_s"));
            map.values_mut().for_each(strip_timings);
        }
        Value::Array(items) => items.iter_mut().for_each(strip_timings),
        _ => {}
    }
}
