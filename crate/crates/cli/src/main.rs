mod args;
mod commands;
mod frames;

use std::process::ExitCode;

use args::{Cli, Command, RunConfig};
use clap::Parser;

/// A problem with the invocation rather than with the data.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn run(cli: Cli) -> anyhow::Result<()> {
    let file = RunConfig::load(cli.config_file.as_deref()).map_err(|e| UsageError(format!("{e:#}")))?;
    match cli.command {
        Command::Simulate(a) => commands::simulate(a, file),
        Command::Estimate(a) => commands::estimate(a, file),
        Command::Benchmark(a) => commands::benchmark(a, file),
        Command::Filter(a) => commands::filter(a, file),
        Command::ExportCurves(a) => commands::export_curves(a, file),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<UsageError>() => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
