mod args;
mod commands;
mod report;

use std::fmt;
use std::process::ExitCode;

use anyhow::Result;
use clap::Parser;
use neurolens_core::Error;

use args::{Cli, Command};

const EXIT_USAGE: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_NUMERICAL: u8 = 4;

/// A request the command cannot act on, as opposed to bad input data.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return EXIT_USAGE;
        }
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::InvalidArgument(_) => EXIT_USAGE,
                Error::Numerical(_) => EXIT_NUMERICAL,
                _ => EXIT_DATA,
            };
        }
    }
    EXIT_DATA
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(UsageError("--threads must be a positive integer".into()).into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let det = cli.deterministic;
    match &cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::IngestCheck(a) => commands::ingest_check(a, det),
        Command::FitDensities(a) => commands::fit_densities(a),
        Command::Separability(a) => commands::separability(a, det),
        Command::Overlap(a) => commands::overlap(a, det),
        Command::BuildPlan(a) => commands::build_plan_cmd(a, det),
        Command::Intervene(a) => commands::intervene(a),
        Command::Evaluate(a) => commands::evaluate(a, det),
        Command::Correlate(a) => commands::correlate(a, det),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
