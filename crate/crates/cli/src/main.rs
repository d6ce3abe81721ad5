//! `frontflow`: batch runner for nonlocal front propagation scenarios.
//!
//! Exit codes: 0 success, 1 configuration or usage error, 2 runtime
//! violation (boundary touch, stability failure), 3 fixed-point iteration
//! not converged, 4 failed check, 5 barrier containment violated.

mod commands;
mod config;
mod error;
mod suites;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "frontflow", version, about = "Nonlocal level-set front propagation")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Scenario file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory, overriding the scenario's `output.directory`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Seed for randomized checks, overriding the scenario's `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Only report warnings and errors.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Evolve the front once with a frozen occupancy.
    Run,
    /// Damped fixed-point iteration on the occupancy.
    Iterate,
    /// Run self-check suites: comparison, heat, green, certificate or all.
    Check { suite: String },
    /// Integrate the radial barrier and check the front stays inside it.
    Barrier,
}

fn init_logging(quiet: bool) {
    let default = if quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(default))
        .format_timestamp(None)
        .init();
}

fn init_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("FRONTFLOW_THREADS") else { return Ok(()) };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Usage(format!("FRONTFLOW_THREADS must be a positive integer, got \"{raw}\"")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(format!("cannot size the thread pool: {e}")))
}

fn load_scenario(cli: &Cli) -> Result<config::Scenario, CliError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Usage("this command needs --config PATH".into()))?;
    let mut scenario = config::load(path)?;
    if let Some(seed) = cli.seed {
        scenario.seed = seed;
    }
    Ok(commands::with_out_dir(scenario, cli.out.clone()))
}

fn execute(cli: &Cli) -> Result<(), CliError> {
    init_threads()?;
    match &cli.command {
        Command::Run => commands::run(&load_scenario(cli)?),
        Command::Iterate => commands::iterate(&load_scenario(cli)?),
        Command::Barrier => commands::barrier(&load_scenario(cli)?),
        Command::Check { suite } => {
            // a scenario is optional here; it only contributes a seed, an output directory and a tolerance scale
            let mut settings = match &cli.config {
                Some(path) => config::load_check(path)?,
                None => config::CheckSettings {
                    seed: config::DEFAULT_SEED,
                    directory: PathBuf::from("out"),
                    tolerance_scale: 1.0,
                },
            };
            if let Some(seed) = cli.seed {
                settings.seed = seed;
            }
            if let Some(out) = &cli.out {
                settings.directory = out.clone();
            }
            commands::check(suite, &settings)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    init_logging(cli.quiet);
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("frontflow: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
