//! `cdm-hmm`: prepare conjunction data, select and fit the HMM, predict
//! final risks and compare them with the naive forecast.

mod artifacts;
mod commands;
mod config;
mod exit;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;
use crate::exit::CliResult;

#[derive(Debug, Parser)]
#[command(name = "cdm-hmm", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Clean the raw CDM table, filter and vectorize events, split train/test.
    Prepare(Common),
    /// Choose the number of states by stratified cross-validation.
    Cv(Common),
    /// Sample the posterior on the training split.
    Fit(Common),
    /// Forecast the final risk of every test event.
    Predict(Common),
    /// Score the forecasts against the truth and the naive baseline.
    Evaluate(Common),
    /// Write a synthetic dataset drawn from known parameters.
    Simulate(Common),
}

#[derive(Debug, Args)]
struct Common {
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory, overriding `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed for every random stream, overriding the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Log progress to stderr.
    #[arg(long, short)]
    verbose: bool,
}

fn load(common: &Common) -> CliResult<RunConfig> {
    let mut cfg = RunConfig::load(common.config.as_deref())?;
    cfg.override_with(common.out.clone(), common.seed);
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> CliResult<()> {
    let (common, action): (&Common, fn(&RunConfig) -> CliResult<()>) = match &cli.command {
        Command::Prepare(c) => (c, commands::prepare),
        Command::Cv(c) => (c, commands::cv),
        Command::Fit(c) => (c, commands::fit_cmd),
        Command::Predict(c) => (c, commands::predict),
        Command::Evaluate(c) => (c, commands::evaluate),
        Command::Simulate(c) => (c, commands::simulate),
    };
    let level = if common.verbose {
        log::LevelFilter::Info
    } else {
        log::LevelFilter::Warn
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();
    action(&load(common)?)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code() as u8)
        }
    }
}
