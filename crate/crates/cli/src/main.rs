//! Command-line front end for the identification and continuation pipeline.

mod commands;
mod config;
mod io;
mod plot;

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

use config::{ConfigError, Loaded};

#[derive(Parser)]
#[command(name = "nnmid", version, about = "Nonlinear modal identification and backbone continuation")]
struct Cli {
    /// TOML configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides the excitation and noise seeds.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Reference document (truth.json) for error reports.
    #[arg(long, global = true)]
    truth: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the multisine experiment and write a dataset.
    Simulate,
    /// Identify a nonlinear modal model from a dataset directory.
    Identify { dataset: PathBuf },
    /// Continue backbones of an identified or reference model.
    Continue { model: PathBuf },
    /// Run phase-resonance testing on the simulated structure.
    PhaseResonance,
    /// Compare a backbone with a ridge or another backbone.
    Compare { first: PathBuf, second: PathBuf },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let loaded = Loaded::from_path(cli.config.as_deref(), cli.seed)?;
    let out = commands::out_dir(cli.out);
    let truth = cli.truth.as_deref();
    match cli.command {
        Command::Simulate => commands::simulate(&loaded, &out),
        Command::Identify { dataset } => commands::identify_cmd(&loaded, &dataset, truth, &out),
        Command::Continue { model } => commands::continue_cmd(&loaded, &model, truth, &out),
        Command::PhaseResonance => commands::phase_resonance(&loaded, &out),
        Command::Compare { first, second } => commands::compare(&loaded, &first, &second, &out),
    }
}

/// 2 for invalid input, 3 for numerical failure.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<ConfigError>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<nnmid::Error>() {
            return if e.is_config() { 2 } else { 3 };
        }
    }
    2
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
