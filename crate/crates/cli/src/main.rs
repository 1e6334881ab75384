//! `maskdiff` experiment harness.
//!
//! Exit codes: 0 success, 2 configuration error, 3 sampling failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands::SamplingFailure;
use crate::config::ExperimentConfig;

#[derive(Debug, Parser)]
#[command(
    name = "maskdiff",
    version,
    about = "Mask-and-replace discrete diffusion experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Dump a linear noise schedule as CSV.
    Schedule {
        #[arg(long)]
        steps: usize,
        #[arg(long)]
        vocab: usize,
        #[arg(long, default_value_t = 0.0)]
        eps_beta: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit a count denoiser and write it as JSON.
    Fit {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run sampling chains and write one grid per line.
    Sample {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, env = "MASKDIFF_JOBS", default_value_t = 1)]
        jobs: usize,
    },
    /// Score a samples file and append one CSV row.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        samples: PathBuf,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Run the cross product of the configured axes, one CSV row per cell.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long, env = "MASKDIFF_JOBS", default_value_t = 1)]
        jobs: usize,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Schedule {
            steps,
            vocab,
            eps_beta,
            out,
        } => commands::schedule(steps, vocab, eps_beta, out.as_deref()),
        Command::Fit { config, out } => commands::fit(&ExperimentConfig::load(&config)?, &out),
        Command::Sample { config, out, jobs } => {
            commands::sample_cmd(&ExperimentConfig::load(&config)?, out.as_deref(), jobs)
        }
        Command::Eval {
            config,
            samples,
            csv,
        } => commands::eval_cmd(&ExperimentConfig::load(&config)?, &samples, csv.as_deref()),
        Command::Sweep { config, csv, jobs } => {
            commands::sweep_cmd(&ExperimentConfig::load(&config)?, csv.as_deref(), jobs)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.chain().any(|c| c.is::<SamplingFailure>()) {
                ExitCode::from(3)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
