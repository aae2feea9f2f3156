//! Command-line front end for delayed-feedback tracking experiments.

mod commands;
mod config;
mod output;
mod reproduce;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

use commands::Status;
use config::ExperimentConfig;

/// Tune, analyse and simulate delayed-feedback tracking controllers.
///
/// Exit codes: 0 ok, 1 configuration or usage error, 2 unstable closed loop,
/// 3 diverged simulation, 4 tuning failure, 5 reproduction check failed.
#[derive(Debug, Parser)]
#[command(name = "delayfb", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Args)]
struct Common {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output.directory`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Rightmost characteristic roots to roots.csv; exit 2 when not stable.
    Spectrum {
        #[command(flatten)]
        common: Common,
    },
    /// Time response to trajectory.csv; exit 3 on divergence.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Also write y/u/e line charts as SVG.
        #[arg(long)]
        plots: bool,
    },
    /// Simulated-annealing search; writes trace.csv and tuned.json.
    Tune {
        #[command(flatten)]
        common: Common,
        /// Overrides `tune.seed`.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Steady-state predictions for the configured controller.
    Predict {
        #[command(flatten)]
        common: Common,
    },
    /// Full case-study run with built-in data.
    Reproduce {
        #[arg(long, default_value = "reproduce")]
        out: PathBuf,
        /// Seed of the tuning runs.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        plots: bool,
        /// Replace design two's tau_q (K2 stays at -1/0.44).
        #[arg(long)]
        design2_tau_q: Option<f64>,
    },
}

fn out_dir(common: &Common, cfg: &ExperimentConfig) -> PathBuf {
    common
        .out
        .clone()
        .or_else(|| cfg.out_dir())
        .unwrap_or_else(|| Path::new("out").to_path_buf())
}

fn load(common: &Common) -> Result<(ExperimentConfig, PathBuf)> {
    let cfg = ExperimentConfig::load(&common.config)?;
    let out = out_dir(common, &cfg);
    Ok((cfg, out))
}

fn dispatch(cli: Cli) -> Result<Status> {
    match cli.command {
        Command::Spectrum { common } => {
            let (cfg, out) = load(&common)?;
            commands::spectrum(&cfg, &out)
        }
        Command::Simulate { common, plots } => {
            let (cfg, out) = load(&common)?;
            let plots = plots || cfg.plots();
            commands::simulate_cmd(&cfg, &out, plots)
        }
        Command::Tune { common, seed } => {
            let (cfg, out) = load(&common)?;
            if cfg.tune.is_none() {
                anyhow::bail!("tune: section missing from {}", common.config.display());
            }
            commands::tune(&cfg, &out, seed)
        }
        Command::Predict { common } => {
            let (cfg, out) = load(&common)?;
            commands::predict_cmd(&cfg, &out)
        }
        Command::Reproduce {
            out,
            seed,
            plots,
            design2_tau_q,
        } => reproduce::run(
            &out,
            &reproduce::ReproduceOptions {
                seed,
                plots,
                design2_tau_q,
            },
        ),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(status) => ExitCode::from(status.code()),
        Err(err) => {
            eprintln!("error: {err:#}");
            let code = match err.downcast_ref::<delayfb_core::Error>() {
                Some(delayfb_core::Error::Unstable { .. }) => Status::Unstable.code(),
                Some(delayfb_core::Error::TuneFailed) => Status::TuneFailed.code(),
                _ => 1,
            };
            ExitCode::from(code)
        }
    }
}
