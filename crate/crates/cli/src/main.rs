use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand, ValueEnum};
use noisecap_cli::commands;
use noisecap_cli::config::RunConfig;
use noisecap_cli::sweep::Axis;
use noisecap_core::oracle::{Fault, VerifyOptions};

#[derive(Parser)]
#[command(name = "noisecap", version, about = "Covering-number bounds and NVAC for noisy sigmoid networks")]
struct Cli {
    /// JSON run configuration; omitted sections use the baseline experiment.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory holding the four MNIST IDX files.
    #[arg(long, global = true)]
    mnist: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum FaultArg {
    TvBound,
}

#[derive(Subcommand)]
enum Command {
    /// Train a network and write a checkpoint with its metrics.
    Train,
    /// Evaluate a checkpoint on the train, validation and test splits.
    Eval,
    /// ln N and the generalization bound for each method.
    Bounds,
    /// NVAC for each method, with an ordering summary.
    Nvac {
        /// Add a self-test row whose ln N is this constant.
        #[arg(long)]
        constant_ln_n: Option<f64>,
    },
    /// Figure data over depth, width and noise scale.
    Sweep {
        /// Comma-separated subset of depth, width, sigma, loss_sigma.
        #[arg(long, value_delimiter = ',', default_values_t = [Axis::Depth, Axis::Width, Axis::Sigma])]
        axes: Vec<Axis>,
        /// Reuse one trained checkpoint for every σ point.
        #[arg(long)]
        reuse_checkpoint: Option<PathBuf>,
        /// Train a network at every depth and width point.
        #[arg(long)]
        train_points: bool,
    },
    /// Run the property-based verification suites.
    Verify {
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long, hide = true, value_enum)]
        inject_fault: Option<FaultArg>,
    },
}

fn run(cli: Cli) -> Result<bool> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.apply_overrides(cli.out, cli.seed, cli.mnist);
    match cli.command {
        Command::Train => commands::cmd_train(&cfg)?,
        Command::Eval => commands::cmd_eval(&cfg)?,
        Command::Bounds => commands::cmd_bounds(&cfg)?,
        Command::Nvac { constant_ln_n } => {
            if constant_ln_n.is_some() {
                cfg.nvac.constant_ln_n = constant_ln_n;
            }
            cfg.validate()?;
            commands::cmd_nvac(&cfg)?
        }
        Command::Sweep {
            axes,
            reuse_checkpoint,
            train_points,
        } => {
            if reuse_checkpoint.is_some() {
                cfg.sweep.reuse_checkpoint = reuse_checkpoint;
            }
            cfg.sweep.train_points |= train_points;
            commands::cmd_sweep(&cfg, &axes)?
        }
        Command::Verify { trials, inject_fault } => {
            let opts = VerifyOptions {
                trials,
                seed: cfg.seed.unwrap_or(0),
                fault: inject_fault.map(|FaultArg::TvBound| Fault::TvBound),
            };
            return commands::cmd_verify(&cfg, &opts);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
