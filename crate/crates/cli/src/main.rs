//! `glnet`: synthetic data, training, inference, evaluation and gradient
//! verification for the group co-saliency model.
//!
//! Exit codes: 0 success, 1 verification failure, 2 usage or input error,
//! 3 numerical abort.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self { code: 2, message: message.into() }
    }

    pub fn verification(message: impl Into<String>) -> Self {
        Self { code: 1, message: message.into() }
    }
}

impl From<glnet_core::Error> for CliError {
    fn from(e: glnet_core::Error) -> Self {
        let code = match e {
            glnet_core::Error::NonFiniteLoss { .. } | glnet_core::Error::NonFinite { .. } => 3,
            _ => 2,
        };
        Self { code, message: e.to_string() }
    }
}

#[derive(Parser)]
#[command(name = "glnet", version, about = "Group co-salient object detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic labelled dataset (PPM images, PGM masks).
    Synth {
        /// Output dataset directory.
        #[arg(long)]
        out: PathBuf,
        /// Number of groups.
        #[arg(long, default_value_t = 40)]
        groups: usize,
        /// Images per group.
        #[arg(long, default_value_t = 5)]
        group_size: usize,
        /// Image side in pixels.
        #[arg(long, default_value_t = 160)]
        side: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train a model and write a checkpoint plus a `step,loss,lr` CSV log.
    Train {
        /// Labelled dataset directory (overrides `data` in the config).
        #[arg(long)]
        data: Option<PathBuf>,
        /// JSON run configuration; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Checkpoint path (overrides `checkpoint` in the config).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Loss log path [default: checkpoint path with extension `loss.csv`].
        #[arg(long)]
        log: Option<PathBuf>,
        /// Number of iterations (overrides the config).
        #[arg(long)]
        iterations: Option<usize>,
        /// Replace the loss at this step with NaN.
        #[arg(long, hide = true)]
        inject_nan: Option<usize>,
    },
    /// Predict co-saliency maps (one PGM per input image).
    Infer {
        #[arg(long)]
        ckpt: PathBuf,
        /// Dataset directory of image groups.
        #[arg(long)]
        data: PathBuf,
        /// Output directory, mirrors the dataset layout.
        #[arg(long)]
        out: PathBuf,
    },
    /// Score predictions against ground-truth masks.
    Eval {
        /// Prediction tree (`<group>/<id>.pgm`).
        #[arg(long)]
        pred: PathBuf,
        /// Ground-truth tree (`<group>/<id>_gt.pgm`).
        #[arg(long)]
        gt: PathBuf,
        /// JSON report path.
        #[arg(long)]
        out: PathBuf,
        /// Precision-recall CSV path (256 rows).
        #[arg(long)]
        pr: Option<PathBuf>,
        /// Add a per-group table to the report.
        #[arg(long)]
        per_group: bool,
    },
    /// Finite-difference check of every differentiable module.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Scale analytic gradients by 1.01 before comparing.
        #[arg(long, hide = true)]
        perturb: bool,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth { out, groups, group_size, side, seed } => {
            commands::synth(&out, groups, group_size, side, seed)
        }
        Command::Train { data, config, out, log, iterations, inject_nan } => {
            commands::train(commands::TrainArgs { data, config, out, log, iterations, inject_nan })
        }
        Command::Infer { ckpt, data, out } => commands::infer(&ckpt, &data, &out),
        Command::Eval { pred, gt, out, pr, per_group } => commands::eval(&pred, &gt, &out, pr.as_deref(), per_group),
        Command::Gradcheck { seed, perturb } => commands::gradcheck(seed, perturb),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
