//! Command-line driver: dataset synthesis, training, evaluation, SNR sweeps
//! and complexity reports.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use otfs_sync::Error;

#[derive(Debug, Parser)]
#[command(
    name = "otfs-sync",
    version,
    about = "OTFS frame synchronization workbench"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Profile {
    /// M=32, N=8, L_CP=8, AWGN only, SNR {10, 20} dB
    Toy,
    /// M=256, N=64, L_CP=64, three channels, SNR -20..26 dB
    Default,
}

#[derive(Debug, Args)]
struct ConfigArgs {
    /// JSON capture configuration (overrides --profile)
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "toy")]
    profile: Profile,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Stage {
    Coarse,
    Fine,
    Onestage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Recipe {
    /// lr 1e-4, batch 256, 500 epochs, constant rate
    Full,
    /// lr 1e-2, wd 0.1, batch 64, 30 epochs, cosine annealing
    Toy,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Synthesize a labelled capture dataset
    Gen {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the configured global seed
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train one network stage
    Train {
        #[arg(long, value_enum)]
        stage: Stage,
        #[arg(long)]
        dataset: PathBuf,
        /// Best-by-test-accuracy weights; final-epoch weights go to PATH.final
        #[arg(long)]
        out_weights: PathBuf,
        /// Trained coarse weights (required for --stage fine)
        #[arg(long)]
        coarse_weights: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "full")]
        recipe: Recipe,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        wd: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 0.8)]
        train_fraction: f64,
        /// Train on captures of this channel id only
        #[arg(long)]
        channel: Option<u8>,
    },
    /// Score one method on the test partition of a dataset
    Eval {
        #[arg(long)]
        method: otfs_sync::eval::Method,
        #[arg(long)]
        dataset: PathBuf,
        /// Weights files; resnet2stage takes a coarse and a fine file
        #[arg(long)]
        weights: Vec<PathBuf>,
        /// Capture configuration for the preamble and pilot of the baselines
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0.8)]
        train_fraction: f64,
        /// Score every record instead of the test partition
        #[arg(long)]
        all_records: bool,
        /// Score captures of this channel id only
        #[arg(long)]
        channel: Option<u8>,
        /// CSV output (stdout when absent)
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Accuracy and RMSE against SNR on freshly generated captures
    Sweep {
        #[arg(long, value_delimiter = ',', required = true)]
        methods: Vec<otfs_sync::eval::Method>,
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, allow_hyphen_values = true)]
        snr_min: f64,
        #[arg(long, allow_hyphen_values = true)]
        snr_max: f64,
        #[arg(long)]
        snr_step: f64,
        #[arg(long, default_value_t = 200)]
        trials: usize,
        #[arg(long)]
        weights: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// FLOPs, parameters and runtime of every method
    Complexity {
        #[command(flatten)]
        config: ConfigArgs,
        /// Takes M and N from a weights file instead of the configuration
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long)]
        json: bool,
    },
    /// Print the header of a dataset or weights file
    Info {
        #[arg(long, conflicts_with = "weights", required_unless_present = "weights")]
        dataset: Option<PathBuf>,
        #[arg(long)]
        weights: Option<PathBuf>,
    },
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) => 2,
        Error::Format(_) | Error::Truncated { .. } => 3,
        _ => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
