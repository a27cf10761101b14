//! `camscope`: train, evaluate, explain and compare CNN classifiers.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "camscope",
    version,
    about = "CNN image classification with CAM-family explanations"
)]
pub struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides every seed in the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output root for new runs and comparisons.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// error, warn, info, debug or trace.
    #[arg(long, global = true, default_value = "info")]
    pub log_level: log::LevelFilter,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Split, preprocess and fine-tune; writes a new run directory.
    Train(TrainArgs),
    /// Scores a run's checkpoint on its test split.
    Evaluate(EvaluateArgs),
    /// Writes CAM heatmaps, overlays and panels for selected images.
    Explain(ExplainArgs),
    /// Builds a comparison table and chart across finished runs.
    Compare(CompareArgs),
    /// Writes a synthetic shape dataset to disk.
    Synth(SynthArgs),
    /// Pretrains a backbone on the generic shape corpus.
    Pretrain(PretrainArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Run directory name under the output root (default `<arch>-s<seed>`).
    #[arg(long)]
    pub run_id: Option<String>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Run directory produced by `train`.
    #[arg(long)]
    pub run: PathBuf,
    /// Checkpoint to score instead of the run's own.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    /// Run directory produced by `train`.
    #[arg(long)]
    pub run: PathBuf,
    /// Checkpoint to explain instead of the run's own.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Explain this image file instead of split images.
    #[arg(long)]
    pub image: Option<PathBuf>,
    /// Split part to draw images from: train, val or test.
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Comma-separated subset of gradcam, gradcampp, layercam, scorecam.
    #[arg(long, value_delimiter = ',')]
    pub methods: Option<Vec<String>>,
    /// `predicted` or `true`.
    #[arg(long)]
    pub target: Option<String>,
    /// Layer whose activations feed the CAM methods.
    #[arg(long)]
    pub tap_layer: Option<String>,
    /// Images explained per class when `--image` is not given.
    #[arg(long)]
    pub images_per_class: Option<usize>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Finished run directories.
    pub runs: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Destination directory.
    #[arg(long)]
    pub dest: PathBuf,
    #[arg(long, default_value_t = 3)]
    pub classes: usize,
    #[arg(long, default_value_t = 100)]
    pub per_class: usize,
    #[arg(long, default_value_t = 128)]
    pub side: usize,
    #[arg(long, default_value_t = 0.05)]
    pub noise_sigma: f64,
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    /// Output directory (default `<out>/pretrained-<arch>-<side>`).
    #[arg(long)]
    pub dest: Option<PathBuf>,
}

fn init_logging(level: log::LevelFilter) {
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .format_target(false)
        .format_timestamp(None)
        .try_init();
}

/// Only the CPU backend exists; any other request falls back to it.
fn select_device() {
    match std::env::var("CAMSCOPE_DEVICE") {
        Ok(d) if !d.trim().is_empty() && !d.trim().eq_ignore_ascii_case("cpu") => {
            log::warn!("device `{d}` is not available; falling back to cpu");
        }
        _ => {}
    }
    log::debug!("compute device: cpu");
}

fn run(cli: Cli) -> Result<(), CliError> {
    select_device();
    let g = commands::Globals {
        config: cli.config,
        seed: cli.seed,
        out: cli.out,
    };
    match cli.command {
        Command::Train(a) => commands::train(&g, &a),
        Command::Evaluate(a) => commands::evaluate(&g, &a),
        Command::Explain(a) => commands::explain(&g, &a),
        Command::Compare(a) => commands::compare(&g, &a),
        Command::Synth(a) => commands::synth(&g, &a),
        Command::Pretrain(a) => commands::pretrain(&g, &a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.log_level);
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
