//! `bcnn`: synthesize data, train, binarize, evaluate, infer, benchmark and
//! inspect binarized-weight CNN models.
//!
//! Exit codes: 0 success, 2 usage error, 3 data error, 4 training divergence.

mod commands;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "bcnn", version, about = "Binarized-weight CNN frame classifier")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a seeded synthetic corpus of PPM frames plus manifest.csv.
    Synth(SynthArgs),
    /// Train a model from a manifest.
    Train(TrainArgs),
    /// Evaluate a model on a manifest (binarized models use the packed path).
    Eval(EvalArgs),
    /// Binarize a float model into the packed format.
    Binarize(BinarizeArgs),
    /// Classify one image.
    Infer(InferArgs),
    /// Time dense against packed inference.
    Bench(BenchArgs),
    /// Show a model file's layout, sizes and compression ratio.
    Inspect(InspectArgs),
}

#[derive(Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub count: usize,
    #[arg(long = "positive-frac")]
    pub positive_frac: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Directory that manifest paths are relative to [default: the manifest's directory]
    #[arg(long)]
    pub root: Option<PathBuf>,
    #[arg(long, default_value = "float", value_parser = ["float", "binarized"])]
    pub mode: String,
    #[arg(long, default_value_t = 90_000)]
    pub iterations: u64,
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long = "checkpoint-every", default_value_t = 10_000)]
    pub checkpoint_every: u64,
    /// Final model. Binarized mode also writes `<out>.master`; checkpoints go
    /// to `<out>.ckpt-<iteration>` and the run report to `<out>.report.json`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub root: Option<PathBuf>,
    /// JSON report; a text copy goes to `<report>.txt` and per-frame
    /// predictions to `<report>.predictions.csv`.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Args)]
pub struct BinarizeArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Args)]
pub struct InferArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
}

#[derive(Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub batches: usize,
    #[arg(long, default_value_t = 8)]
    pub batch: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Args)]
pub struct InspectArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Second model of the same architecture; reports the size ratio.
    #[arg(long)]
    pub compare: Option<PathBuf>,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Binarize(a) => commands::binarize(a),
        Command::Infer(a) => commands::infer(a),
        Command::Bench(a) => commands::bench(a),
        Command::Inspect(a) => commands::inspect(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
