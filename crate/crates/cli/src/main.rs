//! `crnet`: train, run and evaluate the CRNet super-resolution models and
//! the standalone convolutional sparse coding solver.

mod infer;
mod tools;
mod train;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use crnet_core::models::ModelKind;
use crnet_core::tensor::BorderMode;

#[derive(Parser)]
#[command(
    name = "crnet",
    version,
    about = "Convolutional sparse coding super-resolution"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a key = value config file on a directory of HR images.
    Train(TrainArgs),
    /// Write a freshly initialised checkpoint.
    Init(InitArgs),
    /// Super-resolve one image with a checkpoint.
    Sr(SrArgs),
    /// Score a checkpoint (or a directory of SR images) against HR images.
    Eval(EvalArgs),
    /// Score plain bicubic interpolation against HR images.
    Baseline(BaselineArgs),
    /// Make HR / LR / ILR image triples by bicubic degradation.
    Degrade(DegradeArgs),
    /// Solve a convolutional sparse coding problem with CISTA.
    CscSolve(CscSolveArgs),
    /// Finite-difference gradient checks on small model configurations.
    GradCheck(GradCheckArgs),
}

#[derive(Args)]
pub struct TrainArgs {
    /// Config file: model keys (model, n0, m0, k, ...) plus training keys.
    #[arg(long)]
    pub config: PathBuf,
    /// Directory of HR training images.
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory for checkpoints and loss.csv.
    #[arg(long)]
    pub out: PathBuf,
    /// Continue from the parameters in this checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Store checkpoint tensors as 32-bit floats.
    #[arg(long)]
    pub f32: bool,
}

#[derive(Args)]
pub struct InitArgs {
    /// Config file with model keys; defaults for `--model` otherwise.
    #[arg(long, conflicts_with = "model")]
    pub config: Option<PathBuf>,
    /// Model kind (crnet-a or crnet-b) when no config file is given.
    #[arg(long)]
    pub model: Option<ModelKind>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Zero CRNet-A's reconstruction filter so the model returns its input.
    #[arg(long)]
    pub zero_residual: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct SrArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long)]
    pub scale: usize,
    /// Average over the 8 flips and rotations of the input.
    #[arg(long)]
    pub ensemble: bool,
    /// The input is already interpolated to the target size (CRNet-A only).
    #[arg(long)]
    pub interpolated: bool,
}

#[derive(Args)]
pub struct MetricArgs {
    #[arg(long)]
    pub scale: usize,
    /// Pixels removed from each border before scoring [default: scale].
    #[arg(long)]
    pub shave: Option<usize>,
    /// Write the per-image table as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long, required_unless_present = "sr_dir", conflicts_with = "sr_dir")]
    pub checkpoint: Option<PathBuf>,
    /// Precomputed SR images named like the HR images.
    #[arg(long)]
    pub sr_dir: Option<PathBuf>,
    #[arg(long)]
    pub hr_dir: PathBuf,
    #[command(flatten)]
    pub metric: MetricArgs,
    #[arg(long, requires = "checkpoint")]
    pub ensemble: bool,
    /// Round SR and HR to 8-bit levels before scoring.
    #[arg(long)]
    pub quantize: bool,
}

#[derive(Args)]
pub struct BaselineArgs {
    /// Directory of HR images (e.g. Set5).
    #[arg(long)]
    pub set: PathBuf,
    #[command(flatten)]
    pub metric: MetricArgs,
    #[arg(long, default_value = "symmetric")]
    pub border: BorderMode,
    /// Score floating-point output instead of 8-bit rounded output.
    #[arg(long)]
    pub float: bool,
}

#[derive(Args)]
pub struct DegradeArgs {
    /// HR image file or directory.
    #[arg(long)]
    pub input: PathBuf,
    /// Receives hr/, lr/ and ilr/ subdirectories.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub scale: usize,
}

#[derive(Args)]
pub struct CscSolveArgs {
    #[arg(long)]
    pub image: PathBuf,
    /// Dictionary as a raw tensor file (m×c×s×s).
    #[arg(
        long,
        required_unless_present = "random_filters",
        conflicts_with = "random_filters"
    )]
    pub filters: Option<PathBuf>,
    /// Use this many random unit-norm filters instead of a file.
    #[arg(long)]
    pub random_filters: Option<usize>,
    #[arg(long, default_value_t = 3)]
    pub filter_size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub lambda: f64,
    #[arg(long, default_value_t = 100)]
    pub iters: usize,
    /// Stop when the relative objective change falls below this.
    #[arg(long, default_value_t = 0.0)]
    pub tol: f64,
    /// Use the one-sided threshold, giving nonnegative codes.
    #[arg(long)]
    pub nonnegative: bool,
    /// Objective trace CSV (iteration,objective).
    #[arg(long)]
    pub trace: PathBuf,
    /// Codes as a raw tensor file.
    #[arg(long)]
    pub codes: PathBuf,
}

#[derive(Args)]
pub struct GradCheckArgs {
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    #[arg(long, default_value_t = 1e-5)]
    pub step: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => train::run(a),
        Command::Init(a) => tools::init(a),
        Command::Sr(a) => infer::sr(a),
        Command::Eval(a) => infer::eval(a),
        Command::Baseline(a) => infer::baseline(a),
        Command::Degrade(a) => infer::degrade(a),
        Command::CscSolve(a) => tools::csc_solve(a),
        Command::GradCheck(a) => tools::grad_check(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
