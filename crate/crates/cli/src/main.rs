use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pan_core::analysis::Resolution;
use pan_core::BlockType;

mod commands;

use commands::CliError;

/// Pixel-attention super-resolution toolkit.
#[derive(Debug, Parser)]
#[command(name = "pan", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Count parameters and Mult-Adds of a model and write a per-layer CSV.
    Analyze(AnalyzeArgs),
    /// Build an LR/HR dataset by bicubic downsampling a folder of PNGs.
    Degrade(DegradeArgs),
    /// Train a model on a degraded dataset.
    Train(TrainArgs),
    /// Super-resolve one PNG with a trained checkpoint.
    Infer(InferArgs),
    /// Y-channel PSNR/SSIM over a folder of images.
    Eval(EvalArgs),
    /// Finite-difference gradient check on a tiny model.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long, default_value_t = 4)]
    pub scale: usize,
    #[arg(long, default_value = "scpa")]
    pub block_type: BlockType,
    /// Trunk depth; defaults to 16 for SC-PA and 8 for residual variants.
    #[arg(long)]
    pub blocks: Option<usize>,
    /// HR output resolution used for Mult-Adds.
    #[arg(long, default_value = "1280x720")]
    pub hr_res: Resolution,
    /// Per-layer cost CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DegradeArgs {
    #[arg(long)]
    pub hr_dir: PathBuf,
    #[arg(long)]
    pub scale: usize,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// `key = value` training config. Optional when resuming, in which case
    /// the config stored in the checkpoint is used.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset manifest written by `degrade`.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long, default_value = "run")]
    pub out_dir: PathBuf,
    /// Print a progress line every N iterations (0 disables).
    #[arg(long, default_value_t = 100)]
    pub log_every: u64,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Expected scale; a checkpoint trained at another scale is rejected.
    #[arg(long)]
    pub scale: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Super-resolve the LR images first. Without it the LR directory is
    /// taken to hold finished SR outputs.
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    #[arg(long)]
    pub hr_dir: PathBuf,
    #[arg(long)]
    pub lr_dir: PathBuf,
    /// Border pixels excluded from the metrics; defaults to the checkpoint
    /// scale, or 0 without a checkpoint.
    #[arg(long)]
    pub shave: Option<usize>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Trunk width.
    #[arg(long, default_value_t = 8)]
    pub width: usize,
    /// Reconstruction width.
    #[arg(long, default_value_t = 6)]
    pub unf: usize,
    #[arg(long, default_value_t = 2)]
    pub blocks: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Restrict to one block type; all five by default.
    #[arg(long)]
    pub block_type: Option<BlockType>,
    #[arg(long, default_value_t = 200)]
    pub samples: usize,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Analyze(a) => commands::analyze(&a),
        Command::Degrade(a) => commands::degrade(&a),
        Command::Train(a) => commands::train(&a),
        Command::Infer(a) => commands::infer(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Gradcheck(a) => commands::gradcheck(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// 1 usage or config, 2 data, 3 numeric failure.
fn exit_code(e: &CliError) -> u8 {
    use pan_core::Error;
    match e {
        CliError::Usage(_) => 1,
        CliError::Numeric(_) => 3,
        CliError::Core(e) => match e {
            Error::Config(_) | Error::Unsupported(_) => 1,
            Error::NonFinite(_) => 3,
            _ => 2,
        },
    }
}
