//! `dlmbir` command-line front end: synthetic data generation, training,
//! inference, evaluation, timing and gradient self-check.
//!
//! Exit codes: 0 success, 1 failure, 2 missing input, 3 shape or variant
//! mismatch.

pub mod commands;
pub mod config;
pub mod error;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::Config;
pub use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "dlmbir", version, about = "Residual CNN post-processing of sparse-view FBP volumes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic reference / FBP volume pairs and a manifest.
    Generate(GenerateArgs),
    /// Train a network on a generated dataset.
    Train(TrainArgs),
    /// Reconstruct a volume with a trained checkpoint.
    Infer(InferArgs),
    /// Per-slice masked PSNR of method volumes against a reference.
    Eval(EvalArgs),
    /// Time whole-volume inference for every network variant.
    Bench(BenchArgs),
    /// Compare analytic and finite-difference gradients of every layer.
    Gradcheck(GradcheckArgs),
}

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// `key = value` configuration file; flags override its entries.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Master random seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Override any configuration key (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

/// Network and optimisation flags.
#[derive(Debug, Clone, Default, Args)]
pub struct ModelArgs {
    /// Network variant.
    #[arg(long, value_parser = ["2d", "2.5d", "3d"])]
    pub variant: Option<String>,
    /// Input slices per evaluation (2.5D: 3, 5 or 7).
    #[arg(long)]
    pub window: Option<usize>,
    /// Convolution layers.
    #[arg(long)]
    pub depth: Option<usize>,
    /// Feature channels of the hidden layers.
    #[arg(long)]
    pub width: Option<usize>,
    /// Floating-point precision.
    #[arg(long, value_parser = ["f32", "f64"])]
    pub precision: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Volume size as `slices rows cols`, e.g. `16x64x64`.
    #[arg(long)]
    pub dims: Option<String>,
    /// Number of volume pairs.
    #[arg(long)]
    pub volumes: Option<usize>,
    /// Projection views for the FBP input.
    #[arg(long)]
    pub views: Option<usize>,
    /// Standard deviation of sinogram noise.
    #[arg(long)]
    pub noise_sigma: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Dataset directory written by `generate`.
    #[arg(long, value_name = "DIR")]
    pub data: Option<PathBuf>,
    /// Gradient shards per batch.
    #[arg(long)]
    pub shards: Option<usize>,
    /// Passes over the training patches
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Patches per optimizer step
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Adam step size
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Total training patches across the training volumes.
    #[arg(long)]
    pub patches: Option<usize>,
    /// Side length of square training patches
    #[arg(long)]
    pub patch_size: Option<usize>,
    /// Batch-norm handling inside shards.
    #[arg(long, value_parser = ["per-shard", "frozen"])]
    pub shard_bn: Option<String>,
    /// Save a checkpoint every N optimizer steps (0 disables).
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct InferArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Trained model file
    #[arg(long, value_name = "PATH")]
    pub checkpoint: PathBuf,
    /// FBP volume to reconstruct.
    #[arg(long, value_name = "PATH")]
    pub input: PathBuf,
    /// Destination volume file.
    #[arg(long, value_name = "PATH")]
    pub output: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Ground-truth volume
    #[arg(long, value_name = "PATH")]
    pub reference: PathBuf,
    /// FBP volume, always reported as the baseline
    #[arg(long, value_name = "PATH")]
    pub fbp: PathBuf,
    /// Method volume as `label=path` (repeatable).
    #[arg(long = "method", value_name = "LABEL=PATH")]
    pub methods: Vec<String>,
    /// Prefix of the report files.
    #[arg(long, default_value = "eval")]
    pub dataset: String,
    /// Render a per-slice PSNR plot (`true` or `false`).
    #[arg(long, value_name = "BOOL")]
    pub plots: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Directory holding 2d.ckpt, 2.5d-w3.ckpt, 2.5d-w5.ckpt, 2.5d-w7.ckpt, 3d.ckpt.
    #[arg(long, value_name = "DIR", conflicts_with = "init")]
    pub checkpoints: Option<PathBuf>,
    /// Time freshly initialised networks instead of checkpoints.
    #[arg(long)]
    pub init: bool,
    /// Volume to run on; a phantom of `dims` is used when absent.
    #[arg(long, value_name = "PATH")]
    pub volume: Option<PathBuf>,
    /// Phantom size as `slices rows cols`.
    #[arg(long)]
    pub dims: Option<String>,
    /// Timed runs per method (at least 3).
    #[arg(long)]
    pub repeats: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct GradcheckArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Scale one analytic gradient to check that failures are caught.
    #[arg(long, hide = true)]
    pub corrupt_backward: bool,
}

/// Config keys set by flags, in the order given.
pub(crate) fn overrides(pairs: &[(&'static str, Option<String>)], common: &CommonArgs) -> CliResult<Vec<(&'static str, String)>> {
    let mut out: Vec<(&'static str, String)> = Vec::new();
    for s in &common.set {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| CliError::Failure(format!("--set expects KEY=VALUE, got `{s}`")))?;
        let key = config::KEYS
            .iter()
            .find(|&&known| known == k.trim())
            .ok_or_else(|| CliError::Failure(format!("--set: unknown config key `{}`", k.trim())))?;
        out.push((key, v.to_string()));
    }
    if let Some(s) = common.seed {
        out.push(("seed", s.to_string()));
    }
    if let Some(o) = &common.out {
        out.push(("out", o.display().to_string()));
    }
    out.extend(pairs.iter().filter_map(|(k, v)| v.clone().map(|v| (*k, v))));
    Ok(out)
}

impl ModelArgs {
    pub(crate) fn pairs(&self) -> Vec<(&'static str, Option<String>)> {
        vec![
            ("variant", self.variant.clone()),
            ("window", self.window.map(|v| v.to_string())),
            ("depth", self.depth.map(|v| v.to_string())),
            ("width", self.width.map(|v| v.to_string())),
            ("precision", self.precision.clone()),
        ]
    }
}

/// Parses `args` (program name first) and runs the command, returning the
/// process exit code. Help and version requests exit 0; usage errors exit 1.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match commands::dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
