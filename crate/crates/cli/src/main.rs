//! `l2q`: train, export, evaluate, benchmark and probe quantized graph
//! convolution models.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use l2q_core::train::RegScope;
use l2q_core::Variant;

#[derive(Debug, Parser)]
#[command(
    name = "l2q",
    version,
    about = "1-bit layer-wise quantized graph convolution for Top-K recommendation"
)]
struct Cli {
    /// Seed for splitting, initialization and sampling.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 1 is the single-threaded reference mode, 0 uses all cores.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Directory receiving every artifact.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a model and write checkpoint, table, history and resolved config.
    Train(TrainArgs),
    /// Rank with an exported table and report Recall/NDCG per cutoff.
    Eval(EvalArgs),
    /// Pack the codes of a trained checkpoint into a table file.
    Export(ExportArgs),
    /// Time table scoring against the fp32 path.
    Bench(BenchArgs),
    /// Loss over a grid of embedding shifts.
    Landscape(LandscapeArgs),
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Edge-list file or `synthetic:<users>x<items>x<edges>:<seed>`.
    #[arg(long)]
    pub data: Option<String>,
    /// Resolved config of an earlier run; supplies data, split and model settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Iteratively drop users and items with fewer interactions.
    #[arg(long)]
    pub min_degree: Option<usize>,
    /// Share of each user's interactions held out for testing.
    #[arg(long)]
    pub test_fraction: Option<f64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    End,
    Anl,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum RegScopeArg {
    All,
    Batch,
}

impl From<RegScopeArg> for RegScope {
    fn from(r: RegScopeArg) -> Self {
        match r {
            RegScopeArg::All => RegScope::All,
            RegScopeArg::Batch => RegScope::Batch,
        }
    }
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Model variant: end, anl, full, wo-tq, wo-bpr, wo-rec, wo-raf, in-lf, wo-at.
    #[arg(long, conflicts_with = "mode")]
    pub variant: Option<Variant>,
    /// Shorthand for `--variant end` or `--variant anl`.
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Propagation layers L.
    #[arg(long)]
    pub layers: Option<usize>,
    /// Code width d; also the embedding width unless `--embed-dim` is given.
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub embed_dim: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub l2: Option<f64>,
    #[arg(long, value_enum)]
    pub reg_scope: Option<RegScopeArg>,
    /// First quantized epoch of an annealed run.
    #[arg(long)]
    pub trigger_epoch: Option<usize>,
    /// Evaluate every this many epochs (0 disables per-epoch evaluation).
    #[arg(long)]
    pub eval_every: Option<usize>,
    /// Stop after this many evaluations without improvement.
    #[arg(long)]
    pub patience: Option<usize>,
    /// Cutoffs of the final evaluation.
    #[arg(long, value_delimiter = ',')]
    pub ks: Option<Vec<usize>>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub table: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_delimiter = ',')]
    pub ks: Option<Vec<usize>>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub table: PathBuf,
    /// Checkpoint providing the fp32 representations.
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Users scored per pass (cycling through the user list).
    #[arg(long, default_value_t = 1000)]
    pub users: usize,
    #[arg(long, default_value_t = 20)]
    pub k: usize,
    /// Timed passes per path; the median is reported.
    #[arg(long, default_value_t = 5)]
    pub repetitions: usize,
}

#[derive(Debug, Args)]
pub struct LandscapeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Probe with quantization masked.
    #[arg(long)]
    pub masked: bool,
    /// Largest |p| on both axes.
    #[arg(long, default_value_t = 0.5)]
    pub max: f64,
    #[arg(long, default_value_t = 0.01)]
    pub step: f64,
    /// Positives in the probe batch; defaults to the training batch size.
    #[arg(long)]
    pub probe_size: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
