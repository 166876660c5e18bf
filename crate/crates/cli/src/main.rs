mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sensorgraph::training::GraphRefresh;

#[derive(Parser, Debug)]
#[command(name = "sensorgraph", version, about = "Graph-attention soft sensing for multivariate process data")]
pub struct Cli {
    /// Random seed for data synthesis, initialization and shuffling.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// JSON training configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a synthetic dataset with known driver sensors.
    GenSynth(GenSynthArgs),
    /// Train a soft sensor for one target variable.
    Train(TrainArgs),
    /// Score a checkpoint on one split of a dataset.
    Evaluate(EvaluateArgs),
    /// Write per-window predictions.
    Predict(PredictArgs),
    /// Export correlation and attention matrices.
    Discover(DiscoverArgs),
    /// Train and score the key facility variables and write a comparison table.
    Benchmark(BenchmarkArgs),
}

#[derive(Args, Debug)]
pub struct GenSynthArgs {
    /// Output CSV; ground truth goes to `<out>.truth.json`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 6)]
    pub sensors: usize,
    #[arg(long, default_value_t = 600)]
    pub length: usize,
    /// 0-based driver sensor indices.
    #[arg(long, value_delimiter = ',', default_value = "1,2")]
    pub drivers: Vec<usize>,
    #[arg(long, default_value_t = 3)]
    pub lag: usize,
    /// Noise standard deviation relative to the clean target's.
    #[arg(long, default_value_t = 0.01)]
    pub noise: f64,
    #[arg(long)]
    pub nonlinear: bool,
    /// Loading of the latent mode shared by the drivers.
    #[arg(long, default_value_t = 1.0)]
    pub coupling: f64,
}

/// Every training hyperparameter, each overriding the config file.
#[derive(Args, Debug, Default, Clone)]
pub struct TrainFlags {
    #[arg(long)]
    pub embed_dim: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub graph_refresh: Option<GraphRefresh>,
    #[arg(long)]
    pub symmetric_graph: Option<bool>,
    /// Train, validation and test fractions.
    #[arg(long, value_delimiter = ',')]
    pub split: Option<Vec<f64>>,
    #[arg(long)]
    pub clip_norm: Option<f64>,
    #[arg(long)]
    pub beta1: Option<f64>,
    #[arg(long)]
    pub beta2: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Target column: a tag, or a 1-based column number.
    #[arg(long)]
    pub target: String,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub flags: TrainFlags,
}

#[derive(clap::ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitName {
    Train,
    Val,
    Test,
    All,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitName::Test)]
    pub split: SplitName,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset with every checkpoint variable, or only the inputs.
    #[arg(long)]
    pub data: PathBuf,
    /// Output CSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Windows scored per chunk.
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
}

#[derive(Args, Debug)]
pub struct DiscoverArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitName::Test)]
    pub split: SplitName,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct BenchmarkArgs {
    /// Facility CSV with the 23 process variables in table order.
    #[arg(long)]
    pub data: PathBuf,
    /// Output CSV.
    #[arg(long)]
    pub out: PathBuf,
    /// 1-based variable numbers.
    #[arg(long, value_delimiter = ',', default_value = "5,8,15,16,19,20")]
    pub variables: Vec<usize>,
    #[command(flatten)]
    pub flags: TrainFlags,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(commands::EXIT_CONFIG),
            };
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
