use std::net::IpAddr;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use cownter_core::inference::ModelKind;
use cownter_core::synthgen::Split;
use cownter_core::trainer::Monitor;

#[derive(Debug, Parser)]
#[command(name = "cownter", version, about = "Point-supervised cattle counting")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic pasture dataset.
    Synth(SynthArgs),
    /// Cut a scene image into a tile dataset.
    Tile(TileArgs),
    /// Train a counting model on a dataset.
    Train(TrainArgs),
    /// Evaluate models on a dataset split.
    Eval(EvalArgs),
    /// Count and locate cattle in one image.
    Predict(PredictArgs),
    /// Serve the annotation API for a dataset.
    Annotate(AnnotateArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub tiles: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Fraction of tiles containing cattle.
    #[arg(long, conflicts_with = "weights")]
    pub imbalance: Option<f64>,
    /// Count-bin weights for 0, 1-10, 11-100 and 101+ cattle.
    #[arg(long, value_delimiter = ',')]
    pub weights: Option<Vec<f64>>,
    #[arg(long, default_value_t = 500)]
    pub size: usize,
    #[arg(long, default_value_t = 0.4)]
    pub gsd: f64,
    /// Expected distractors per tile.
    #[arg(long, default_value_t = 4.0)]
    pub distractors: f64,
    /// Train/val/test fractions.
    #[arg(long, value_delimiter = ',', num_args = 3, default_values_t = [0.6, 0.2, 0.2])]
    pub splits: Vec<f64>,
}

#[derive(Debug, Args)]
pub struct TileArgs {
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 500)]
    pub tile_size: usize,
    /// Defaults to the tile size.
    #[arg(long)]
    pub stride: Option<usize>,
    /// Reflect-pad border tiles instead of dropping them.
    #[arg(long)]
    pub pad: bool,
    /// JSON list of scene points `[{"x":..,"y":..}]`.
    #[arg(long)]
    pub points: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModelArg {
    Lcfcn,
    Density,
}

impl From<ModelArg> for ModelKind {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::Lcfcn => ModelKind::Lcfcn,
            ModelArg::Density => ModelKind::Density,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MonitorArg {
    Mape,
    Loss,
}

impl From<MonitorArg> for Monitor {
    fn from(m: MonitorArg) -> Self {
        match m {
            MonitorArg::Mape => Monitor::ValMape,
            MonitorArg::Loss => Monitor::ValLoss,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum)]
    pub model: ModelArg,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[arg(long, default_value_t = 8)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Defaults to 10, capped at the epoch limit.
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long, value_enum, default_value_t = MonitorArg::Mape)]
    pub monitor: MonitorArg,
    /// Also write the training log to this file.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// One trained model per seed.
    #[arg(long = "model", required_unless_present = "oracle")]
    pub models: Vec<PathBuf>,
    #[arg(long, default_value_t = 4)]
    pub grid: usize,
    /// Expected number of models (one per training seed).
    #[arg(long)]
    pub seeds: Option<usize>,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    pub split: SplitArg,
    /// Score the ground truth against itself.
    #[arg(long, conflicts_with = "models")]
    pub oracle: bool,
    /// Per-image rows.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Write the report here instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub overlay: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AnnotateArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// 0 picks a free port.
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: IpAddr,
    /// Directory with the built frontend bundle.
    #[arg(long)]
    pub ui: Option<PathBuf>,
}
