use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use genmix_core::attacks::AttackSpec;
use genmix_core::defense::WinnerMode;
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "genmix", version, about = "Mixture-of-generators adversarial purification for MNIST", args_override_self = true)]
pub struct Cli {
    /// `key = value` file supplying defaults; command-line flags win.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the LeNet5-style classifier on the MNIST train set.
    Pretrain(PretrainArgs),
    /// Train the generator mixture and discriminator against an attack roster.
    TrainDefense(TrainDefenseArgs),
    /// Post-defense accuracy of a trained ensemble on the MNIST test set.
    Evaluate(EvaluateArgs),
    /// Success rate of every roster attack on a seeded 128-image batch.
    AttackBench(AttackBenchArgs),
}

impl Command {
    pub const NAMES: [&'static str; 4] = ["pretrain", "train-defense", "evaluate", "attack-bench"];

    pub fn name(&self) -> &'static str {
        match self {
            Command::Pretrain(_) => "pretrain",
            Command::TrainDefense(_) => "train-defense",
            Command::Evaluate(_) => "evaluate",
            Command::AttackBench(_) => "attack-bench",
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct Common {
    /// Directory holding the standard MNIST IDX files (optionally gzipped).
    #[arg(long, env = "GENMIX_MNIST_DIR", default_value = "mnist")]
    pub mnist_dir: PathBuf,
    /// Output directory for artifacts and the run manifest.
    #[arg(long, env = "GENMIX_OUT", default_value = "runs")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Upper bound on worker threads.
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct PretrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[arg(long, default_value_t = 128)]
    pub batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Joint,
    Separate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Winner {
    Batch,
    Example,
}

impl From<Winner> for WinnerMode {
    fn from(w: Winner) -> Self {
        match w {
            Winner::Batch => WinnerMode::Batch,
            Winner::Example => WinnerMode::Example,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainDefenseArgs {
    #[command(flatten)]
    pub common: Common,
    /// Classifier checkpoint used to craft attacks.
    #[arg(long, value_name = "FILE")]
    pub classifier: PathBuf,
    /// Roster entry `KIND[:EPS[:key=val,...]]`; repeatable. Defaults to all nine attacks.
    #[arg(long = "attack", value_name = "SPEC")]
    pub attacks: Vec<AttackSpec>,
    /// Number of generators (defaults to the roster size).
    #[arg(long)]
    pub generators: Option<usize>,
    /// Competitive training epochs.
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    /// Identity-initialization epochs.
    #[arg(long, default_value_t = 10)]
    pub init_epochs: usize,
    #[arg(long, default_value_t = 128)]
    pub batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f32,
    #[arg(long, value_enum, default_value_t = Mode::Joint)]
    pub mode: Mode,
    /// Identity-initialize one generator and clone it with random weights zeroed.
    #[arg(long)]
    pub faster_init: bool,
    /// Fraction of weights zeroed in each clone.
    #[arg(long, default_value_t = 0.05)]
    pub perturb: f64,
    /// Single large generator instead of the mixture.
    #[arg(long)]
    pub large_generator: bool,
    /// Winner chosen per batch or per example.
    #[arg(long, value_enum, default_value_t = Winner::Batch)]
    pub winner: Winner,
    /// Save a checkpoint every N epochs (0 disables intermediate ones).
    #[arg(long, default_value_t = 10)]
    pub checkpoint_every: usize,
    /// Attack the transformed half once up front instead of per batch.
    #[arg(long)]
    pub cache_attacks: bool,
    /// Use only the first N images of each train half.
    #[arg(long, value_name = "N")]
    pub limit: Option<usize>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub common: Common,
    /// Directory holding the saved ensemble.
    #[arg(long, value_name = "DIR")]
    pub ensemble: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub classifier: PathBuf,
    /// Attacks to evaluate; defaults to the ensemble's training roster.
    #[arg(long = "attack", value_name = "SPEC")]
    pub attacks: Vec<AttackSpec>,
    #[arg(long, default_value_t = 500)]
    pub batch: usize,
    /// Write sample grids and heatmaps (PGM) into this directory.
    #[arg(long, value_name = "DIR")]
    pub emit_grids: Option<PathBuf>,
    /// Evaluate only the first N test images.
    #[arg(long, value_name = "N")]
    pub limit: Option<usize>,
    /// Setting name used in summary.csv.
    #[arg(long, default_value = "default")]
    pub setting: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Part {
    Train,
    Test,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct AttackBenchArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_name = "FILE")]
    pub classifier: PathBuf,
    /// Attacks to run; defaults to all nine.
    #[arg(long = "attack", value_name = "SPEC")]
    pub attacks: Vec<AttackSpec>,
    #[arg(long, default_value_t = 128)]
    pub batch: usize,
    /// MNIST part the batch is drawn from.
    #[arg(long, value_enum, default_value_t = Part::Train)]
    pub part: Part,
    /// Save each attacked batch under `<out>/attack_cache/`.
    #[arg(long)]
    pub cache_attacks: bool,
}
