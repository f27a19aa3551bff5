use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "dclnet", version, about = "Phantom generation, training and evaluation for dual-label nerve segmentation")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// JSON config: PhantomConfig for gen-phantom, TrainConfig for train,
    /// ablate and model-summary. Unknown keys are rejected.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Output directory (a file for `eval`).
    #[arg(long, global = true, value_name = "PATH")]
    pub out: Option<PathBuf>,
    /// Overrides the seed of the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Allow writing into a non-empty output directory.
    #[arg(long, global = true)]
    pub overwrite: bool,
    /// Only print warnings and errors.
    #[arg(long, short, global = true)]
    pub quiet: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic T1w/FA dataset and its manifest.
    GenPhantom {
        /// Number of subjects.
        #[arg(long)]
        n: usize,
    },
    /// Turn a streamline file into binary label volumes.
    Voxelize {
        #[arg(long, value_name = "FILE")]
        streamlines: PathBuf,
        /// Volume header whose grid the labels are written on.
        #[arg(long, value_name = "FILE")]
        geometry: PathBuf,
        /// Minimum number of streamlines visiting a voxel.
        #[arg(long, default_value_t = 1)]
        tau: u32,
        /// Drop 26-connected components smaller than this.
        #[arg(long, default_value_t = 5, conflicts_with = "keep_largest")]
        min_island: usize,
        /// Keep only the largest component per class.
        #[arg(long)]
        keep_largest: bool,
        /// Class order of the output; defaults to order of first appearance.
        #[arg(long, value_delimiter = ',')]
        classes: Option<Vec<String>>,
    },
    /// Train one cross-validation fold.
    Train {
        #[arg(long, value_name = "FILE")]
        manifest: PathBuf,
        #[arg(long, default_value_t = 0)]
        fold: usize,
        /// Base settings when no --config is given.
        #[arg(long, default_value = "desk")]
        preset: String,
    },
    /// Train and evaluate every ablation row on shared folds.
    Ablate {
        #[arg(long, value_name = "FILE")]
        manifest: PathBuf,
        /// Folds to run (default: all).
        #[arg(long, value_delimiter = ',')]
        folds: Option<Vec<usize>>,
        #[arg(long, default_value = "desk")]
        preset: String,
    },
    /// Score a predicted label directory against the truth.
    Eval {
        #[arg(long, value_name = "DIR")]
        pred: PathBuf,
        #[arg(long, value_name = "DIR")]
        truth: PathBuf,
    },
    /// Segment one subject with a checkpoint.
    Predict {
        #[arg(long, value_name = "FILE")]
        checkpoint: PathBuf,
        #[arg(long, value_name = "FILE")]
        t1w: PathBuf,
        #[arg(long, value_name = "FILE")]
        fa: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
    },
    /// SVG loss curves from a training log and per-class bars from a metrics file.
    MetricsPlot {
        #[arg(long, value_name = "FILE")]
        log: Option<PathBuf>,
        #[arg(long, value_name = "FILE")]
        metrics: Option<PathBuf>,
    },
    /// Parameter counts per module.
    ModelSummary {
        #[arg(long, value_name = "FILE")]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value = "desk")]
        preset: String,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::GenPhantom { .. } => "gen-phantom",
            Command::Voxelize { .. } => "voxelize",
            Command::Train { .. } => "train",
            Command::Ablate { .. } => "ablate",
            Command::Eval { .. } => "eval",
            Command::Predict { .. } => "predict",
            Command::MetricsPlot { .. } => "metrics-plot",
            Command::ModelSummary { .. } => "model-summary",
        }
    }
}
