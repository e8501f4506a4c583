use std::path::PathBuf;

use clap::{ArgGroup, Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "roomembed", version, about = "Room-acoustic embeddings from reverberant speech")]
pub struct Cli {
    /// JSON configuration file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Master seed (overrides the config).
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate random shoebox rooms and write a RIR store.
    GenRirs(GenRirs),
    /// Pair a RIR store with source segments into a dataset manifest.
    BuildDataset(BuildDataset),
    /// Train the encoder with the contrastive objective.
    TrainUpstream(TrainUpstream),
    /// Train a task head on a frozen encoder, or a supervised baseline.
    TrainDownstream(TrainDownstream),
    /// Score a downstream run on one split.
    Evaluate(Evaluate),
    /// Write encoder embeddings of a dataset to CSV.
    ExportEmbeddings(ExportEmbeddings),
    /// Run the strategy x temperature x task grid.
    Grid(Grid),
}

#[derive(Debug, Args)]
pub struct GenRirs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 64)]
    pub count_rooms: usize,
    #[arg(long, default_value_t = 2)]
    pub rirs_per_room: usize,
    /// Prefix of the generated room ids; use distinct prefixes for the
    /// upstream and downstream stores.
    #[arg(long, default_value = "room-")]
    pub prefix: String,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("sources").required(true).args(["speech_dir", "synthetic"])))]
pub struct BuildDataset {
    /// RIR store written by gen-rirs.
    #[arg(long)]
    pub rirs: PathBuf,
    #[arg(long)]
    pub speech_dir: Option<PathBuf>,
    /// Use generated speech-like sources instead of recordings.
    #[arg(long)]
    pub synthetic: bool,
    #[arg(long, value_parser = ["upstream", "downstream"])]
    pub role: String,
    /// Upstream dataset whose rooms a downstream dataset must not reuse.
    #[arg(long)]
    pub disjoint_from: Option<PathBuf>,
    /// Fraction of the published split sizes.
    #[arg(long)]
    pub scale: Option<f64>,
    /// Segment duration in seconds.
    #[arg(long)]
    pub segment_s: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct TrainUpstream {
    /// Upstream dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_parser = ["soft", "hard", "pos-independent"])]
    pub strategy: Option<String>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("model").required(true).args(["encoder", "supervised"])))]
pub struct TrainDownstream {
    /// Checkpoint whose encoder is frozen.
    #[arg(long)]
    pub encoder: Option<PathBuf>,
    /// Train encoder and head end to end from scratch instead.
    #[arg(long)]
    pub supervised: bool,
    /// Downstream dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_parser = ["rt60", "c50", "volume"])]
    pub task: String,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct Evaluate {
    /// Downstream run directory.
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long, default_value = "test", value_parser = ["train", "val", "test"])]
    pub split: String,
    /// Dataset to score; defaults to the one the run was trained on.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Metrics CSV; defaults to `eval-<split>.csv` in the run directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportEmbeddings {
    /// Any checkpoint holding an encoder.
    #[arg(long)]
    pub encoder: PathBuf,
    /// Dataset directory.
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, value_parser = ["train", "val", "test"])]
    pub split: Option<String>,
    /// Output CSV file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct Grid {
    #[arg(long)]
    pub upstream: PathBuf,
    #[arg(long)]
    pub downstream: PathBuf,
    /// Worker threads; 0 uses every core.
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub force: bool,
}
