//! Command-line interface of the `grasp` executable.

mod commands;
mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::predictor::{AdjacencyNorm, HeadKind, Hyper, ModelConfig, Readout};
use crate::search::FitConfig;
use crate::shapes::TensorShape;

#[derive(Debug, Parser)]
#[command(
    name = "grasp",
    version,
    about = "Kronecker search-space sampling, ranking GCN predictor and predictor-guided search",
    args_override_self = true
)]
pub struct Cli {
    /// TOML file supplying flag defaults
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Master seed; every random stream is derived from it
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads; 0 uses every core
    #[arg(long, global = true, default_value_t = 0)]
    pub jobs: usize,
    /// Log verbosity (-v info, -vv debug)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample unique architectures, one `<hash>.json` each
    Sample(SampleArgs),
    /// Print the vertex shapes of one architecture
    Shapes(ShapesArgs),
    /// Manage a benchmark store
    Store {
        #[command(subcommand)]
        action: StoreCommand,
    },
    /// Train a predictor on store records
    Train(TrainArgs),
    /// Evaluate a trained predictor on store records
    Eval(EvalArgs),
    /// Predictor-guided search against the synthetic oracle
    Search(SearchArgs),
    /// Ranking-evolution curves and cross-dataset tables
    Analyze(AnalyzeArgs),
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub count: usize,
    #[arg(long, default_value_t = crate::search_space::DEFAULT_EDGE_PROB)]
    pub edge_prob: f64,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ShapesArgs {
    /// Architecture JSON file
    #[arg(long)]
    pub arch: PathBuf,
    /// Input shape as CxHxW
    #[arg(long)]
    pub input: TensorShape,
    /// Normalizer maxima as CxHxW
    #[arg(long)]
    pub max: Option<TensorShape>,
}

#[derive(Debug, Args)]
pub struct StoreArg {
    /// Store directory
    #[arg(long, env = "GRASP_STORE")]
    pub store: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum StoreCommand {
    /// Create an empty store
    Init(StoreArg),
    /// Add architectures, optionally with synthetic logs
    Add(AddArgs),
    /// Merge external training logs
    Ingest(IngestArgs),
    /// Print record counts as JSON
    Stats(StoreArg),
}

#[derive(Debug, Args)]
pub struct AddArgs {
    #[command(flatten)]
    pub store: StoreArg,
    /// Architecture JSON file or directory of them
    #[arg(long)]
    pub arch: PathBuf,
    /// Built-in profiles to fill with synthetic logs
    #[arg(long, value_delimiter = ',')]
    pub synthetic: Vec<String>,
    #[arg(long, default_value_t = crate::store::DEFAULT_TOTAL_EPOCHS)]
    pub total_epochs: u32,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[command(flatten)]
    pub store: StoreArg,
    /// Log file or directory of log files
    #[arg(long)]
    pub path: PathBuf,
    /// Dataset name overriding the one in the logs
    #[arg(long)]
    pub dataset: Option<String>,
}

/// Predictor architecture and optimization flags.
#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    /// GCN width
    #[arg(long, default_value_t = ModelConfig::default().units)]
    pub units: usize,
    #[arg(long, default_value_t = ModelConfig::default().layers)]
    pub layers: usize,
    /// Pool every layer's output instead of the last one only
    #[arg(long)]
    pub dense_skip: bool,
    /// Single logit on the concatenated embeddings instead of the antisymmetric head
    #[arg(long)]
    pub concat_head: bool,
    /// Drop the vertex-shape features
    #[arg(long)]
    pub no_vertex_shapes: bool,
    /// Normalize the directed adjacency instead of its symmetrization
    #[arg(long)]
    pub directed: bool,
    /// Predictor training epochs
    #[arg(long, default_value_t = FitConfig::default().epochs)]
    pub epochs: usize,
    /// Labeled pairs per fit; 0 uses every ordered pair
    #[arg(long, default_value_t = 4096)]
    pub max_pairs: usize,
    #[arg(long, default_value_t = 128)]
    pub batch_size: usize,
    #[arg(long, default_value_t = Hyper::default().lr)]
    pub lr: f64,
    #[arg(long, default_value_t = Hyper::default().weight_decay)]
    pub weight_decay: f64,
}

impl FitArgs {
    pub fn to_config(&self) -> FitConfig {
        FitConfig {
            model: ModelConfig {
                units: self.units,
                layers: self.layers,
                readout: if self.dense_skip { Readout::DenseSkip } else { Readout::Final },
                head: if self.concat_head { HeadKind::Concat } else { HeadKind::Antisymmetric },
            },
            hyper: Hyper {
                lr: self.lr,
                weight_decay: self.weight_decay,
                ..Hyper::default()
            },
            epochs: self.epochs,
            batch_size: self.batch_size,
            max_pairs: (self.max_pairs > 0).then_some(self.max_pairs),
            vertex_shapes: !self.no_vertex_shapes,
            adjacency: if self.directed { AdjacencyNorm::Directed } else { AdjacencyNorm::Symmetric },
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub store: StoreArg,
    #[arg(long, default_value = "cifar10")]
    pub dataset: String,
    /// Epoch whose accuracies label the pairs
    #[arg(long)]
    pub label_epoch: u32,
    #[command(flatten)]
    pub fit: FitArgs,
    /// Checkpoint path
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Split {
    Train,
    Val,
    All,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub store: StoreArg,
    #[arg(long, default_value = "cifar10")]
    pub dataset: String,
    /// Records to evaluate; the split depends on --seed as in training
    #[arg(long, value_enum, default_value = "val")]
    pub split: Split,
    /// Ground-truth epoch; defaults to each record's last epoch
    #[arg(long)]
    pub epoch: Option<u32>,
    /// Report path; stdout when absent
    #[arg(long)]
    pub metrics: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SearchArgs {
    /// Number of architectures sampled into the pool
    #[arg(long)]
    pub pool: usize,
    #[arg(long)]
    pub iters: usize,
    #[arg(long)]
    pub per_iter: usize,
    #[arg(long, default_value = "cifar10")]
    pub profile: String,
    /// Epoch at which the oracle reports accuracies
    #[arg(long, default_value_t = crate::store::DEFAULT_TOTAL_EPOCHS)]
    pub label_epoch: u32,
    #[arg(long, default_value_t = crate::store::DEFAULT_TOTAL_EPOCHS)]
    pub total_epochs: u32,
    #[arg(long, default_value_t = crate::search_space::DEFAULT_EDGE_PROB)]
    pub edge_prob: f64,
    #[command(flatten)]
    pub fit: FitArgs,
    /// Trace CSV path
    #[arg(long)]
    pub trace: PathBuf,
    /// Best architecture JSON path
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long, env = "GRASP_STORE")]
    pub store: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<String>,
    /// Cutoff; curves default to 10, cross tables to the full list
    #[arg(long)]
    pub k: Option<usize>,
    /// Stores whose datasets form the cross-dataset table
    #[arg(long, num_args = 1.., value_name = "STORE")]
    pub cross: Vec<PathBuf>,
    /// Per-epoch relevance-change counts CSV
    #[arg(long)]
    pub changes: Option<PathBuf>,
    /// Output path; stdout when absent
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses `argv` (including the program name), runs the command and returns
/// the process exit code: 0 on success, 1 on domain errors, 2 on usage errors.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let argv = match config::expand(argv) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .try_init();
    log::info!("resolved config: {cli:?}");
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.jobs).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    match pool.install(|| commands::run(&cli)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
