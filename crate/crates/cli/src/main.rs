//! `cohkern`: prepare data, cluster k-grams, train and reuse coherent
//! kernels, explain predictions and score filter coherence.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "cohkern", version, about = "Semantically coherent convolution kernels for sentence classification")]
struct Cli {
    /// Worker threads for parallel sections. Results are only guaranteed
    /// byte-identical across runs with the same thread count.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,

    /// Log verbosity: -v info, -vv debug.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Tokenize a labeled TSV dataset and write token and vocabulary files.
    Prepare(PrepareArgs),
    /// Select k-grams and cluster them in the Word2Vec + SentiWordNet space.
    Cluster(ClusterArgs),
    /// Train a classifier.
    Train(TrainArgs),
    /// Reuse the kernels of a trained checkpoint on another dataset.
    Transfer(TransferArgs),
    /// Highlight the words behind each prediction as HTML.
    Explain(ExplainArgs),
    /// Score the semantic coherence of every kernel in a checkpoint.
    Coherence(CoherenceArgs),
    /// Write a small synthetic corpus with embeddings and lexicons.
    Synth(SynthArgs),
    /// Re-run the command recorded in a run manifest.
    Replay(ReplayArgs),
}

/// Seed flag shared by every command. `COHKERN_SEED` replaces the default.
#[derive(Debug, Clone, Args, Serialize)]
pub struct SeedArg {
    #[arg(long, env = "COHKERN_SEED", default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct PrepareArgs {
    /// Labeled TSV: `<label>\t<text>` per line.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "labeled_tsv", value_parser = ["labeled_tsv"])]
    pub format: String,
    /// Output directory (created if missing).
    #[arg(long)]
    pub out: PathBuf,
    /// Truncate sentences to this many tokens.
    #[arg(long, default_value_t = cohkern::corpus::DEFAULT_MAX_LEN)]
    pub max_len: usize,
    /// Number of classes; inferred from the labels when omitted.
    #[arg(long)]
    pub n_classes: Option<usize>,
    /// Also write a seeded cross-validation fold plan with this many folds.
    #[arg(long)]
    pub folds: Option<usize>,
    #[command(flatten)]
    pub seed: SeedArg,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ClusterArgs {
    /// Training data to extract k-grams from.
    #[arg(long, required_unless_present = "kgrams")]
    pub data: Option<PathBuf>,
    /// Use this k-gram list (one k-gram per line) as the pool instead of
    /// extracting from data.
    #[arg(long)]
    pub kgrams: Option<PathBuf>,
    /// Word2Vec binary embeddings.
    #[arg(long)]
    pub w2v: PathBuf,
    /// SentiWordNet 3.0 TSV.
    #[arg(long)]
    pub sentiwordnet: PathBuf,
    /// Positive and negative opinion word lists; keeps only k-grams that
    /// contain an opinion word.
    #[arg(long, num_args = 2, value_names = ["POSITIVE", "NEGATIVE"])]
    pub opinion_lexicon: Option<Vec<PathBuf>>,
    /// Extra k-grams merged into the pool.
    #[arg(long)]
    pub external_kgrams: Option<PathBuf>,
    /// Shortlist heuristic; defaults to `opinion_filter` with an opinion
    /// lexicon, `external_list` with --kgrams, else `sample`.
    #[arg(long, value_parser = ["opinion_filter", "external_list", "sample"])]
    pub heuristic: Option<String>,
    #[arg(long, value_delimiter = ',', default_value = "3,4,5")]
    pub widths: Vec<usize>,
    #[arg(long, default_value_t = cohkern::cluster::DEFAULT_CLUSTERS_PER_WIDTH)]
    pub clusters_per_width: usize,
    /// Weight of the Word2Vec distance.
    #[arg(long, default_value_t = cohkern::cluster::DEFAULT_W2V_WEIGHT)]
    pub h1: f64,
    /// Weight of the SentiWordNet distance.
    #[arg(long, default_value_t = cohkern::cluster::DEFAULT_SENTI_WEIGHT)]
    pub h2: f64,
    #[arg(long, default_value_t = cohkern::select::DEFAULT_SAMPLE_BUDGET)]
    pub sample_budget: usize,
    /// Drop k-grams seen fewer times than this.
    #[arg(long, default_value_t = 1)]
    pub min_count: usize,
    #[arg(long, default_value_t = 100)]
    pub max_iters: usize,
    /// k-means restarts; the lowest objective wins.
    #[arg(long, default_value_t = 3)]
    pub n_init: usize,
    #[arg(long, default_value_t = cohkern::corpus::DEFAULT_MAX_LEN)]
    pub max_len: usize,
    /// Clustering file: `<width> <cluster> <tokens...>` per line.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub seed: SeedArg,
}

/// Optimization flags shared by `train` and `transfer`.
#[derive(Debug, Clone, Args, Serialize)]
pub struct FitArgs {
    #[arg(long)]
    pub train: PathBuf,
    /// Validation data for model selection; 10% of --train is held out when
    /// omitted.
    #[arg(long)]
    pub val: Option<PathBuf>,
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Word2Vec binary embeddings.
    #[arg(long)]
    pub w2v: PathBuf,
    /// L1 strengths to try; the best validation accuracy wins.
    #[arg(long, value_delimiter = ',', default_value = "1e-6,1e-7,1e-8")]
    pub lambda_sweep: Vec<f64>,
    #[arg(long, default_value_t = cohkern::train::DEFAULT_DROPOUT)]
    pub dropout: f64,
    #[arg(long, default_value_t = cohkern::train::DEFAULT_BATCH_SIZE)]
    pub batch: usize,
    #[arg(long, default_value_t = cohkern::train::DEFAULT_MAX_EPOCHS)]
    pub epochs: usize,
    /// Epochs without validation improvement before stopping; 0 disables.
    #[arg(long, default_value_t = cohkern::train::DEFAULT_PATIENCE)]
    pub patience: usize,
    #[arg(long, default_value_t = cohkern::corpus::DEFAULT_MAX_LEN)]
    pub max_len: usize,
    /// Number of classes; inferred from the labels when omitted.
    #[arg(long)]
    pub n_classes: Option<usize>,
    /// Checkpoint to write.
    #[arg(long, alias = "out")]
    pub out_checkpoint: PathBuf,
    /// Per-epoch CSV `epoch,objective,train_acc,val_acc,seconds` of the
    /// selected run.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long, default_value = "wka", value_parser = [
        "simple_avg", "weighted_avg", "ska", "wka", "cnn_static", "wka_ff",
    ])]
    pub model: String,
    /// Flexible filters as a fraction of the cluster kernels (wka_ff only;
    /// default 0.10).
    #[arg(long)]
    pub ff_fraction: Option<f64>,
    /// Clustering file from `cohkern cluster` (ska, wka, wka_ff).
    #[arg(long)]
    pub clusters: Option<PathBuf>,
    /// Kernel widths for cnn_static.
    #[arg(long, value_delimiter = ',', default_value = "3,4,5")]
    pub widths: Vec<usize>,
    /// Free kernels per width for cnn_static.
    #[arg(long, default_value_t = cohkern::model::DEFAULT_KERNELS_PER_WIDTH)]
    pub kernels_per_width: usize,
    /// Vectors for words missing from the embeddings.
    #[arg(long, default_value = "zero", value_parser = ["zero", "seeded_random"])]
    pub oov: String,
    /// Drop the classifier bias.
    #[arg(long)]
    pub no_bias: bool,
    #[command(flatten)]
    pub fit: FitArgs,
    #[command(flatten)]
    pub seed: SeedArg,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TransferArgs {
    #[arg(long)]
    pub source_checkpoint: PathBuf,
    #[arg(long, default_value = "fixed", value_parser = ["fixed", "fixed_ff"])]
    pub mode: String,
    /// Flexible filters as a fraction of the source kernels (fixed_ff).
    #[arg(long, default_value_t = 0.10)]
    pub ff_fraction: f64,
    #[command(flatten)]
    pub fit: FitArgs,
    #[command(flatten)]
    pub seed: SeedArg,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ExplainArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub w2v: PathBuf,
    /// One sentence per line; a leading `<label>\t` is ignored.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value = "unit", value_parser = ["unit", "classifier"])]
    pub weight_mode: String,
    /// Class names, one per line, for the page captions.
    #[arg(long)]
    pub class_names: Option<PathBuf>,
    #[arg(long, default_value_t = cohkern::corpus::DEFAULT_MAX_LEN)]
    pub max_len: usize,
    /// HTML file to write.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub seed: SeedArg,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CoherenceArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub w2v: PathBuf,
    #[arg(long)]
    pub sentiwordnet: PathBuf,
    /// k-gram list to match kernels against.
    #[arg(long, required_unless_present = "data")]
    pub kgrams: Option<PathBuf>,
    /// Labeled TSV to extract every k-gram from instead of --kgrams.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value_t = cohkern::cluster::DEFAULT_W2V_WEIGHT)]
    pub h1: f64,
    #[arg(long, default_value_t = cohkern::cluster::DEFAULT_SENTI_WEIGHT)]
    pub h2: f64,
    /// Top-matching k-grams per kernel used for the score.
    #[arg(long, default_value_t = cohkern::cluster::COHERENCE_TOP_N)]
    pub top_n: usize,
    /// Matching k-grams listed per kernel in the top-k-grams file.
    #[arg(long, default_value_t = 5)]
    pub show: usize,
    #[arg(long, default_value_t = cohkern::explain::DEFAULT_BIN_WIDTH)]
    pub bin_width: f64,
    /// CSV `filter_id,width,G,S`; the histogram and top k-grams go next to
    /// it as `<stem>.histogram.csv` and `<stem>.top_kgrams.csv`.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub seed: SeedArg,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SynthArgs {
    /// Output directory (created if missing).
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 200)]
    pub sentences: usize,
    #[command(flatten)]
    pub seed: SeedArg,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ReplayArgs {
    #[arg(long)]
    pub manifest: PathBuf,
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();
}

fn run(cli: Cli) -> cohkern::Result<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads.max(1))
        .build_global()
        .map_err(|e| cohkern::Error::Config(format!("cannot start thread pool: {e}")))?;
    match cli.command {
        Command::Replay(a) => {
            let m = manifest::RunManifest::load(&a.manifest)?;
            manifest::set_args(m.args.clone());
            let argv = std::iter::once("cohkern".to_string()).chain(m.args.iter().cloned());
            let replayed = Cli::try_parse_from(argv)
                .map_err(|e| cohkern::Error::Config(format!("manifest arguments do not parse: {e}")))?;
            if matches!(replayed.command, Command::Replay(_)) {
                return Err(cohkern::Error::Config("a manifest cannot replay another replay".into()));
            }
            dispatch(replayed.command)
        }
        other => dispatch(other),
    }
}

fn dispatch(command: Command) -> cohkern::Result<()> {
    match command {
        Command::Prepare(a) => commands::prepare(&a),
        Command::Cluster(a) => commands::cluster(&a),
        Command::Train(a) => commands::train(&a),
        Command::Transfer(a) => commands::transfer(&a),
        Command::Explain(a) => commands::explain(&a),
        Command::Coherence(a) => commands::coherence(&a),
        Command::Synth(a) => commands::synth(&a),
        Command::Replay(_) => unreachable!("handled by run"),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.verbose);
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_usage() { 2 } else { 1 })
        }
    }
}
