//! `wordsel`: build indexes, train and evaluate word-selection query
//! formulation models, and rewrite natural-language requests into keyword queries.

mod commands;
mod config;
mod failure;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::FileConfig;
use crate::failure::Failure;

#[derive(Parser, Debug)]
#[command(name = "wordsel", version, about = "Natural-language to keyword query formulation")]
struct Cli {
    /// Seed for every stochastic step (required by train, evaluate and synth).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for reward evaluation and folds.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build and save a BM25 index from a JSON-lines corpus.
    Index(IndexArgs),
    /// Train a selection model (smt, rl or smt+rl) and write a checkpoint.
    Train(TrainArgs),
    /// Cross-validate the baselines and write the comparison report.
    Evaluate(EvalArgs),
    /// Turn a natural-language request into a keyword query.
    Rewrite(RewriteArgs),
    /// Pair count, mean description length and mean duplicate words.
    Stats(StatsArgs),
    /// Generate a synthetic corpus, pairs, topics, qrels and word vectors.
    Synth(SynthArgs),
}

#[derive(Args, Debug, Default)]
pub struct DataArgs {
    /// JSON-lines corpus with `id` and `text` fields.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Prebuilt index (instead of --corpus).
    #[arg(long)]
    pub index: Option<PathBuf>,
    /// JSON-lines pairs with `topic_id`, `nl` and `query` fields.
    #[arg(long)]
    pub pairs: Option<PathBuf>,
    /// Tag-delimited topic file (instead of --pairs).
    #[arg(long)]
    pub topics: Option<PathBuf>,
    /// Relevance judgments, `topic 0 doc relevance` per line.
    #[arg(long)]
    pub qrels: Option<PathBuf>,
    /// Text word-vector file (`count dim` header).
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Whitespace-separated stopword list.
    #[arg(long)]
    pub stopwords: Option<PathBuf>,
    #[arg(long)]
    pub k1: Option<f64>,
    #[arg(long)]
    pub b: Option<f64>,
    /// Ranking depth used for rewards and evaluation.
    #[arg(long)]
    pub rank_depth: Option<usize>,
}

#[derive(Args, Debug, Default)]
pub struct TrainFlags {
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub mle_iterations: Option<usize>,
    #[arg(long)]
    pub rl_iterations: Option<usize>,
    #[arg(long)]
    pub adam_lr: Option<f64>,
    #[arg(long)]
    pub sgd_lr: Option<f64>,
    #[arg(long)]
    pub baseline_decay: Option<f64>,
    #[arg(long)]
    pub rl_samples: Option<usize>,
}

#[derive(Args, Debug)]
pub struct IndexArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub stopwords: Option<PathBuf>,
    #[arg(long)]
    pub k1: Option<f64>,
    #[arg(long)]
    pub b: Option<f64>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub train: TrainFlags,
    /// smt, rl or smt+rl.
    #[arg(long)]
    pub mode: Option<String>,
    /// Checkpoint path.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Run manifest path (default: `<out>.manifest.jsonl`).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub train: TrainFlags,
    #[arg(long)]
    pub folds: Option<usize>,
    /// Comma-separated subset of NL, Q, QBIN, Random, SMT, RL, SMT+RL.
    #[arg(long, value_delimiter = ',')]
    pub baselines: Option<Vec<String>>,
    /// Directory for report.tsv, report.txt, report.json and manifest.jsonl.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct RewriteArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Overrides the vector file recorded in the checkpoint.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Request text; read from standard input when absent or `-`.
    pub text: Vec<String>,
}

#[derive(Args, Debug)]
pub struct StatsArgs {
    #[command(flatten)]
    pub data: DataArgs,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub docs: Option<usize>,
    #[arg(long)]
    pub pairs: Option<usize>,
    #[arg(long)]
    pub vocab: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
}

fn run(cli: Cli) -> Result<(), Failure> {
    let file = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    if let Some(n) = cli.threads.or(file.threads) {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::usage(format!("cannot configure {n} threads: {e}")))?;
    }
    let ctx = commands::Ctx { seed: cli.seed, file };
    match &cli.command {
        Command::Index(a) => commands::index(&ctx, a),
        Command::Train(a) => commands::train(&ctx, a),
        Command::Evaluate(a) => commands::evaluate_cmd(&ctx, a),
        Command::Rewrite(a) => commands::rewrite_cmd(&ctx, a),
        Command::Stats(a) => commands::stats(&ctx, a),
        Command::Synth(a) => commands::synth(&ctx, a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", f.line());
            ExitCode::from(f.code() as u8)
        }
    }
}
