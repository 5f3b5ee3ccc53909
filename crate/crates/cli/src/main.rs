//! `ilmt`: split a parallel corpus, index it, translate with retrieval-augmented
//! prompting strategies, and score the results.
//!
//! Exit codes: 0 success, 1 other failure, 2 configuration error, 3 data
//! error, 4 backend error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tracing_subscriber::EnvFilter;

use config::BackendKind;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("backend error: {0}")]
    Backend(String),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Other(_) => 1,
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Backend(_) => 4,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "ilmt",
    version,
    about = "Retrieval-augmented LLM translation for low-resource languages"
)]
struct Cli {
    /// TOML file with defaults for any flag.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Split seed for `split`; base run seed for `translate`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Concurrent sentences during `translate`.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[arg(long, global = true, value_enum)]
    backend: Option<BackendKind>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Randomly split a corpus into test and reference sets.
    Split(SplitArgs),
    /// Embed the reference set and cache the vectors.
    Index(IndexArgs),
    /// Translate the test set with one or more prompting strategies.
    Translate(Box<TranslateArgs>),
    /// Score a records file.
    Evaluate(EvaluateArgs),
    /// Print the table for one or more CSV reports.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub test_size: Option<usize>,
    /// Manifest path [default: split.manifest]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct IndexArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub split: Option<PathBuf>,
    /// Index cache path [default: index.tsv]
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// `hash`, `table:PATH` or `remote:MODEL:DIM` [default: hash]
    #[arg(long)]
    pub sentence_embeddings: Option<String>,
}

#[derive(Debug, Args)]
pub struct TranslateArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub split: Option<PathBuf>,
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    /// Index cache written by `index`; built on the fly when absent.
    #[arg(long)]
    pub index: Option<PathBuf>,
    /// Output directory [default: out]
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// `zeroshot`, `nshot`, `knn_rpc`, `cot`, `lfm`, or a full label such as
    /// `knn_rpc:k=10`. Repeatable.
    #[arg(long = "strategy")]
    pub strategies: Vec<String>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub q: Option<usize>,
    #[arg(long)]
    pub n_shots: Option<usize>,
    #[arg(long)]
    pub runs: Option<usize>,
    /// Write one transcript per (sentence, strategy, run) under this directory.
    #[arg(long)]
    pub dump_prompts: Option<PathBuf>,
    /// Recorded responses for the mock-replay backend.
    #[arg(long)]
    pub fixture: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<String>,
    /// Chat-completion URL for the live backend.
    #[arg(long)]
    pub endpoint: Option<String>,
    /// Target language name used in prompts [default: Amis]
    #[arg(long)]
    pub language: Option<String>,
    /// Reuse CoT results as LFM trials when both strategies run.
    #[arg(long)]
    pub reuse_cot_trials: bool,
    #[arg(long)]
    pub char_budget: Option<usize>,
    #[arg(long)]
    pub gloss_threshold: Option<f64>,
    /// `hash`, `table:PATH` or `remote:MODEL:DIM` [default: hash]
    #[arg(long)]
    pub sentence_embeddings: Option<String>,
    /// `hash`, `none`, `table:PATH` or `remote:MODEL:DIM` [default: hash]
    #[arg(long)]
    pub word_embeddings: Option<String>,
    #[arg(long)]
    pub requests_per_minute: Option<u32>,
    /// `cumulative` or `order-only` [default: cumulative]
    #[arg(long)]
    pub bleu_mode: Option<String>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub records: PathBuf,
    /// Corpus the records were produced from; ids and references are checked.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Directory for report.csv and report.txt.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub bleu_mode: Option<String>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long = "csv", required = true)]
    pub csv: Vec<PathBuf>,
    #[arg(long)]
    pub bleu_mode: Option<String>,
}

/// Flags shared by every command.
pub struct Global {
    pub file: config::FileConfig,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub backend: Option<BackendKind>,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let file = match &cli.config {
        Some(path) => config::FileConfig::load(path)?,
        None => config::FileConfig::default(),
    };
    let global = Global {
        file,
        seed: cli.seed,
        workers: cli.workers,
        backend: cli.backend,
    };
    match cli.command {
        Command::Split(args) => commands::split(&global, args),
        Command::Index(args) => commands::index(&global, args),
        Command::Translate(args) => commands::translate(&global, *args),
        Command::Evaluate(args) => commands::evaluate(&global, args),
        Command::Report(args) => commands::report(&global, args),
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")),
        )
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ilmt: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
