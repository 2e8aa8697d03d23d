mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use crate::config::{Config, GlobalOpts};

/// Question answering over slide decks.
///
/// Exit codes: 0 success, 2 usage or input error, 3 backend or runtime error.
#[derive(Debug, Parser)]
#[command(name = "deckagent", version)]
struct Cli {
    #[command(flatten)]
    global: GlobalOpts,
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Validate an extracted document, merge nearby text boxes and write the result.
    Ingest {
        input: PathBuf,
        out: PathBuf,
    },
    /// Build the knowledge base for an ingested document.
    Build {
        doc: PathBuf,
        /// Defaults to `<kb-dir>/<doc_id>`.
        kb: Option<PathBuf>,
        /// Keep whatever an earlier interrupted build persisted.
        #[arg(long)]
        resume: bool,
        #[arg(long)]
        skip_refine: bool,
        /// Recorded in the build metadata.
        #[arg(long)]
        timestamp: Option<String>,
    },
    /// Answer one question against a built knowledge base.
    Query {
        kb: PathBuf,
        question: String,
        /// Answer from these pages and skip retrieval, e.g. `--gt-pages 2,4`.
        #[arg(long, value_delimiter = ',')]
        gt_pages: Option<Vec<u32>>,
        /// Print the final answer as JSON.
        #[arg(long)]
        json: bool,
        /// Save the full trace under `<kb>/traces/`.
        #[arg(long)]
        trace: bool,
        /// Document directory, when it moved since the build.
        #[arg(long)]
        doc: Option<PathBuf>,
    },
    /// End-to-end answer evaluation over a JSONL dataset.
    Eval {
        dataset: PathBuf,
        #[arg(long, default_value_t = 1)]
        threads: usize,
        /// Use each row's gold pages instead of retrieval.
        #[arg(long)]
        gt_pages: bool,
        #[arg(long, value_enum, default_value_t = Overall::RecordMean)]
        overall: Overall,
        /// Relative tolerance for numeric answers.
        #[arg(long, default_value_t = 0.0)]
        rel_tol: f64,
        /// Report path; defaults to `<reports-dir>/eval.json`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Page-retrieval metrics over a retriever × index-mode × subquery grid.
    RankEval {
        dataset: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "bm25,dense")]
        retrievers: Vec<deckagent_core::Retriever>,
        #[arg(long, value_delimiter = ',', default_value = "1,3,5")]
        ks: Vec<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Overall {
    RecordMean,
    RouteMean,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = Config::resolve(&cli.global).and_then(|config| commands::run(cli.command, &config));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
