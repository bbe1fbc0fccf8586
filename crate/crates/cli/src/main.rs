//! `medforum`: command-line front end for the medical forum pipeline.

mod commands;
mod config;
mod table;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use medforum::classifier::ArchitectureKind;
use medforum::retrieval::RankMode;
use medforum::suggestion::LabelSource;

use config::RunConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Data(#[from] medforum::Error),
    /// A check ran and did not pass.
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Data(medforum::Error::InvalidArgument(_)) => 1,
            CliError::Data(_) | CliError::Failed(_) => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "medforum",
    version,
    about = "Medical forum sentiment, similar-post retrieval and treatment suggestion"
)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// Seed for every random choice
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON run configuration; explicit flags take precedence
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Machine-readable JSON on standard output
    #[arg(long, global = true)]
    json: bool,
    /// Worker threads for training and retrieval scoring
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Corpus as JSON lines or a saved store (default: bundled synthetic corpus)
    #[arg(long, global = true, value_name = "FILE")]
    corpus: Option<PathBuf>,
    /// word2vec text embeddings (default: seeded random vectors over the corpus vocabulary)
    #[arg(long, global = true, value_name = "FILE")]
    embeddings: Option<PathBuf>,
    /// Concept lexicon TSV (default: bundled starter lexicon)
    #[arg(long, global = true, value_name = "FILE")]
    lexicon: Option<PathBuf>,
    /// Stop-word list, one per line (default: bundled English list)
    #[arg(long, global = true, value_name = "FILE")]
    stopwords: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Load and validate a corpus; optionally save it as a binary store
    Ingest {
        #[arg(long, value_name = "FILE")]
        store: Option<PathBuf>,
    },
    /// Disease, symptom and treatment concepts per post
    ExtractConcepts {
        /// Restrict to these post ids
        #[arg(long = "id", value_name = "ID")]
        ids: Vec<String>,
        /// Extract from free text instead of the corpus
        #[arg(long, conflicts_with = "ids")]
        text: Option<String>,
    },
    /// Train a classifier and save it, or cross-validate with --cv
    Train(TrainArgs),
    /// Predict sentiment with a saved model
    Classify {
        #[arg(long, value_name = "FILE")]
        model: Option<PathBuf>,
        #[arg(long, conflicts_with = "ids")]
        text: Option<String>,
        /// Classify these corpus posts (default: all)
        #[arg(long = "id", value_name = "ID")]
        ids: Vec<String>,
    },
    /// Top-N most similar posts to a query post
    Retrieve {
        #[arg(long, value_name = "ID")]
        query_id: String,
        #[arg(long)]
        top: Option<usize>,
        /// full or text_only
        #[arg(long)]
        mode: Option<RankMode>,
    },
    /// Treatments whose score clears the threshold for a query post
    Suggest(SuggestArgs),
    /// Score retrieval against relevance judgments
    Evaluate {
        /// query_id, retrieved_id, rating, annotator_id per tab-separated line (default: bundled sample)
        #[arg(long, value_name = "FILE")]
        judgments: Option<PathBuf>,
        #[arg(long)]
        top: Option<usize>,
        /// full or text_only
        #[arg(long)]
        mode: Option<RankMode>,
        /// Median rating at which a retrieved post counts as relevant
        #[arg(long, default_value_t = medforum::metrics::DEFAULT_RELEVANCE_THRESHOLD)]
        threshold: f64,
    },
    /// Compare analytic and numeric gradients on toy-sized networks
    Gradcheck {
        /// One architecture (default: all four)
        #[arg(long)]
        architecture: Option<ArchitectureKind>,
        #[arg(long, default_value_t = medforum::neural::DEFAULT_EPSILON)]
        epsilon: f64,
    },
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// cnn, lstm, cnn-lstm or cnn-lstm-cnn
    #[arg(long)]
    architecture: Option<ArchitectureKind>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Epochs without validation improvement before stopping; 0 disables
    #[arg(long)]
    patience: Option<usize>,
    /// Run stratified k-fold cross-validation instead of saving a model
    #[arg(long, value_name = "K")]
    cv: Option<usize>,
    /// Where to write the trained model
    #[arg(long, value_name = "FILE")]
    model: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SuggestArgs {
    #[arg(long, value_name = "ID")]
    query_id: String,
    #[arg(long)]
    tau: Option<f64>,
    /// Additive smoothing for the positive-outcome rate
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    max_per_disease: Option<usize>,
    /// gold, predicted or gold_then_predicted
    #[arg(long)]
    labels: Option<LabelSource>,
    /// Model supplying predicted labels
    #[arg(long, value_name = "FILE")]
    model: Option<PathBuf>,
}

fn resolve_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let g = &cli.global;
    let mut c = match &g.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    c.seed = g.seed.unwrap_or(c.seed);
    c.threads = g.threads.unwrap_or(c.threads);
    let p = &mut c.paths;
    p.corpus = g.corpus.clone().or(p.corpus.take());
    p.embeddings = g.embeddings.clone().or(p.embeddings.take());
    p.lexicon = g.lexicon.clone().or(p.lexicon.take());
    p.stopwords = g.stopwords.clone().or(p.stopwords.take());

    match &cli.command {
        Command::Train(a) => {
            c.architecture = a.architecture.unwrap_or(c.architecture);
            c.train.epochs = a.epochs.unwrap_or(c.train.epochs);
            c.train.batch_size = a.batch_size.unwrap_or(c.train.batch_size);
            c.train.learning_rate = a.learning_rate.unwrap_or(c.train.learning_rate);
            c.train.patience = a.patience.unwrap_or(c.train.patience);
            c.paths.model = a.model.clone().or(c.paths.model.take());
        }
        Command::Classify { model, .. } => {
            c.paths.model = model.clone().or(c.paths.model.take());
        }
        Command::Retrieve { top, mode, .. } => {
            c.top_n = top.unwrap_or(c.top_n);
            c.mode = mode.unwrap_or(c.mode);
        }
        Command::Suggest(a) => {
            c.suggestion.tau = a.tau.unwrap_or(c.suggestion.tau);
            c.suggestion.alpha = a.alpha.unwrap_or(c.suggestion.alpha);
            c.suggestion.max_per_disease = a.max_per_disease.unwrap_or(c.suggestion.max_per_disease);
            c.label_source = a.labels.unwrap_or(c.label_source);
            c.paths.model = a.model.clone().or(c.paths.model.take());
        }
        Command::Evaluate {
            judgments, top, mode, ..
        } => {
            c.paths.judgments = judgments.clone().or(c.paths.judgments.take());
            c.top_n = top.unwrap_or(c.top_n);
            c.mode = mode.unwrap_or(c.mode);
        }
        Command::Ingest { .. } | Command::ExtractConcepts { .. } | Command::Gradcheck { .. } => {}
    }
    let c = c.finish()?;
    c.check_inputs()?;
    Ok(c)
}

fn execute(cli: &Cli) -> Result<(), CliError> {
    let config = resolve_config(cli)?;
    let out = commands::Output { json: cli.global.json };
    match &cli.command {
        Command::Ingest { store } => commands::ingest(&config, store.as_deref(), out),
        Command::ExtractConcepts { ids, text } => commands::extract_concepts(&config, ids, text.as_deref(), out),
        Command::Train(a) => commands::train(&config, a.cv, out),
        Command::Classify { text, ids, .. } => commands::classify(&config, text.as_deref(), ids, out),
        Command::Retrieve { query_id, .. } => commands::retrieve(&config, query_id, out),
        Command::Suggest(a) => commands::suggest(&config, &a.query_id, out),
        Command::Evaluate { threshold, .. } => commands::evaluate(&config, *threshold, out),
        Command::Gradcheck { architecture, epsilon } => commands::gradcheck(&config, *architecture, *epsilon, out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
