//! Command-line pipeline: preprocessing, training, search and evaluation driven
//! by a manifest file, with all state kept as plain files under one output
//! directory.

mod commands;
mod context;
pub mod manifest;
mod outputs;
mod report;

use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use context::Context;
pub use manifest::Manifest;

/// Failure of a command. User errors exit with 1, internal errors with 2.
#[derive(Debug)]
pub enum CliError {
    User(String),
    Internal(String),
}

impl CliError {
    pub fn user(msg: impl Into<String>) -> Self {
        CliError::User(msg.into())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::User(_) => 1,
            CliError::Internal(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::User(m) => f.write_str(m),
            CliError::Internal(m) => write!(f, "internal error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<tinylm::Error> for CliError {
    fn from(e: tinylm::Error) -> Self {
        match e {
            tinylm::Error::Shape { .. } => CliError::Internal(e.to_string()),
            _ => CliError::User(e.to_string()),
        }
    }
}

#[derive(Parser, Debug, Clone)]
#[command(name = "tinylm", version, about = "Train and evaluate small language models on child-directed speech")]
pub struct Cli {
    /// Experiment manifest.
    #[arg(long, global = true, default_value = "manifest.kv")]
    pub manifest: PathBuf,
    /// Overrides the manifest seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides the manifest output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
    /// Train and evaluate in 32-bit floats.
    #[arg(long, global = true)]
    pub float32: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct Select {
    /// Only this dataset.
    #[arg(long)]
    pub dataset: Option<String>,
    /// Only this model, e.g. `lstm-1`.
    #[arg(long)]
    pub model: Option<String>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct EvalSelect {
    #[command(flatten)]
    pub select: Select,
    /// Evaluate freshly initialized models instead of checkpoints.
    #[arg(long)]
    pub untrained: bool,
}

#[derive(Subcommand, Debug, Clone)]
pub enum Command {
    /// Read, clean and split each dataset; write vocabularies and statistics.
    Preprocess(Select),
    /// Recompute corpus statistics from the split files.
    Stats(Select),
    /// Train each model once at the manifest seed.
    Train(Select),
    /// Seed-averaged grid search over training hyperparameters.
    Search(Select),
    /// Validation and test perplexity.
    Ppl(EvalSelect),
    /// Generate the minimal-pair suite over the shared vocabulary.
    ZorroGen,
    /// Score the minimal-pair suite.
    ZorroEval(EvalSelect),
    /// Noun/verb cloze tests on the validation split.
    Cloze(EvalSelect),
    /// Embedding projections, dendrograms and category distances.
    Embed(EvalSelect),
    /// Aggregate ledgers into tables and figures.
    Report,
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let manifest = Manifest::load(&cli.manifest, cli.seed, cli.out.as_deref())?;
    let ctx = Context::new(manifest, cli.jobs, cli.float32)?;
    match &cli.command {
        Command::Preprocess(s) => commands::preprocess(&ctx, s),
        Command::Stats(s) => commands::stats(&ctx, s),
        Command::Train(s) => commands::train(&ctx, s),
        Command::Search(s) => commands::search(&ctx, s),
        Command::Ppl(s) => commands::ppl(&ctx, s),
        Command::ZorroGen => commands::zorro_gen(&ctx),
        Command::ZorroEval(s) => commands::zorro_eval(&ctx, s),
        Command::Cloze(s) => commands::cloze(&ctx, s),
        Command::Embed(s) => commands::embed(&ctx, s),
        Command::Report => report::report(&ctx),
    }
}
