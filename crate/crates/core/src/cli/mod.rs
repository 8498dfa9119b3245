//! The `promptforge` command line.
//!
//! Exit codes: 0 success (a budget-truncated optimization included),
//! 2 usage or configuration error, 3 data error, 4 endpoint error.

mod artifacts;
mod commands;
mod config;

use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use artifacts::{report_csv, strategy_label, FinalPrompt, PredictionMeta, PredictionRecord, ReportRow, REPORT_COLUMNS};
pub use commands::aggregate;
pub use config::{Paths, RunConfig, SplitConfig, SynthesisConfig};

use crate::corpus::CorpusError;
use crate::gateway::GatewayError;
use crate::optimizer::OptimizerError;
use crate::promptkit::PromptError;
use crate::retrieval::RetrievalError;
use crate::schema::SchemaError;

#[derive(Debug, Parser)]
#[command(name = "promptforge", version, about = "Retrieval-guided prompt optimization for frame detection")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Run configuration file.
    #[arg(long, global = true, env = "PROMPTFORGE_CONFIG", default_value = "promptforge.toml")]
    pub config: PathBuf,
    /// Split seed for `ingest`; evaluation and mutation seed elsewhere.
    #[arg(long, global = true, env = "PROMPTFORGE_SEED")]
    pub seed: Option<u64>,
    /// Artifact root directory.
    #[arg(long, global = true, env = "PROMPTFORGE_OUT")]
    pub out: Option<PathBuf>,
    /// Target endpoint name.
    #[arg(long, global = true, env = "PROMPTFORGE_ENDPOINT")]
    pub endpoint: Option<String>,
    /// Retrieval shot count for a baseline `rag_k` strategy.
    #[arg(long, global = true)]
    pub k: Option<usize>,
    /// Baseline strategy for `infer` instead of the optimized prompt.
    #[arg(long, global = true)]
    pub strategy: Option<String>,
    /// Input file, or `-` for standard input.
    #[arg(long, global = true)]
    pub input: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Validate the dataset, write the split and rejection report.
    Ingest,
    /// Print corpus statistics.
    Stats,
    /// Build the retrieval index over the training split.
    Index,
    /// Run the prompt search and write the run artifact.
    Optimize,
    /// Label messages with the optimized prompt or a baseline strategy.
    Infer,
    /// Aggregate prediction files into a strategy table and CSV.
    Report,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Endpoint(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Endpoint(_) => 4,
        }
    }
}

impl From<SchemaError> for CliError {
    fn from(e: SchemaError) -> Self {
        match e {
            SchemaError::Io { .. } => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::Io { .. } | CorpusError::Ratios(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<GatewayError> for CliError {
    fn from(e: GatewayError) -> Self {
        match e {
            GatewayError::Config(_) | GatewayError::RuleFormat { .. } | GatewayError::Request(_) => {
                CliError::Usage(e.to_string())
            }
            _ => CliError::Endpoint(e.to_string()),
        }
    }
}

impl From<RetrievalError> for CliError {
    fn from(e: RetrievalError) -> Self {
        match e {
            RetrievalError::Remote(_) => CliError::Endpoint(e.to_string()),
            RetrievalError::Config(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<PromptError> for CliError {
    fn from(e: PromptError) -> Self {
        match e {
            PromptError::Gateway(g) => g.into(),
            PromptError::Io { .. } => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<OptimizerError> for CliError {
    fn from(e: OptimizerError) -> Self {
        match e {
            OptimizerError::Gateway(g) => g.into(),
            OptimizerError::Prompt(p) => p.into(),
            OptimizerError::Retrieval(r) => r.into(),
            OptimizerError::Corpus(c) => c.into(),
            OptimizerError::Config(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

/// Runs one command, writing human-readable output to `out` and warnings
/// to standard error.
pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<(), CliError> {
    let mut config = RunConfig::load(&cli.config)?;
    if let Some(dir) = &cli.out {
        config.paths.out = dir.clone();
    }
    let ctx = commands::Invocation { cli, config };
    match cli.command {
        Command::Ingest => commands::ingest(&ctx, out),
        Command::Stats => commands::stats(&ctx, out),
        Command::Index => commands::index(&ctx, out),
        Command::Optimize => commands::optimize(&ctx, out),
        Command::Infer => commands::infer(&ctx, out),
        Command::Report => commands::report(&ctx, out),
    }
}

/// Parses `args`, runs, and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    match run(&cli, &mut lock) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
