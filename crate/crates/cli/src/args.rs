//! clap argument definitions.

use std::path::PathBuf;

use clap::{ArgGroup, Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(
    name = "crosscheck",
    version,
    about = "Cross-model consensus validation for generated code",
    long_about = "Generates candidate solutions from several independent model backends, \
cross-scores each candidate under every other model by mean per-token log probability, \
selects the consensus winner, and flags statistical outliers as potentially tampered."
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Run a full consensus ranking for one query and write the report.
    Rank(RankArgs),
    /// Score one text under every configured backend.
    Score(ScoreArgs),
    /// Run a poisoning simulation scenario and write the detection curve.
    Simulate(SimulateArgs),
    /// Train a reference n-gram model from a directory of files.
    TrainRef(TrainRefArgs),
}

#[derive(Args, Debug)]
#[command(group(ArgGroup::new("query_source").required(true).args(["query", "query_file", "query_stdin"])))]
pub struct RankArgs {
    /// Tool configuration file (JSON).
    #[arg(long, value_name = "PATH")]
    pub config: PathBuf,
    /// Query text given inline.
    #[arg(long, value_name = "TEXT")]
    pub query: Option<String>,
    /// Read the query from a file.
    #[arg(long, value_name = "PATH")]
    pub query_file: Option<PathBuf>,
    /// Read the query from standard input.
    #[arg(long)]
    pub query_stdin: bool,
    /// Where to write the canonical consensus report.
    #[arg(long, short = 'o', value_name = "PATH")]
    pub output: PathBuf,
    /// Exit 3 if any candidate is flagged as an outlier.
    #[arg(long)]
    pub strict: bool,
    /// Print the winning candidate's raw bytes to standard output.
    #[arg(long)]
    pub print_winner: bool,
}

#[derive(Args, Debug)]
pub struct ScoreArgs {
    /// Tool configuration file (JSON).
    #[arg(long, value_name = "PATH")]
    pub config: PathBuf,
    /// File holding the text to score.
    #[arg(long, value_name = "PATH")]
    pub file: PathBuf,
    /// Conditioning context given inline.
    #[arg(long, value_name = "TEXT", conflicts_with = "context_file")]
    pub context: Option<String>,
    /// Read the conditioning context from a file.
    #[arg(long, value_name = "PATH")]
    pub context_file: Option<PathBuf>,
    /// Write the JSON result here instead of standard output.
    #[arg(long, short = 'o', value_name = "PATH")]
    pub output: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Scenario file (JSON).
    #[arg(long, value_name = "PATH")]
    pub scenario: PathBuf,
    /// Where to write the simulation result JSON.
    #[arg(long, short = 'o', value_name = "PATH")]
    pub output: PathBuf,
    /// Also write the detection curve as CSV.
    #[arg(long, value_name = "PATH")]
    pub csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainRefArgs {
    /// Directory of training files (every regular file, sorted by name).
    #[arg(long, value_name = "DIR")]
    pub corpus_dir: PathBuf,
    /// Model order (context length + 1).
    #[arg(long)]
    pub order: u32,
    /// Additive smoothing mass per byte value.
    #[arg(long)]
    pub alpha: f64,
    /// Where to write the model file.
    #[arg(long, short = 'o', value_name = "PATH")]
    pub output: PathBuf,
}
