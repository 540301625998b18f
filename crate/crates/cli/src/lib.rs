//! Command-line surface: configuration files in, canonical JSON artifacts
//! out, with a fixed exit-code contract for CI gating:
//!
//! - `0` success
//! - `1` usage, configuration or validation problems
//! - `2` backend, quorum or simulation failures
//! - `3` strict mode: ranking succeeded but at least one candidate was
//!   flagged as an outlier

use clap::error::ErrorKind;
use clap::Parser;

pub mod args;
pub mod commands;
pub mod config;
pub mod io;

pub use args::{Cli, Command};

/// What a successfully parsed command run produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    /// Strict mode was requested and at least one outlier flag was raised.
    StrictFlagged,
}

/// Command failures carrying their exit category.
#[derive(Debug)]
pub enum CliError {
    /// Bad invocation, unparseable or invalid configuration, unusable
    /// input or output paths.
    Usage(String),
    /// The pipeline itself failed: backends, quorum, simulation.
    Failure(String),
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError::Usage(message.into())
    }

    pub fn failure(message: impl Into<String>) -> Self {
        CliError::Failure(message.into())
    }
}

pub const EXIT_OK: u8 = 0;
pub const EXIT_USAGE: u8 = 1;
pub const EXIT_FAILURE: u8 = 2;
pub const EXIT_STRICT: u8 = 3;

/// Parse argv and run; returns the process exit code.
pub fn run_from_args<I, T>(argv: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return EXIT_OK;
        }
        Err(e) => {
            eprint!("{e}");
            return EXIT_USAGE;
        }
    };
    match run_command(cli.command) {
        Ok(Outcome::Success) => EXIT_OK,
        Ok(Outcome::StrictFlagged) => EXIT_STRICT,
        Err(CliError::Usage(message)) => {
            eprintln!("error: {message}");
            EXIT_USAGE
        }
        Err(CliError::Failure(message)) => {
            eprintln!("error: {message}");
            EXIT_FAILURE
        }
    }
}

pub fn run_command(command: Command) -> Result<Outcome, CliError> {
    match command {
        Command::Rank(args) => commands::rank::run(args),
        Command::Score(args) => commands::score::run(args),
        Command::Simulate(args) => commands::simulate::run(args),
        Command::TrainRef(args) => commands::train_ref::run(args),
    }
}
