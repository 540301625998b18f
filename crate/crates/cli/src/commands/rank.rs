//! `crosscheck rank`: one full consensus run.

use std::io::Write;

use crosscheck::ensemble::run_consensus;

use super::map_ensemble_error;
use crate::args::RankArgs;
use crate::config::load_config;
use crate::{io, CliError, Outcome};

pub fn run(args: RankArgs) -> Result<Outcome, CliError> {
    let (config, base_dir) = load_config(&args.config)?;
    let query = io::read_query(args.query.as_deref(), args.query_file.as_deref(), args.query_stdin)?;

    let report = run_consensus(&query, &config.ensemble, &base_dir).map_err(map_ensemble_error)?;
    io::write_atomic(&args.output, &report.canonical_file_bytes())?;

    if args.print_winner {
        let winner = report
            .winner_text()
            .map_err(|e| CliError::failure(format!("cannot decode winner text: {e}")))?;
        let mut stdout = std::io::stdout().lock();
        stdout
            .write_all(&winner)
            .and_then(|_| stdout.flush())
            .map_err(|e| CliError::failure(format!("cannot write winner to stdout: {e}")))?;
    }

    if args.strict && report.outlier_flags.iter().any(|f| f.flagged) {
        return Ok(Outcome::StrictFlagged);
    }
    Ok(Outcome::Success)
}
