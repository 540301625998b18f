pub mod rank;
pub mod score;
pub mod simulate;
pub mod train_ref;

use crosscheck::ensemble::EnsembleError;

use crate::CliError;

/// Configuration problems exit 1; everything else from a run exits 2.
pub(crate) fn map_ensemble_error(e: EnsembleError) -> CliError {
    match e {
        EnsembleError::Config(c) => CliError::usage(c.to_string()),
        other => CliError::failure(other.to_string()),
    }
}
