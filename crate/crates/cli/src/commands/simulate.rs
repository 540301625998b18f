//! `crosscheck simulate`: run a poisoning scenario and write the curve.

use crosscheck::attack::{detection_curve, parse_scenario};

use crate::args::SimulateArgs;
use crate::{io, CliError, Outcome};

pub fn run(args: SimulateArgs) -> Result<Outcome, CliError> {
    let bytes = std::fs::read(&args.scenario)
        .map_err(|e| CliError::usage(format!("cannot read scenario {}: {e}", args.scenario.display())))?;
    let scenario = parse_scenario(&bytes)
        .map_err(|e| CliError::usage(format!("scenario {}: {e}", args.scenario.display())))?;

    let result = detection_curve(&scenario).map_err(|e| CliError::failure(e.to_string()))?;

    io::write_atomic(&args.output, &result.canonical_file_bytes())?;
    if let Some(csv_path) = &args.csv {
        io::write_atomic(csv_path, result.to_csv().as_bytes())?;
    }
    Ok(Outcome::Success)
}
