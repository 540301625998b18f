//! `crosscheck score`: per-backend mean log probability and perplexity for
//! one text.

use std::io::Write;

use crosscheck::backend::build_backend;
use crosscheck::canonical::to_canonical_file_bytes;
use crosscheck::ensemble::{resolve_endpoint, FailurePhase, FailureRecord, Normalization};
use crosscheck::scoring::perplexity;
use serde::{Deserialize, Serialize};

use crate::args::ScoreArgs;
use crate::config::load_config;
use crate::{io, CliError, Outcome};

pub const SCORE_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
pub struct ScoreRow {
    pub endpoint_id: String,
    /// Nats per token (or per byte under per-byte normalization).
    pub mean_logprob: f64,
    pub perplexity: f64,
    pub token_count: usize,
}

/// Output schema; see `docs/schemas/score.schema.json`.
#[derive(Debug, Serialize, Deserialize)]
pub struct ScoreOutput {
    pub schema_version: u32,
    pub text_byte_len: usize,
    pub context_byte_len: usize,
    /// One row per endpoint that scored successfully, in config order.
    pub scores: Vec<ScoreRow>,
    pub failures: Vec<FailureRecord>,
}

pub fn run(args: ScoreArgs) -> Result<Outcome, CliError> {
    let (config, base_dir) = load_config(&args.config)?;
    let text = std::fs::read(&args.file)
        .map_err(|e| CliError::usage(format!("cannot read candidate file {}: {e}", args.file.display())))?;
    if text.is_empty() {
        return Err(CliError::usage(format!("candidate file {} is empty", args.file.display())));
    }
    let context: Option<Vec<u8>> = match (&args.context, &args.context_file) {
        (Some(inline), _) => Some(inline.as_bytes().to_vec()),
        (None, Some(path)) => Some(std::fs::read(path).map_err(|e| {
            CliError::usage(format!("cannot read context file {}: {e}", path.display()))
        })?),
        (None, None) => None,
    };

    let mut scores = Vec::new();
    let mut failures = Vec::new();
    for endpoint in &config.ensemble.endpoints {
        let resolved = resolve_endpoint(endpoint, &base_dir);
        let result = build_backend(&resolved).and_then(|backend| backend.score(&text, context.as_deref()));
        match result {
            Ok(scored) => {
                let mean_logprob = match config.ensemble.normalization {
                    Normalization::PerToken => scored.logprobs().mean(),
                    Normalization::PerByte => scored.logprobs().sum() / text.len() as f64,
                };
                scores.push(ScoreRow {
                    endpoint_id: endpoint.id.clone(),
                    mean_logprob,
                    perplexity: perplexity(mean_logprob),
                    token_count: scored.logprobs().token_count(),
                });
            }
            Err(e) => failures.push(FailureRecord {
                phase: FailurePhase::Scoring,
                endpoint_id: e.endpoint_id.clone(),
                candidate_id: None,
                category: e.category,
                detail: e.detail,
            }),
        }
    }

    let total = config.ensemble.endpoints.len();
    if (scores.len() as f64) / (total as f64) < config.ensemble.quorum {
        return Err(CliError::failure(format!(
            "only {} of {total} scorers succeeded, below quorum {}",
            scores.len(),
            config.ensemble.quorum
        )));
    }

    let output = ScoreOutput {
        schema_version: SCORE_SCHEMA_VERSION,
        text_byte_len: text.len(),
        context_byte_len: context.as_ref().map_or(0, Vec::len),
        scores,
        failures,
    };
    let bytes = to_canonical_file_bytes(&output)
        .map_err(|e| CliError::failure(format!("cannot serialize result: {e}")))?;
    match &args.output {
        Some(path) => io::write_atomic(path, &bytes)?,
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(&bytes)
                .and_then(|_| stdout.flush())
                .map_err(|e| CliError::failure(format!("cannot write to stdout: {e}")))?;
        }
    }
    Ok(Outcome::Success)
}
