//! Full consensus runs: generation fan-out, cross-scoring, matrix assembly,
//! ranking, outlier flagging and report construction.
//!
//! Concurrency never affects results. Generation and scoring jobs run on
//! scoped threads (requests to distinct endpoints proceed concurrently), all
//! outcomes are keyed by candidate and scorer index, and assembly sorts by
//! those keys, so completion order is invisible downstream.

use std::collections::BTreeMap;
use std::path::Path;
use std::thread;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{build_backend, BackendError, EndpointKind, ErrorCategory, ModelBackend, ModelEndpoint};
use crate::rng::derive_seed;
use crate::scoring::{
    consensus_score, flag_outliers, rank_candidates, Candidate, CandidateScore, OutlierFlag, ScoreError,
    ScoreMatrix,
};

/// Version stamped into every serialized report.
pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Whether scorers see the original query as conditioning context.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextMode {
    /// Score the candidate text alone (the literal reading of the
    /// cross-score definition).
    CandidateOnly,
    /// Condition every score on the query, measuring plausibility as a
    /// response rather than as free-standing text.
    QueryConditioned,
}

/// What the per-token average divides by.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Each scorer's own token count (heterogeneous tokenizers yield
    /// different divisors for the same text).
    PerToken,
    /// The candidate's byte length, identical across scorers.
    PerByte,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationConfig {
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default)]
    pub temperature: f64,
    /// Master generation seed; endpoint `i` samples with a seed derived
    /// from `(seed, i)` so backends differ while runs stay reproducible.
    #[serde(default)]
    pub seed: u64,
}

fn default_max_tokens() -> u32 {
    256
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self { max_tokens: default_max_tokens(), temperature: 0.0, seed: 0 }
    }
}

fn default_outlier_k() -> f64 {
    2.0
}

fn default_quorum() -> f64 {
    1.0
}

fn default_context_mode() -> ContextMode {
    ContextMode::CandidateOnly
}

fn default_normalization() -> Normalization {
    Normalization::PerToken
}

/// Everything a consensus run needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub endpoints: Vec<ModelEndpoint>,
    #[serde(default = "default_context_mode")]
    pub context_mode: ContextMode,
    #[serde(default)]
    pub generation: GenerationConfig,
    #[serde(default = "default_outlier_k")]
    pub outlier_k: f64,
    /// Minimum fraction of successful scorers per candidate row. The
    /// default fails closed: a ranking produced on partial evidence is not
    /// a trustworthy security decision unless the operator opted in.
    #[serde(default = "default_quorum")]
    pub quorum: f64,
    #[serde(default = "default_normalization")]
    pub normalization: Normalization,
}

impl EnsembleConfig {
    pub fn new(endpoints: Vec<ModelEndpoint>) -> Self {
        Self {
            endpoints,
            context_mode: default_context_mode(),
            generation: GenerationConfig::default(),
            outlier_k: default_outlier_k(),
            quorum: default_quorum(),
            normalization: default_normalization(),
        }
    }

    /// Field-addressed validation.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.endpoints.len() < 2 {
            return Err(ConfigError::new(
                "endpoints",
                format!("need at least 2 endpoints, got {}", self.endpoints.len()),
            ));
        }
        let mut seen = std::collections::BTreeSet::new();
        for (i, ep) in self.endpoints.iter().enumerate() {
            if ep.id.is_empty() {
                return Err(ConfigError::new(format!("endpoints[{i}].id"), "must not be empty"));
            }
            if !seen.insert(ep.id.clone()) {
                return Err(ConfigError::new(
                    format!("endpoints[{i}].id"),
                    format!("duplicate endpoint id {:?}", ep.id),
                ));
            }
            if ep.timeout_ms == 0 {
                return Err(ConfigError::new(format!("endpoints[{i}].timeout_ms"), "must be > 0"));
            }
            if let EndpointKind::Remote { base_url, model_name, .. } = &ep.kind {
                if !base_url.starts_with("http://") && !base_url.starts_with("https://") {
                    return Err(ConfigError::new(
                        format!("endpoints[{i}].base_url"),
                        format!("must start with http:// or https://, got {base_url:?}"),
                    ));
                }
                if model_name.is_empty() {
                    return Err(ConfigError::new(format!("endpoints[{i}].model_name"), "must not be empty"));
                }
            }
        }
        if !(self.quorum > 0.0 && self.quorum <= 1.0) {
            return Err(ConfigError::new("quorum", format!("must be in (0, 1], got {}", self.quorum)));
        }
        if self.outlier_k <= 0.0 || !self.outlier_k.is_finite() {
            return Err(ConfigError::new("outlier_k", format!("must be > 0, got {}", self.outlier_k)));
        }
        if self.generation.max_tokens == 0 {
            return Err(ConfigError::new("generation.max_tokens", "must be >= 1"));
        }
        if self.generation.temperature < 0.0 || !self.generation.temperature.is_finite() {
            return Err(ConfigError::new(
                "generation.temperature",
                format!("must be finite and >= 0, got {}", self.generation.temperature),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("{field}: {message}")]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self { field: field.into(), message: message.into() }
    }
}

#[derive(Debug, Error)]
pub enum EnsembleError {
    #[error("configuration error: {0}")]
    Config(#[from] ConfigError),
    #[error("only {generated} candidate(s) were generated, need at least 2: {summary}")]
    TooFewCandidates {
        generated: usize,
        failures: Vec<FailureRecord>,
        summary: String,
    },
    #[error("scoring quorum not met for candidate(s) {deficient:?}")]
    QuorumFailure { deficient: Vec<usize> },
    #[error(transparent)]
    Score(#[from] ScoreError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FailurePhase {
    Generation,
    Scoring,
}

/// One backend failure, first-class report content.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub phase: FailurePhase,
    pub endpoint_id: String,
    /// Candidate whose row the failure explains; absent for generation
    /// failures, which have no candidate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidate_id: Option<usize>,
    pub category: ErrorCategory,
    pub detail: String,
}

impl FailureRecord {
    fn generation(error: &BackendError) -> Self {
        Self {
            phase: FailurePhase::Generation,
            endpoint_id: error.endpoint_id.clone(),
            candidate_id: None,
            category: error.category,
            detail: error.detail.clone(),
        }
    }

    /// The record names the scorer by its position in the run, not by the
    /// error's self-reported id, so the absence-explanation invariant holds
    /// even for a backend that misreports itself.
    fn scoring(candidate_id: usize, scorer_id: &str, error: &BackendError) -> Self {
        Self {
            phase: FailurePhase::Scoring,
            endpoint_id: scorer_id.to_string(),
            candidate_id: Some(candidate_id),
            category: error.category,
            detail: error.detail.clone(),
        }
    }
}

/// Candidate as it appears in a serialized report. Text is base64 so the
/// canonical form is total over arbitrary bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportCandidate {
    pub candidate_id: usize,
    pub producer_id: String,
    pub text_base64: String,
    pub byte_len: usize,
}

impl ReportCandidate {
    pub fn text_bytes(&self) -> Result<Vec<u8>, base64::DecodeError> {
        BASE64.decode(&self.text_base64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMatrix {
    pub n: usize,
    /// Row-major; `null` marks the diagonal and failed entries.
    pub entries: Vec<Vec<Option<f64>>>,
}

impl ReportMatrix {
    pub fn from_score_matrix(matrix: &ScoreMatrix) -> Self {
        Self { n: matrix.n(), entries: matrix.to_rows() }
    }

    pub fn to_score_matrix(&self) -> Result<ScoreMatrix, ScoreError> {
        ScoreMatrix::from_rows(self.entries.clone())
    }
}

/// Full audit record of one consensus run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsensusReport {
    pub schema_version: u32,
    pub tool_version: String,
    pub query_base64: String,
    pub candidates: Vec<ReportCandidate>,
    pub matrix: ReportMatrix,
    /// Per-candidate consensus scores in candidate-id order.
    pub scores: Vec<CandidateScore>,
    /// Candidate ids, best first.
    pub ranking: Vec<usize>,
    pub winner_id: usize,
    pub outlier_flags: Vec<OutlierFlag>,
    /// Groups of byte-identical candidates (provenance still scores them
    /// independently).
    pub duplicate_groups: Vec<Vec<usize>>,
    pub failures: Vec<FailureRecord>,
    pub config_echo: EnsembleConfig,
}

impl ConsensusReport {
    pub fn canonical_json_bytes(&self) -> Vec<u8> {
        crate::canonical::to_canonical_json_bytes(self).expect("report serialization cannot fail")
    }

    pub fn canonical_file_bytes(&self) -> Vec<u8> {
        crate::canonical::to_canonical_file_bytes(self).expect("report serialization cannot fail")
    }

    pub fn winner_text(&self) -> Result<Vec<u8>, base64::DecodeError> {
        self.candidates[self.winner_id].text_bytes()
    }

    /// Structural invariants every report must satisfy.
    pub fn validate(&self) -> Result<(), String> {
        let n = self.candidates.len();
        if self.matrix.n != n || self.matrix.entries.len() != n {
            return Err("matrix dimension does not match candidate count".into());
        }
        if self.ranking.len() != n {
            return Err("ranking length does not match candidate count".into());
        }
        let mut sorted = self.ranking.clone();
        sorted.sort_unstable();
        if sorted != (0..n).collect::<Vec<_>>() {
            return Err("ranking is not a permutation of candidate ids".into());
        }
        if self.ranking.first() != Some(&self.winner_id) {
            return Err("winner_id is not the first ranked candidate".into());
        }
        if self.scores.len() != n {
            return Err("scores length does not match candidate count".into());
        }
        for (position, &id) in self.ranking.iter().enumerate() {
            if self.scores[id].candidate_id != id {
                return Err("scores are not in candidate-id order".into());
            }
            if position > 0 {
                let previous = self.ranking[position - 1];
                let earlier = (self.scores[previous].score, previous);
                let later = (self.scores[id].score, id);
                if later < earlier {
                    return Err(format!("ranking is out of order at position {position}"));
                }
            }
        }
        if self.scores.iter().any(|s| s.score < self.scores[self.winner_id].score) {
            return Err("winner does not attain the minimum score".into());
        }
        for (i, row) in self.matrix.entries.iter().enumerate() {
            for (j, cell) in row.iter().enumerate() {
                if i == j {
                    if cell.is_some() {
                        return Err(format!("matrix has a self-score at ({i},{i})"));
                    }
                    continue;
                }
                if cell.is_none() {
                    let explained = self.failures.iter().any(|f| {
                        f.phase == FailurePhase::Scoring
                            && f.candidate_id == Some(i)
                            && f.endpoint_id == self.candidates[j].producer_id
                    });
                    if !explained {
                        return Err(format!("absent entry ({i},{j}) has no failure record"));
                    }
                }
            }
        }
        Ok(())
    }
}

/// A backend bound to its position in the configured endpoint list.
pub struct PreparedBackend {
    /// Index in the original configuration, which pins the generation seed
    /// even when other endpoints drop out.
    pub original_index: usize,
    pub backend: Box<dyn ModelBackend>,
}

/// Construct backends for every endpoint; construction failures (bad model
/// file, missing auth variable) become generation-phase failure records.
/// Reference model paths are resolved against `base_dir` when relative.
pub fn prepare_backends(config: &EnsembleConfig, base_dir: &Path) -> (Vec<PreparedBackend>, Vec<FailureRecord>) {
    let mut prepared = Vec::new();
    let mut failures = Vec::new();
    for (original_index, endpoint) in config.endpoints.iter().enumerate() {
        let resolved = resolve_endpoint(endpoint, base_dir);
        match build_backend(&resolved) {
            Ok(backend) => prepared.push(PreparedBackend { original_index, backend }),
            Err(e) => failures.push(FailureRecord::generation(&e)),
        }
    }
    (prepared, failures)
}

/// Endpoint with a relative reference model path resolved against `base_dir`.
pub fn resolve_endpoint(endpoint: &ModelEndpoint, base_dir: &Path) -> ModelEndpoint {
    let mut resolved = endpoint.clone();
    if let EndpointKind::Reference { model_file } = &mut resolved.kind {
        if model_file.is_relative() {
            let joined = base_dir.join(&*model_file);
            *model_file = joined;
        }
    }
    resolved
}

/// One scoring job's outcome, keyed by candidate and scorer.
#[derive(Debug, Clone)]
pub struct ScoringOutcome {
    pub candidate_id: usize,
    pub scorer_index: usize,
    pub scorer_id: String,
    pub result: Result<f64, BackendError>,
}

/// Build the score matrix from outcomes in any order.
///
/// Assembly is keyed: a later outcome for the same `(candidate, scorer)`
/// replaces the earlier one, failures sort by key, and self-outcomes are
/// discarded unread, so the result is independent of completion order.
pub fn assemble_matrix(
    n: usize,
    outcomes: impl IntoIterator<Item = ScoringOutcome>,
) -> Result<(ScoreMatrix, Vec<FailureRecord>), ScoreError> {
    let mut matrix = ScoreMatrix::new(n)?;
    let mut keyed: BTreeMap<(usize, usize), ScoringOutcome> = BTreeMap::new();
    for outcome in outcomes {
        if outcome.candidate_id == outcome.scorer_index {
            continue;
        }
        keyed.insert((outcome.candidate_id, outcome.scorer_index), outcome);
    }
    let mut failures = Vec::new();
    for ((i, j), outcome) in keyed {
        match outcome.result {
            Ok(value) => matrix.set(i, j, value)?,
            Err(e) => failures.push(FailureRecord::scoring(i, &outcome.scorer_id, &e)),
        }
    }
    Ok((matrix, failures))
}

/// `Ok` iff every candidate row has at least the `quorum` fraction of its
/// `n - 1` possible scorers present; otherwise the deficient candidates.
pub fn apply_quorum(matrix: &ScoreMatrix, quorum: f64) -> Result<(), EnsembleError> {
    let n = matrix.n();
    let deficient: Vec<usize> = (0..n)
        .filter(|&i| (matrix.row_present(i) as f64) / ((n - 1) as f64) < quorum)
        .collect();
    if deficient.is_empty() {
        Ok(())
    } else {
        Err(EnsembleError::QuorumFailure { deficient })
    }
}

/// Run the full pipeline against backends built from the configuration.
pub fn run_consensus(query: &[u8], config: &EnsembleConfig, base_dir: &Path) -> Result<ConsensusReport, EnsembleError> {
    config.validate()?;
    let (prepared, failures) = prepare_backends(config, base_dir);
    run_with_backends(query, config, prepared, failures)
}

/// Cross-score every candidate under every other backend: one thread per
/// scorer column, outcomes keyed by (candidate, scorer) and assembled into
/// the matrix. `candidates[i]` must be the candidate produced by
/// `backends[i]`. Failed scorings become absent entries plus failure
/// records; nothing here is fatal (quorum is the caller's policy).
pub fn build_score_matrix(
    candidates: &[Candidate],
    backends: &[PreparedBackend],
    config: &EnsembleConfig,
    query: &[u8],
) -> Result<(ScoreMatrix, Vec<FailureRecord>), ScoreError> {
    assert_eq!(candidates.len(), backends.len(), "one candidate per scoring backend");
    let context: Option<&[u8]> = match config.context_mode {
        ContextMode::CandidateOnly => None,
        ContextMode::QueryConditioned => Some(query),
    };
    let outcomes: Vec<ScoringOutcome> = thread::scope(|scope| {
        let handles: Vec<_> = backends
            .iter()
            .enumerate()
            .map(|(scorer_index, prepared)| {
                scope.spawn(move || {
                    let mut column = Vec::new();
                    for (candidate_id, candidate) in candidates.iter().enumerate() {
                        if candidate_id == scorer_index {
                            continue;
                        }
                        let result = prepared.backend.score(candidate.text(), context).map(|scored| {
                            match config.normalization {
                                Normalization::PerToken => scored.logprobs().mean(),
                                Normalization::PerByte => {
                                    scored.logprobs().sum() / candidate.text().len() as f64
                                }
                            }
                        });
                        column.push(ScoringOutcome {
                            candidate_id,
                            scorer_index,
                            scorer_id: prepared.backend.id().to_string(),
                            result,
                        });
                    }
                    column
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("scoring thread panicked"))
            .collect()
    });
    assemble_matrix(candidates.len(), outcomes)
}

/// Run the pipeline against already-constructed backends. `config` supplies
/// every knob and is echoed into the report; `pre_failures` carries backend
/// construction failures.
pub fn run_with_backends(
    query: &[u8],
    config: &EnsembleConfig,
    backends: Vec<PreparedBackend>,
    pre_failures: Vec<FailureRecord>,
) -> Result<ConsensusReport, EnsembleError> {
    config.validate()?;
    let mut failures = pre_failures;

    // Generation fan-out, one thread per endpoint, joined in endpoint order.
    let gen = &config.generation;
    let generation_results: Vec<Result<Vec<u8>, BackendError>> = thread::scope(|scope| {
        let handles: Vec<_> = backends
            .iter()
            .map(|prepared| {
                scope.spawn(|| {
                    let seed = derive_seed(gen.seed, prepared.original_index as u64);
                    prepared.backend.generate(query, gen.max_tokens, gen.temperature, seed)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("generation thread panicked")).collect()
    });

    let mut survivors: Vec<PreparedBackend> = Vec::new();
    let mut candidates: Vec<Candidate> = Vec::new();
    for (prepared, result) in backends.into_iter().zip(generation_results) {
        match result {
            Ok(text) => match Candidate::new(candidates.len(), prepared.backend.id(), text) {
                Ok(candidate) => {
                    survivors.push(prepared);
                    candidates.push(candidate);
                }
                Err(_) => failures.push(FailureRecord::generation(&BackendError::new(
                    prepared.backend.id(),
                    ErrorCategory::Refusal,
                    "backend returned an empty completion",
                ))),
            },
            Err(e) => failures.push(FailureRecord::generation(&e)),
        }
    }

    let n = candidates.len();
    if n < 2 {
        let summary = failures
            .iter()
            .map(|f| format!("{} ({})", f.endpoint_id, f.category))
            .collect::<Vec<_>>()
            .join(", ");
        return Err(EnsembleError::TooFewCandidates { generated: n, failures, summary });
    }

    let (matrix, scoring_failures) = build_score_matrix(&candidates, &survivors, config, query)?;
    failures.extend(scoring_failures);
    apply_quorum(&matrix, config.quorum)?;

    let scores = (0..n)
        .map(|i| consensus_score(&matrix, i))
        .collect::<Result<Vec<_>, _>>()?;
    let ranked = rank_candidates(&matrix)?;
    let ranking: Vec<usize> = ranked.iter().map(|s| s.candidate_id).collect();
    let winner_id = ranking[0];
    let outlier_flags = flag_outliers(&scores, config.outlier_k)?;

    let mut groups: BTreeMap<Vec<u8>, Vec<usize>> = BTreeMap::new();
    for candidate in &candidates {
        groups.entry(candidate.text().to_vec()).or_default().push(candidate.candidate_id());
    }
    let mut duplicate_groups: Vec<Vec<usize>> = groups.into_values().filter(|g| g.len() >= 2).collect();
    duplicate_groups.sort_by_key(|g| g[0]);

    failures.sort_by(|a, b| {
        (a.phase == FailurePhase::Scoring, a.candidate_id, &a.endpoint_id)
            .cmp(&(b.phase == FailurePhase::Scoring, b.candidate_id, &b.endpoint_id))
    });

    let report = ConsensusReport {
        schema_version: REPORT_SCHEMA_VERSION,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        query_base64: BASE64.encode(query),
        candidates: candidates
            .iter()
            .map(|c| ReportCandidate {
                candidate_id: c.candidate_id(),
                producer_id: c.producer_id().to_string(),
                text_base64: BASE64.encode(c.text()),
                byte_len: c.text().len(),
            })
            .collect(),
        matrix: ReportMatrix::from_score_matrix(&matrix),
        scores,
        ranking,
        winner_id,
        outlier_flags,
        duplicate_groups,
        failures,
        config_echo: config.clone(),
    };
    debug_assert_eq!(report.validate(), Ok(()));
    Ok(report)
}
