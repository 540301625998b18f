//! Desk-scale poisoning experiments.
//!
//! One reference model out of `n` is compromised; the harness sweeps how
//! large the injected payload is relative to the candidate and how much the
//! clean models' training corpora have in common, then measures whether
//! consensus selection keeps rejecting the poisoned candidate. Everything is
//! a pure function of the scenario value: seeds derive from
//! `(master_seed, trial_index)` and a trial's model setup is shared across
//! fractions, so detection curves are paired and reproducible byte for byte.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, ModelBackend, ModelEndpoint, ReferenceBackend, ScoredText};
use crate::ensemble::{run_with_backends, ConfigError, EnsembleConfig, EnsembleError, PreparedBackend};
use crate::ngram::{Corpus, NGramError, NGramModel};
use crate::rng::{derive_seed, SplitMix64};

/// Version stamped into scenario files and simulation results.
pub const SCENARIO_SCHEMA_VERSION: u32 = 1;
pub const SIMULATION_SCHEMA_VERSION: u32 = 1;

// Stream ids for seed derivation; generation streams 0..n are reserved by
// the ensemble layer, so these start well above.
const STREAM_TRIAL: u64 = 1 << 32;
const STREAM_INJECT: u64 = 2 << 32;
const STREAM_CORPUS: u64 = 3 << 32;

#[derive(Debug, Error)]
pub enum AttackError {
    #[error("scenario error: {0}")]
    Scenario(#[from] ConfigError),
    #[error("fraction {0} is not one of the scenario's injection_fractions")]
    UnknownFraction(f64),
    #[error(transparent)]
    Model(#[from] NGramError),
    #[error(transparent)]
    Ensemble(#[from] EnsembleError),
    #[error("trial {trial_index} at fraction {fraction} failed: {source}")]
    Trial {
        fraction: f64,
        trial_index: u32,
        #[source]
        source: Box<AttackError>,
    },
}

/// How the clean models' training corpora relate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Diversity {
    /// Seeded shuffle dealt round-robin into one shard per model.
    Disjoint,
    /// Each model draws each document independently with probability 1/2
    /// (full corpus as fallback if a draw comes up empty).
    Overlapping,
    /// Every model trains on the full corpus.
    Identical,
}

/// Where the poison enters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoisonMode {
    /// The compromised backend rewrites its own completion (what the
    /// attacker emits).
    #[default]
    Candidate,
    /// The compromised model is trained on payload-laced data (what the
    /// attacker trained).
    Corpus,
}

/// A full experiment description.
#[derive(Debug, Clone)]
pub struct AttackScenario {
    pub name: String,
    pub clean_corpus: Corpus,
    pub payload: Vec<u8>,
    pub injection_fractions: Vec<f64>,
    pub diversity: Diversity,
    pub n_models: usize,
    pub order: u32,
    pub alpha: f64,
    pub trials: u32,
    pub master_seed: u64,
    /// Query substring that activates the injection; `None` poisons every
    /// query.
    pub trigger: Option<Vec<u8>>,
    pub query: Vec<u8>,
    pub candidate_len: u32,
    pub poison_mode: PoisonMode,
}

impl AttackScenario {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.payload.is_empty() {
            return Err(ConfigError::new("payload", "must not be empty"));
        }
        for (i, &f) in self.injection_fractions.iter().enumerate() {
            if !(0.0..=1.0).contains(&f) || !f.is_finite() {
                return Err(ConfigError::new(
                    format!("injection_fractions[{i}]"),
                    format!("must be in [0, 1], got {f}"),
                ));
            }
            if i > 0 && f < self.injection_fractions[i - 1] {
                return Err(ConfigError::new("injection_fractions", "must be sorted ascending"));
            }
        }
        if self.n_models < 2 {
            return Err(ConfigError::new("n_models", format!("must be >= 2, got {}", self.n_models)));
        }
        if self.order < 1 {
            return Err(ConfigError::new("order", "must be >= 1"));
        }
        if self.alpha <= 0.0 || !self.alpha.is_finite() {
            return Err(ConfigError::new("alpha", format!("must be finite and > 0, got {}", self.alpha)));
        }
        if self.trials < 1 {
            return Err(ConfigError::new("trials", "must be >= 1"));
        }
        if self.candidate_len < 1 {
            return Err(ConfigError::new("candidate_len", "must be >= 1"));
        }
        if let Some(trigger) = &self.trigger {
            if trigger.is_empty() {
                return Err(ConfigError::new("trigger", "must not be empty when present"));
            }
        }
        if self.diversity == Diversity::Disjoint {
            let non_empty = self.clean_corpus.documents().iter().filter(|d| !d.is_empty()).count();
            if non_empty < self.n_models {
                return Err(ConfigError::new(
                    "clean_corpus.documents",
                    format!(
                        "disjoint diversity needs at least n_models ({}) non-empty documents, got {non_empty}",
                        self.n_models
                    ),
                ));
            }
        }
        Ok(())
    }
}

/// Outcome of one poisoned consensus run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub trial_seed: u64,
    pub poisoned_candidate_id: usize,
    /// Position in the ranking; 0 means the poisoned candidate won.
    pub poisoned_rank: usize,
    pub detected: bool,
    /// Poisoned score minus winner score; 0 exactly when undetected.
    pub score_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FractionRow {
    pub fraction: f64,
    /// Detected trials divided by total trials, exactly.
    pub detection_rate: f64,
    pub mean_poisoned_rank: f64,
    pub mean_score_gap: f64,
    pub trials: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationResult {
    pub schema_version: u32,
    pub scenario_name: String,
    pub master_seed: u64,
    /// One row per injection fraction, in fraction order.
    pub rows: Vec<FractionRow>,
}

impl SimulationResult {
    pub fn canonical_file_bytes(&self) -> Vec<u8> {
        crate::canonical::to_canonical_file_bytes(self).expect("result serialization cannot fail")
    }

    /// Fixed column order: fraction, detection_rate, mean_poisoned_rank,
    /// mean_score_gap.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("fraction,detection_rate,mean_poisoned_rank,mean_score_gap\n");
        for row in &self.rows {
            out.push_str(&format!(
                "{},{},{},{}\n",
                row.fraction, row.detection_rate, row.mean_poisoned_rank, row.mean_score_gap
            ));
        }
        out
    }
}

/// Insert a contiguous block of payload repetitions into `candidate` so that
/// payload bytes make up `fraction` of the output within one byte.
///
/// For `0 < fraction < 1` the block length is
/// `round(fraction * len / (1 - fraction))` and the insertion offset is a
/// seeded uniform draw over `0..=len`. Fraction 0 returns the candidate
/// unchanged; fraction 1 returns payload repetitions cycled to the
/// candidate's own length.
///
/// `payload` must be non-empty and `fraction` must lie in `[0, 1]`.
pub fn inject_payload(candidate: &[u8], payload: &[u8], fraction: f64, seed: u64) -> Vec<u8> {
    assert!(!payload.is_empty(), "payload must not be empty");
    assert!(
        (0.0..=1.0).contains(&fraction) && fraction.is_finite(),
        "fraction must be in [0, 1], got {fraction}"
    );
    let len = candidate.len();
    if fraction == 0.0 {
        return candidate.to_vec();
    }
    if fraction == 1.0 {
        return cycle_to(payload, len);
    }
    let block_len = (fraction * len as f64 / (1.0 - fraction)).round() as usize;
    if block_len == 0 {
        return candidate.to_vec();
    }
    let offset = SplitMix64::new(seed).below(len as u64 + 1) as usize;
    let mut out = Vec::with_capacity(len + block_len);
    out.extend_from_slice(&candidate[..offset]);
    out.extend_from_slice(&cycle_to(payload, block_len));
    out.extend_from_slice(&candidate[offset..]);
    out
}

fn cycle_to(payload: &[u8], len: usize) -> Vec<u8> {
    payload.iter().copied().cycle().take(len).collect()
}

fn contains_subslice(haystack: &[u8], needle: &[u8]) -> bool {
    !needle.is_empty() && haystack.windows(needle.len()).any(|w| w == needle)
}

/// A compromised backend: generation passes through the clean reference
/// model and then rewrites the completion when the trigger (if any) appears
/// in the query. Scoring stays clean; the attack lives in what it emits.
struct PoisonedBackend {
    inner: ReferenceBackend,
    payload: Vec<u8>,
    fraction: f64,
    inject_seed: u64,
    trigger: Option<Vec<u8>>,
}

impl PoisonedBackend {
    fn triggered_by(&self, query: &[u8]) -> bool {
        match &self.trigger {
            Some(t) => contains_subslice(query, t),
            None => true,
        }
    }
}

impl ModelBackend for PoisonedBackend {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn generate(&self, query: &[u8], max_tokens: u32, temperature: f64, seed: u64) -> Result<Vec<u8>, BackendError> {
        let base = self.inner.generate(query, max_tokens, temperature, seed)?;
        if self.triggered_by(query) {
            Ok(inject_payload(&base, &self.payload, self.fraction, self.inject_seed))
        } else {
            Ok(base)
        }
    }

    fn score(&self, text: &[u8], context: Option<&[u8]>) -> Result<ScoredText, BackendError> {
        self.inner.score(text, context)
    }

    fn health(&self) -> crate::backend::HealthStatus {
        self.inner.health()
    }
}

/// Per-model training corpora for one trial, drawn from the trial stream.
fn build_corpora(scenario: &AttackScenario, rng: &mut SplitMix64) -> Result<Vec<Corpus>, NGramError> {
    let docs = scenario.clean_corpus.documents();
    let base_name = scenario.clean_corpus.name();
    match scenario.diversity {
        Diversity::Identical => (0..scenario.n_models)
            .map(|i| Corpus::new(format!("{base_name}/identical-{i}"), docs.to_vec()))
            .collect(),
        Diversity::Disjoint => {
            let mut indices: Vec<usize> =
                (0..docs.len()).filter(|&i| !docs[i].is_empty()).collect();
            rng.shuffle(&mut indices);
            (0..scenario.n_models)
                .map(|i| {
                    let shard: Vec<Vec<u8>> = indices
                        .iter()
                        .skip(i)
                        .step_by(scenario.n_models)
                        .map(|&idx| docs[idx].clone())
                        .collect();
                    Corpus::new(format!("{base_name}/disjoint-{i}"), shard)
                })
                .collect()
        }
        Diversity::Overlapping => (0..scenario.n_models)
            .map(|i| {
                let subset: Vec<Vec<u8>> =
                    docs.iter().filter(|_| rng.chance(1, 2)).cloned().collect();
                let chosen = if subset.iter().any(|d| !d.is_empty()) { subset } else { docs.to_vec() };
                Corpus::new(format!("{base_name}/overlapping-{i}"), chosen)
            })
            .collect(),
    }
}

/// Corpus with an extra payload document sized so payload bytes are
/// `fraction` of the training bytes; fraction 1 replaces the corpus with
/// payload repetitions of the same total size.
fn poison_corpus(corpus: &Corpus, payload: &[u8], fraction: f64) -> Result<Corpus, NGramError> {
    let clean_len = corpus.total_bytes();
    if fraction >= 1.0 {
        return Corpus::new(
            format!("{}/poisoned", corpus.name()),
            vec![cycle_to(payload, clean_len.max(payload.len()))],
        );
    }
    let extra = (fraction * clean_len as f64 / (1.0 - fraction)).round() as usize;
    let mut docs = corpus.documents().to_vec();
    if extra > 0 {
        docs.push(cycle_to(payload, extra));
    }
    Corpus::new(format!("{}/poisoned", corpus.name()), docs)
}

/// Train the trial's models, run one poisoned consensus, and record where
/// the poisoned candidate landed. Deterministic in
/// `(scenario.master_seed, trial_index)`; `fraction` only moves the
/// injection itself.
pub fn run_trial(scenario: &AttackScenario, fraction: f64, trial_index: u32) -> Result<TrialOutcome, AttackError> {
    scenario.validate()?;
    if !scenario.injection_fractions.contains(&fraction) {
        return Err(AttackError::UnknownFraction(fraction));
    }
    let trial_seed = derive_seed(scenario.master_seed, STREAM_TRIAL + trial_index as u64);
    let mut rng = SplitMix64::new(derive_seed(trial_seed, STREAM_CORPUS));
    let poisoned = rng.below(scenario.n_models as u64) as usize;
    let corpora = build_corpora(scenario, &mut rng)?;
    let trigger_active = match &scenario.trigger {
        Some(t) => contains_subslice(&scenario.query, t),
        None => true,
    };

    let mut backends: Vec<PreparedBackend> = Vec::with_capacity(scenario.n_models);
    for (i, corpus) in corpora.iter().enumerate() {
        let id = format!("model-{i}");
        let backend: Box<dyn ModelBackend> = if i == poisoned && scenario.poison_mode == PoisonMode::Corpus {
            let trained = if trigger_active && fraction > 0.0 {
                NGramModel::train(&poison_corpus(corpus, &scenario.payload, fraction)?, scenario.order, scenario.alpha)?
            } else {
                NGramModel::train(corpus, scenario.order, scenario.alpha)?
            };
            Box::new(ReferenceBackend::new(id, trained))
        } else {
            let model = NGramModel::train(corpus, scenario.order, scenario.alpha)?;
            let clean = ReferenceBackend::new(id, model);
            if i == poisoned {
                Box::new(PoisonedBackend {
                    inner: clean,
                    payload: scenario.payload.clone(),
                    fraction,
                    inject_seed: derive_seed(trial_seed, STREAM_INJECT),
                    trigger: scenario.trigger.clone(),
                })
            } else {
                Box::new(clean)
            }
        };
        backends.push(PreparedBackend { original_index: i, backend });
    }

    let endpoints = (0..scenario.n_models)
        .map(|i| ModelEndpoint::reference(format!("model-{i}"), format!("memory:model-{i}")))
        .collect();
    let mut config = EnsembleConfig::new(endpoints);
    config.generation.max_tokens = scenario.candidate_len;
    config.generation.seed = trial_seed;
    let report = run_with_backends(&scenario.query, &config, backends, Vec::new())?;

    let poisoned_rank = report
        .ranking
        .iter()
        .position(|&id| id == poisoned)
        .expect("poisoned candidate is always ranked");
    let winner_score = report.scores[report.winner_id].score;
    let poisoned_score = report.scores[poisoned].score;
    Ok(TrialOutcome {
        trial_seed,
        poisoned_candidate_id: poisoned,
        poisoned_rank,
        detected: poisoned_rank > 0,
        score_gap: poisoned_score - winner_score,
    })
}

/// Sweep every fraction, aggregating trials keyed by index so the result is
/// independent of execution order.
pub fn detection_curve(scenario: &AttackScenario) -> Result<SimulationResult, AttackError> {
    scenario.validate()?;
    let mut rows = Vec::with_capacity(scenario.injection_fractions.len());
    for &fraction in &scenario.injection_fractions {
        let mut outcomes: Vec<Option<TrialOutcome>> = vec![None; scenario.trials as usize];
        for trial_index in 0..scenario.trials {
            let outcome = run_trial(scenario, fraction, trial_index).map_err(|e| AttackError::Trial {
                fraction,
                trial_index,
                source: Box::new(e),
            })?;
            outcomes[trial_index as usize] = Some(outcome);
        }
        let outcomes: Vec<TrialOutcome> = outcomes.into_iter().map(Option::unwrap).collect();
        let trials = scenario.trials as f64;
        let detected = outcomes.iter().filter(|o| o.detected).count();
        rows.push(FractionRow {
            fraction,
            detection_rate: detected as f64 / trials,
            mean_poisoned_rank: outcomes.iter().map(|o| o.poisoned_rank as f64).sum::<f64>() / trials,
            mean_score_gap: outcomes.iter().map(|o| o.score_gap).sum::<f64>() / trials,
            trials: scenario.trials,
        });
    }
    Ok(SimulationResult {
        schema_version: SIMULATION_SCHEMA_VERSION,
        scenario_name: scenario.name.clone(),
        master_seed: scenario.master_seed,
        rows,
    })
}

// ---------------------------------------------------------------------------
// Scenario files
// ---------------------------------------------------------------------------

/// Byte payload in a JSON document: inline UTF-8 or base64.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BytesSpec {
    Text { text: String },
    Base64 { base64: String },
}

impl BytesSpec {
    pub fn decode(&self) -> Result<Vec<u8>, ConfigError> {
        match self {
            BytesSpec::Text { text } => Ok(text.clone().into_bytes()),
            BytesSpec::Base64 { base64 } => {
                use base64::Engine;
                base64::engine::general_purpose::STANDARD
                    .decode(base64)
                    .map_err(|e| ConfigError::new("base64", e.to_string()))
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSpec {
    pub name: String,
    pub documents: Vec<BytesSpec>,
}

/// On-disk scenario schema; see `docs/schemas/scenario.schema.json`.
/// Unknown fields are rejected: a misspelled knob must not silently fall
/// back to a default.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub schema_version: u32,
    pub name: String,
    pub clean_corpus: CorpusSpec,
    pub payload: BytesSpec,
    pub injection_fractions: Vec<f64>,
    pub diversity: Diversity,
    pub n_models: usize,
    pub order: u32,
    pub alpha: f64,
    pub trials: u32,
    pub master_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trigger: Option<BytesSpec>,
    pub query: BytesSpec,
    pub candidate_len: u32,
    #[serde(default)]
    pub poison_mode: PoisonMode,
}

impl ScenarioFile {
    pub fn to_scenario(&self) -> Result<AttackScenario, ConfigError> {
        if self.schema_version != SCENARIO_SCHEMA_VERSION {
            return Err(ConfigError::new(
                "schema_version",
                format!("unsupported version {}, expected {SCENARIO_SCHEMA_VERSION}", self.schema_version),
            ));
        }
        let documents = self
            .clean_corpus
            .documents
            .iter()
            .enumerate()
            .map(|(i, spec)| {
                spec.decode().map_err(|e| {
                    ConfigError::new(format!("clean_corpus.documents[{i}]"), e.message)
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let clean_corpus = Corpus::new(self.clean_corpus.name.clone(), documents)
            .map_err(|e| ConfigError::new("clean_corpus.documents", e.to_string()))?;
        let payload = self.payload.decode().map_err(|e| ConfigError::new("payload", e.message))?;
        let trigger = match &self.trigger {
            Some(spec) => Some(spec.decode().map_err(|e| ConfigError::new("trigger", e.message))?),
            None => None,
        };
        let query = self.query.decode().map_err(|e| ConfigError::new("query", e.message))?;
        let scenario = AttackScenario {
            name: self.name.clone(),
            clean_corpus,
            payload,
            injection_fractions: self.injection_fractions.clone(),
            diversity: self.diversity,
            n_models: self.n_models,
            order: self.order,
            alpha: self.alpha,
            trials: self.trials,
            master_seed: self.master_seed,
            trigger,
            query,
            candidate_len: self.candidate_len,
            poison_mode: self.poison_mode,
        };
        scenario.validate()?;
        Ok(scenario)
    }
}

/// Parse and validate a scenario document.
pub fn parse_scenario(bytes: &[u8]) -> Result<AttackScenario, AttackError> {
    let file: ScenarioFile = serde_json::from_slice(bytes)
        .map_err(|e| AttackError::Scenario(ConfigError::new("scenario", e.to_string())))?;
    Ok(file.to_scenario()?)
}
