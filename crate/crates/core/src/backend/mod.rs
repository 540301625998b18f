//! Uniform interface over model backends.
//!
//! A backend either speaks the completions wire protocol of a remote
//! inference server (see [`remote`] and `docs/wire-protocol.md`) or wraps an
//! in-process reference n-gram model. Everything downstream of this module
//! works against [`ModelBackend`], so consensus math never branches on the
//! endpoint kind.

pub mod reference;
pub mod remote;

use std::path::PathBuf;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ngram::NGramModel;
use crate::scoring::{Candidate, ScoreError, TokenLogProbs};

pub use reference::ReferenceBackend;
pub use remote::RemoteBackend;

/// Failure category, fixed at construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ErrorCategory {
    Timeout,
    Protocol,
    Transport,
    Refusal,
}

impl std::fmt::Display for ErrorCategory {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ErrorCategory::Timeout => "timeout",
            ErrorCategory::Protocol => "protocol",
            ErrorCategory::Transport => "transport",
            ErrorCategory::Refusal => "refusal",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("endpoint {endpoint_id}: {category}: {detail}")]
pub struct BackendError {
    pub endpoint_id: String,
    pub category: ErrorCategory,
    pub detail: String,
}

impl BackendError {
    pub fn new(endpoint_id: impl Into<String>, category: ErrorCategory, detail: impl Into<String>) -> Self {
        Self { endpoint_id: endpoint_id.into(), category, detail: detail.into() }
    }
}

/// Where an endpoint's model lives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EndpointKind {
    Remote {
        base_url: String,
        model_name: String,
        /// Name of the environment variable holding the bearer token;
        /// the secret itself never appears in config or reports.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        auth_token_env: Option<String>,
    },
    Reference {
        model_file: PathBuf,
    },
}

fn default_timeout_ms() -> u64 {
    10_000
}

fn default_true() -> bool {
    true
}

/// One configured model backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEndpoint {
    pub id: String,
    #[serde(flatten)]
    pub kind: EndpointKind,
    /// Per-request timeout in milliseconds.
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    /// Retry a failed request exactly once, on transport errors only.
    #[serde(default = "default_true")]
    pub transport_retry: bool,
}

impl ModelEndpoint {
    pub fn timeout(&self) -> Duration {
        Duration::from_millis(self.timeout_ms)
    }

    pub fn reference(id: impl Into<String>, model_file: impl Into<PathBuf>) -> Self {
        Self {
            id: id.into(),
            kind: EndpointKind::Reference { model_file: model_file.into() },
            timeout_ms: default_timeout_ms(),
            transport_retry: true,
        }
    }

    pub fn remote(id: impl Into<String>, base_url: impl Into<String>, model_name: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            kind: EndpointKind::Remote {
                base_url: base_url.into(),
                model_name: model_name.into(),
                auth_token_env: None,
            },
            timeout_ms: default_timeout_ms(),
            transport_retry: true,
        }
    }
}

/// A text with the per-token log probabilities one scorer assigned to it.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredText {
    text: Vec<u8>,
    logprobs: TokenLogProbs,
    token_texts: Option<Vec<String>>,
    scorer_id: String,
}

impl ScoredText {
    pub fn new(
        text: Vec<u8>,
        logprobs: TokenLogProbs,
        token_texts: Option<Vec<String>>,
        scorer_id: impl Into<String>,
    ) -> Result<Self, ScoreError> {
        if let Some(tokens) = &token_texts {
            if tokens.len() != logprobs.token_count() {
                return Err(ScoreError::TokenTextMismatch {
                    tokens: tokens.len(),
                    values: logprobs.token_count(),
                });
            }
        }
        Ok(Self { text, logprobs, token_texts, scorer_id: scorer_id.into() })
    }

    pub fn text(&self) -> &[u8] {
        &self.text
    }

    pub fn logprobs(&self) -> &TokenLogProbs {
        &self.logprobs
    }

    pub fn token_texts(&self) -> Option<&[String]> {
        self.token_texts.as_deref()
    }

    pub fn scorer_id(&self) -> &str {
        &self.scorer_id
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum HealthStatus {
    Ok,
    Failing(BackendError),
}

impl HealthStatus {
    pub fn is_ok(&self) -> bool {
        matches!(self, HealthStatus::Ok)
    }
}

/// Generate and score primitives every backend provides.
///
/// Implementations are immutable: repeated calls with identical inputs on a
/// deterministic backend yield identical results, and one backend may serve
/// concurrent calls.
pub trait ModelBackend: Send + Sync {
    fn id(&self) -> &str;

    /// Complete `query`. Reference backends sample `max_tokens` bytes with
    /// the given seed; remote backends forward all parameters.
    fn generate(&self, query: &[u8], max_tokens: u32, temperature: f64, seed: u64) -> Result<Vec<u8>, BackendError>;

    /// Per-token log probabilities for exactly the tokens of `text`.
    /// `context` conditions the scores but contributes no scored tokens.
    fn score(&self, text: &[u8], context: Option<&[u8]>) -> Result<ScoredText, BackendError>;

    fn health(&self) -> HealthStatus;
}

/// Build the concrete backend for an endpoint. Reference model files are
/// loaded eagerly so a bad path fails here, not mid-run.
pub fn build_backend(endpoint: &ModelEndpoint) -> Result<Box<dyn ModelBackend>, BackendError> {
    match &endpoint.kind {
        EndpointKind::Reference { model_file } => {
            let model = NGramModel::load(model_file).map_err(|e| {
                BackendError::new(&endpoint.id, ErrorCategory::Protocol, e.to_string())
            })?;
            Ok(Box::new(ReferenceBackend::new(&endpoint.id, model)))
        }
        EndpointKind::Remote { .. } => Ok(Box::new(RemoteBackend::new(endpoint)?)),
    }
}

/// Probe an endpoint without running anything: remote endpoints get a
/// lightweight reachability/auth request, reference endpoints a model-file
/// load. Failures are returned as a status, never raised.
pub fn health_check(endpoint: &ModelEndpoint) -> HealthStatus {
    match build_backend(endpoint) {
        Ok(backend) => backend.health(),
        Err(e) => HealthStatus::Failing(e),
    }
}

/// Run one generation and wrap the completion as a candidate.
///
/// An empty completion is a refusal: an empty candidate is unscorable and
/// must surface as a backend failure rather than a zero score.
pub fn generate_candidate(
    backend: &dyn ModelBackend,
    candidate_id: usize,
    query: &[u8],
    max_tokens: u32,
    temperature: f64,
    seed: u64,
) -> Result<Candidate, BackendError> {
    let text = backend.generate(query, max_tokens, temperature, seed)?;
    Candidate::new(candidate_id, backend.id(), text).map_err(|_| {
        BackendError::new(backend.id(), ErrorCategory::Refusal, "backend returned an empty completion")
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scored_text_validates_token_text_length() {
        let lp = TokenLogProbs::new(vec![-1.0, -2.0]).unwrap();
        assert!(ScoredText::new(b"ab".to_vec(), lp.clone(), Some(vec!["a".into()]), "s").is_err());
        assert!(ScoredText::new(b"ab".to_vec(), lp, Some(vec!["a".into(), "b".into()]), "s").is_ok());
    }

    #[test]
    fn endpoint_config_shapes() {
        let json = r#"{"id":"r0","kind":"reference","model_file":"m.json"}"#;
        let ep: ModelEndpoint = serde_json::from_str(json).unwrap();
        assert_eq!(ep.timeout_ms, 10_000);
        assert!(ep.transport_retry);
        assert!(matches!(ep.kind, EndpointKind::Reference { .. }));

        let json = r#"{"id":"llm","kind":"remote","base_url":"http://h:1","model_name":"m","timeout_ms":250,"transport_retry":false}"#;
        let ep: ModelEndpoint = serde_json::from_str(json).unwrap();
        assert_eq!(ep.timeout_ms, 250);
        assert!(!ep.transport_retry);
    }

    #[test]
    fn missing_model_file_fails_health_check() {
        let ep = ModelEndpoint::reference("ref", "/nonexistent/model.json");
        match health_check(&ep) {
            HealthStatus::Failing(e) => assert_eq!(e.category, ErrorCategory::Protocol),
            HealthStatus::Ok => panic!("expected failing status"),
        }
    }
}
