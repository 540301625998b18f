//! In-process backend over a trained n-gram model.

use crate::ngram::NGramModel;

use super::{BackendError, ErrorCategory, HealthStatus, ModelBackend, ScoredText};

/// Deterministic backend: generation is seeded sampling, scoring delegates
/// to the model's per-byte log probabilities. Temperature is accepted for
/// interface parity and ignored.
pub struct ReferenceBackend {
    id: String,
    model: NGramModel,
}

impl ReferenceBackend {
    pub fn new(id: impl Into<String>, model: NGramModel) -> Self {
        Self { id: id.into(), model }
    }

    pub fn model(&self) -> &NGramModel {
        &self.model
    }
}

impl ModelBackend for ReferenceBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn generate(&self, query: &[u8], max_tokens: u32, _temperature: f64, seed: u64) -> Result<Vec<u8>, BackendError> {
        if max_tokens == 0 {
            return Err(BackendError::new(&self.id, ErrorCategory::Refusal, "max_tokens must be >= 1"));
        }
        Ok(self.model.generate(query, max_tokens as usize, seed))
    }

    fn score(&self, text: &[u8], context: Option<&[u8]>) -> Result<ScoredText, BackendError> {
        let logprobs = self
            .model
            .token_logprobs(text, context)
            .map_err(|e| BackendError::new(&self.id, ErrorCategory::Protocol, e.to_string()))?;
        ScoredText::new(text.to_vec(), logprobs, None, &self.id)
            .map_err(|e| BackendError::new(&self.id, ErrorCategory::Protocol, e.to_string()))
    }

    fn health(&self) -> HealthStatus {
        // The model was loaded at construction; nothing left to fail.
        HealthStatus::Ok
    }
}
