//! Client for the completions wire protocol with echoed logprobs.
//!
//! Request and response shapes are documented field by field in
//! `docs/wire-protocol.md`, together with the error decision table and a
//! captured golden transcript. The short version:
//!
//! - generation: `POST {base_url}/v1/completions` with `model`, `prompt`,
//!   `max_tokens`, `temperature`, `seed`; the completion is
//!   `choices[0].text`.
//! - scoring: same endpoint with `prompt = context + text`,
//!   `max_tokens = 0`, `echo = true`, `logprobs = 0`, `temperature = 0`;
//!   per-token values come back in `choices[0].logprobs.token_logprobs`
//!   with byte offsets in `text_offset`.
//!
//! Scoring keeps exactly the echoed tokens whose starting offset falls
//! inside the text suffix (offset >= context byte length). The first echoed
//! token of the prompt has no conditioning and arrives with a null logprob;
//! it is dropped and the token count reflects retained values only. A null
//! anywhere else is a protocol error.

use serde::{Deserialize, Serialize};

use super::{BackendError, EndpointKind, ErrorCategory, HealthStatus, ModelBackend, ModelEndpoint, ScoredText};
use crate::scoring::TokenLogProbs;

pub struct RemoteBackend {
    id: String,
    base_url: String,
    model_name: String,
    auth_token: Option<String>,
    transport_retry: bool,
    client: reqwest::blocking::Client,
}

#[derive(Serialize)]
struct CompletionRequest<'a> {
    model: &'a str,
    prompt: &'a str,
    max_tokens: u32,
    temperature: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    echo: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    logprobs: Option<u32>,
}

#[derive(Deserialize)]
struct CompletionResponse {
    #[serde(default)]
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    #[serde(default)]
    text: String,
    #[serde(default)]
    logprobs: Option<LogProbsBlock>,
}

#[derive(Deserialize)]
struct LogProbsBlock {
    #[serde(default)]
    tokens: Option<Vec<String>>,
    token_logprobs: Vec<Option<f64>>,
    text_offset: Vec<usize>,
}

impl RemoteBackend {
    pub fn new(endpoint: &ModelEndpoint) -> Result<Self, BackendError> {
        let (base_url, model_name, auth_token_env) = match &endpoint.kind {
            EndpointKind::Remote { base_url, model_name, auth_token_env } => {
                (base_url.clone(), model_name.clone(), auth_token_env.clone())
            }
            EndpointKind::Reference { .. } => {
                return Err(BackendError::new(
                    &endpoint.id,
                    ErrorCategory::Protocol,
                    "reference endpoint passed to the remote client",
                ));
            }
        };
        let auth_token = match auth_token_env {
            Some(var) => Some(std::env::var(&var).map_err(|_| {
                BackendError::new(
                    &endpoint.id,
                    ErrorCategory::Protocol,
                    format!("auth environment variable {var} is not set"),
                )
            })?),
            None => None,
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(endpoint.timeout())
            .build()
            .map_err(|e| BackendError::new(&endpoint.id, ErrorCategory::Transport, e.to_string()))?;
        Ok(Self {
            id: endpoint.id.clone(),
            base_url: base_url.trim_end_matches('/').to_string(),
            model_name,
            auth_token,
            transport_retry: endpoint.transport_retry,
            client,
        })
    }

    fn completions_url(&self) -> String {
        format!("{}/v1/completions", self.base_url)
    }

    fn models_url(&self) -> String {
        format!("{}/v1/models", self.base_url)
    }

    fn err(&self, category: ErrorCategory, detail: impl Into<String>) -> BackendError {
        BackendError::new(&self.id, category, detail)
    }

    /// Errors raised before response headers arrive are transport problems
    /// (or timeouts); anything the server actually said that we cannot use
    /// is a protocol problem. See the decision table in the protocol docs.
    fn classify_send(&self, e: &reqwest::Error) -> BackendError {
        if e.is_timeout() {
            self.err(ErrorCategory::Timeout, e.to_string())
        } else {
            self.err(ErrorCategory::Transport, e.to_string())
        }
    }

    fn post_completions(&self, request: &CompletionRequest<'_>) -> Result<CompletionResponse, BackendError> {
        let mut attempts = 0;
        loop {
            attempts += 1;
            match self.post_completions_once(request) {
                Err(e) if e.category == ErrorCategory::Transport && self.transport_retry && attempts == 1 => {
                    continue;
                }
                other => return other,
            }
        }
    }

    fn post_completions_once(&self, request: &CompletionRequest<'_>) -> Result<CompletionResponse, BackendError> {
        let mut builder = self.client.post(self.completions_url()).json(request);
        if let Some(token) = &self.auth_token {
            builder = builder.bearer_auth(token);
        }
        let response = builder.send().map_err(|e| self.classify_send(&e))?;
        let status = response.status();
        let body = response.bytes().map_err(|e| {
            if e.is_timeout() {
                self.err(ErrorCategory::Timeout, e.to_string())
            } else {
                self.err(ErrorCategory::Protocol, format!("failed reading response body: {e}"))
            }
        })?;
        if !status.is_success() {
            return Err(self.err(ErrorCategory::Protocol, format!("http status {}", status.as_u16())));
        }
        serde_json::from_slice(&body)
            .map_err(|e| self.err(ErrorCategory::Protocol, format!("malformed response body: {e}")))
    }

    fn utf8<'a>(&self, label: &str, bytes: &'a [u8]) -> Result<&'a str, BackendError> {
        std::str::from_utf8(bytes).map_err(|_| {
            self.err(
                ErrorCategory::Protocol,
                format!("{label} is not valid UTF-8 and cannot be sent over the wire"),
            )
        })
    }

    fn extract_suffix_logprobs(
        &self,
        block: LogProbsBlock,
        context_len: usize,
    ) -> Result<(Vec<f64>, Option<Vec<String>>), BackendError> {
        let count = block.token_logprobs.len();
        if block.text_offset.len() != count {
            return Err(self.err(
                ErrorCategory::Protocol,
                format!(
                    "text_offset length {} does not match token_logprobs length {count}",
                    block.text_offset.len()
                ),
            ));
        }
        if let Some(tokens) = &block.tokens {
            if tokens.len() != count {
                return Err(self.err(
                    ErrorCategory::Protocol,
                    format!("tokens length {} does not match token_logprobs length {count}", tokens.len()),
                ));
            }
        }
        let mut values = Vec::new();
        let mut texts = block.tokens.as_ref().map(|_| Vec::new());
        for idx in 0..count {
            if block.text_offset[idx] < context_len {
                continue; // context token, excluded by the offset boundary
            }
            match block.token_logprobs[idx] {
                None if idx == 0 => continue, // first echoed token has no conditioning
                None => {
                    return Err(self.err(
                        ErrorCategory::Protocol,
                        format!("null logprob at token index {idx}"),
                    ));
                }
                Some(value) => {
                    if !value.is_finite() || value > 0.0 {
                        return Err(self.err(
                            ErrorCategory::Protocol,
                            format!("logprob at token index {idx} must be finite and <= 0, got {value}"),
                        ));
                    }
                    values.push(value);
                    if let (Some(texts), Some(tokens)) = (texts.as_mut(), block.tokens.as_ref()) {
                        texts.push(tokens[idx].clone());
                    }
                }
            }
        }
        if values.is_empty() {
            return Err(self.err(
                ErrorCategory::Protocol,
                "offsets do not isolate any scored token inside the text suffix",
            ));
        }
        Ok((values, texts))
    }
}

impl ModelBackend for RemoteBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn generate(&self, query: &[u8], max_tokens: u32, temperature: f64, seed: u64) -> Result<Vec<u8>, BackendError> {
        let prompt = self.utf8("query", query)?;
        let request = CompletionRequest {
            model: &self.model_name,
            prompt,
            max_tokens,
            temperature,
            seed: Some(seed),
            echo: None,
            logprobs: None,
        };
        let response = self.post_completions(&request)?;
        let choice = response
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| self.err(ErrorCategory::Refusal, "response contains no completion choice"))?;
        Ok(choice.text.into_bytes())
    }

    fn score(&self, text: &[u8], context: Option<&[u8]>) -> Result<ScoredText, BackendError> {
        if text.is_empty() {
            return Err(self.err(ErrorCategory::Protocol, "cannot score an empty text"));
        }
        let text_str = self.utf8("text", text)?;
        let context_bytes = context.unwrap_or(&[]);
        let context_str = self.utf8("context", context_bytes)?;
        let prompt = format!("{context_str}{text_str}");
        let request = CompletionRequest {
            model: &self.model_name,
            prompt: &prompt,
            max_tokens: 0,
            temperature: 0.0,
            seed: None,
            echo: Some(true),
            logprobs: Some(0),
        };
        let response = self.post_completions(&request)?;
        let choice = response
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| self.err(ErrorCategory::Refusal, "response contains no completion choice"))?;
        let block = choice
            .logprobs
            .ok_or_else(|| self.err(ErrorCategory::Protocol, "response lacks a logprobs block"))?;
        let (values, token_texts) = self.extract_suffix_logprobs(block, context_bytes.len())?;
        let logprobs = TokenLogProbs::new(values)
            .map_err(|e| self.err(ErrorCategory::Protocol, e.to_string()))?;
        ScoredText::new(text.to_vec(), logprobs, token_texts, &self.id)
            .map_err(|e| self.err(ErrorCategory::Protocol, e.to_string()))
    }

    fn health(&self) -> HealthStatus {
        let mut builder = self.client.get(self.models_url());
        if let Some(token) = &self.auth_token {
            builder = builder.bearer_auth(token);
        }
        match builder.send() {
            Ok(response) if response.status().is_success() => HealthStatus::Ok,
            Ok(response) => HealthStatus::Failing(self.err(
                ErrorCategory::Protocol,
                format!("http status {}", response.status().as_u16()),
            )),
            Err(e) => HealthStatus::Failing(self.classify_send(&e)),
        }
    }
}
