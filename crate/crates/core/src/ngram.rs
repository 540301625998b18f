//! Byte-level add-alpha smoothed n-gram language models.
//!
//! These are deterministic stand-ins for opaque model backends: trainable on
//! a byte corpus, able to score any byte sequence, and able to generate with
//! a seeded sampler. Byte tokens (vocabulary of all 256 values) keep the
//! probabilities closed-form and hand-checkable.
//!
//! Conditioning contexts are the `order - 1` preceding symbols. Documents
//! are left-padded with a reserved start marker that sits outside the byte
//! range: it conditions the first bytes of a document but is never itself a
//! predicted symbol.
//!
//! Models are immutable after training; scoring and generation on a shared
//! model are safe from any number of threads.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::rng::SplitMix64;
use crate::scoring::TokenLogProbs;

/// All 256 byte values.
pub const VOCAB_SIZE: usize = 256;

/// Start-of-document marker; outside the byte range, context-only.
const START: u16 = 256;

const MODEL_FORMAT: &str = "crosscheck-ngram";
const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum NGramError {
    #[error("corpus has no non-empty document")]
    EmptyCorpus,
    #[error("order must be >= 1, got {0}")]
    InvalidOrder(u32),
    #[error("alpha must be finite and > 0, got {0}")]
    InvalidAlpha(f64),
    #[error("cannot score an empty text")]
    EmptyText,
    #[error("model file {path}: {message}")]
    Format { path: String, message: String },
    #[error("model file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// A named list of byte documents for training.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    name: String,
    documents: Vec<Vec<u8>>,
}

impl Corpus {
    pub fn new(name: impl Into<String>, documents: Vec<Vec<u8>>) -> Result<Self, NGramError> {
        if !documents.iter().any(|d| !d.is_empty()) {
            return Err(NGramError::EmptyCorpus);
        }
        Ok(Self { name: name.into(), documents })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn documents(&self) -> &[Vec<u8>] {
        &self.documents
    }

    pub fn total_bytes(&self) -> usize {
        self.documents.iter().map(Vec::len).sum()
    }

    /// SHA-256 over length-framed documents in list order, hex encoded.
    /// Sensitive to document order and boundaries, not to the corpus name.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        for doc in &self.documents {
            hasher.update((doc.len() as u64).to_le_bytes());
            hasher.update(doc);
        }
        hex::encode(hasher.finalize())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
struct ContextCounts {
    total: u64,
    counts: BTreeMap<u8, u64>,
}

/// Trained add-alpha smoothed model of a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct NGramModel {
    order: u32,
    alpha: f64,
    corpus_fingerprint: String,
    contexts: BTreeMap<Vec<u16>, ContextCounts>,
}

impl NGramModel {
    /// Count every length-`order` window of every document, each document
    /// left-padded with `order - 1` start markers. Counting is by document,
    /// so the result is independent of document order; only the fingerprint
    /// records it.
    pub fn train(corpus: &Corpus, order: u32, alpha: f64) -> Result<Self, NGramError> {
        if order < 1 {
            return Err(NGramError::InvalidOrder(order));
        }
        if !alpha.is_finite() || alpha <= 0.0 {
            return Err(NGramError::InvalidAlpha(alpha));
        }
        let mut contexts: BTreeMap<Vec<u16>, ContextCounts> = BTreeMap::new();
        let ctx_len = (order - 1) as usize;
        for doc in corpus.documents() {
            let mut window: Vec<u16> = vec![START; ctx_len];
            for &byte in doc {
                let slot = contexts.entry(window.clone()).or_default();
                *slot.counts.entry(byte).or_insert(0) += 1;
                slot.total += 1;
                if ctx_len > 0 {
                    window.remove(0);
                    window.push(byte as u16);
                }
            }
        }
        Ok(Self { order, alpha, corpus_fingerprint: corpus.fingerprint(), contexts })
    }

    pub fn order(&self) -> u32 {
        self.order
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn corpus_fingerprint(&self) -> &str {
        &self.corpus_fingerprint
    }

    /// Observed count for `next` after `context`, before smoothing.
    /// `context` is the trailing bytes of the conditioning window; shorter
    /// contexts are left-padded with the start marker.
    pub fn count(&self, context: &[u8], next: u8) -> u64 {
        let window = self.window_from_bytes(context);
        self.contexts
            .get(&window)
            .and_then(|c| c.counts.get(&next).copied())
            .unwrap_or(0)
    }

    /// Total observed continuations of `context`, before smoothing.
    pub fn context_total(&self, context: &[u8]) -> u64 {
        let window = self.window_from_bytes(context);
        self.contexts.get(&window).map(|c| c.total).unwrap_or(0)
    }

    /// Smoothed probability `(count + alpha) / (total + alpha * 256)`.
    pub fn prob(&self, context: &[u8], next: u8) -> f64 {
        let window = self.window_from_bytes(context);
        self.prob_in_window(&window, next)
    }

    /// Per-byte natural-log probabilities of `text`. An optional `context`
    /// seeds the conditioning window but contributes no scored positions.
    pub fn token_logprobs(&self, text: &[u8], context: Option<&[u8]>) -> Result<TokenLogProbs, NGramError> {
        if text.is_empty() {
            return Err(NGramError::EmptyText);
        }
        let mut window = self.window_from_bytes(context.unwrap_or(&[]));
        let mut values = Vec::with_capacity(text.len());
        for &byte in text {
            values.push(self.prob_in_window(&window, byte).ln());
            self.push_symbol(&mut window, byte);
        }
        Ok(TokenLogProbs::new(values).expect("smoothed probabilities are in (0, 1)"))
    }

    /// Sample up to `max_len` bytes after `prompt` with a seeded generator.
    /// Identical `(model, prompt, max_len, seed)` give identical bytes on
    /// every platform.
    pub fn generate(&self, prompt: &[u8], max_len: usize, seed: u64) -> Vec<u8> {
        self.generate_with_stop(prompt, max_len, seed, None)
    }

    /// As [`generate`](Self::generate), but stop after emitting `stop` when
    /// one is designated. The stop byte itself is included, so output length
    /// is always at least 1 for `max_len >= 1`.
    ///
    /// Sampling procedure, one `next_f64` draw per emitted byte: with
    /// weights `w(b) = count(ctx, b) + alpha` and `Z = total(ctx) +
    /// alpha * 256`, emit the smallest byte whose cumulative weight (summed
    /// in byte order as f64) strictly exceeds `r * Z`, falling back to 255
    /// if rounding leaves the total short.
    pub fn generate_with_stop(&self, prompt: &[u8], max_len: usize, seed: u64, stop: Option<u8>) -> Vec<u8> {
        let mut rng = SplitMix64::new(seed);
        let mut window = self.window_from_bytes(prompt);
        let mut out = Vec::with_capacity(max_len);
        for _ in 0..max_len {
            let byte = self.sample_in_window(&window, &mut rng);
            out.push(byte);
            if stop == Some(byte) {
                break;
            }
            self.push_symbol(&mut window, byte);
        }
        out
    }

    /// Write the model as versioned JSON (sorted keys, compact).
    pub fn save(&self, path: &Path) -> Result<(), NGramError> {
        let bytes = self.to_json_bytes();
        std::fs::write(path, bytes).map_err(|source| NGramError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, NGramError> {
        let bytes = std::fs::read(path).map_err(|source| NGramError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json_bytes(&bytes).map_err(|message| NGramError::Format {
            path: path.display().to_string(),
            message,
        })
    }

    pub fn to_json_bytes(&self) -> Vec<u8> {
        let file = ModelFile {
            format: MODEL_FORMAT.to_string(),
            format_version: MODEL_FORMAT_VERSION,
            order: self.order,
            alpha: self.alpha,
            vocab_size: VOCAB_SIZE as u32,
            corpus_fingerprint: self.corpus_fingerprint.clone(),
            contexts: self
                .contexts
                .iter()
                .map(|(context, c)| ContextRecord {
                    context: context.clone(),
                    total: c.total,
                    counts: c.counts.iter().map(|(&b, &n)| (b, n)).collect(),
                })
                .collect(),
        };
        let mut bytes = crate::canonical::to_canonical_json_bytes(&file)
            .expect("model file serialization cannot fail");
        bytes.push(b'\n');
        bytes
    }

    pub fn from_json_bytes(bytes: &[u8]) -> Result<Self, String> {
        let file: ModelFile = serde_json::from_slice(bytes).map_err(|e| e.to_string())?;
        if file.format != MODEL_FORMAT {
            return Err(format!("unknown format {:?}", file.format));
        }
        if file.format_version != MODEL_FORMAT_VERSION {
            return Err(format!("unsupported format_version {}", file.format_version));
        }
        if file.order < 1 {
            return Err(format!("order must be >= 1, got {}", file.order));
        }
        if !file.alpha.is_finite() || file.alpha <= 0.0 {
            return Err(format!("alpha must be finite and > 0, got {}", file.alpha));
        }
        if file.vocab_size != VOCAB_SIZE as u32 {
            return Err(format!("vocab_size must be 256, got {}", file.vocab_size));
        }
        let ctx_len = (file.order - 1) as usize;
        let mut contexts = BTreeMap::new();
        for record in file.contexts {
            if record.context.len() != ctx_len {
                return Err(format!(
                    "context length {} does not match order {}",
                    record.context.len(),
                    file.order
                ));
            }
            if record.context.iter().any(|&s| s > START) {
                return Err("context symbol out of range".to_string());
            }
            let counts: BTreeMap<u8, u64> = record.counts.into_iter().collect();
            let sum: u64 = counts.values().sum();
            if sum != record.total {
                return Err(format!(
                    "context total {} does not match count sum {}",
                    record.total, sum
                ));
            }
            if contexts
                .insert(record.context, ContextCounts { total: record.total, counts })
                .is_some()
            {
                return Err("duplicate context record".to_string());
            }
        }
        Ok(Self {
            order: file.order,
            alpha: file.alpha,
            corpus_fingerprint: file.corpus_fingerprint,
            contexts,
        })
    }

    fn ctx_len(&self) -> usize {
        (self.order - 1) as usize
    }

    /// Conditioning window from the trailing bytes of `bytes`, left-padded
    /// with start markers when shorter than `order - 1`.
    fn window_from_bytes(&self, bytes: &[u8]) -> Vec<u16> {
        let ctx_len = self.ctx_len();
        let mut window = vec![START; ctx_len];
        for &b in bytes.iter().rev().take(ctx_len).rev() {
            window.remove(0);
            window.push(b as u16);
        }
        window
    }

    fn push_symbol(&self, window: &mut Vec<u16>, byte: u8) {
        if self.ctx_len() > 0 {
            window.remove(0);
            window.push(byte as u16);
        }
    }

    fn prob_in_window(&self, window: &[u16], next: u8) -> f64 {
        let (count, total) = match self.contexts.get(window) {
            Some(c) => (c.counts.get(&next).copied().unwrap_or(0), c.total),
            None => (0, 0),
        };
        (count as f64 + self.alpha) / (total as f64 + self.alpha * VOCAB_SIZE as f64)
    }

    fn sample_in_window(&self, window: &[u16], rng: &mut SplitMix64) -> u8 {
        let mut dense = [0u64; VOCAB_SIZE];
        let mut total = 0u64;
        if let Some(c) = self.contexts.get(window) {
            total = c.total;
            for (&b, &n) in &c.counts {
                dense[b as usize] = n;
            }
        }
        let z = total as f64 + self.alpha * VOCAB_SIZE as f64;
        let target = rng.next_f64() * z;
        let mut cumulative = 0.0;
        for (b, &n) in dense.iter().enumerate() {
            cumulative += n as f64 + self.alpha;
            if cumulative > target {
                return b as u8;
            }
        }
        255
    }
}

impl fmt::Display for NGramModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "ngram(order={}, alpha={}, contexts={}, corpus={})",
            self.order,
            self.alpha,
            self.contexts.len(),
            &self.corpus_fingerprint[..12.min(self.corpus_fingerprint.len())]
        )
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    format: String,
    format_version: u32,
    order: u32,
    alpha: f64,
    vocab_size: u32,
    corpus_fingerprint: String,
    contexts: Vec<ContextRecord>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ContextRecord {
    context: Vec<u16>,
    total: u64,
    counts: Vec<(u8, u64)>,
}
