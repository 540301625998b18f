//! Cross-model consensus validation for generated code.
//!
//! `crosscheck` asks several independent model backends for a solution to
//! the same query, cross-scores every candidate under every *other* model by
//! mean per-token log probability, and selects the candidate the ensemble
//! collectively finds most plausible. Statistical outliers — candidates one
//! backend loves and the rest find unnatural — are flagged as potentially
//! tampered output.
//!
//! The crate is organized around that pipeline:
//!
//! - [`scoring`]: the consensus math (cross-score matrix, ranking,
//!   perplexity view, outlier flags)
//! - [`ngram`]: deterministic byte-level reference models that stand in for
//!   LLM backends offline
//! - [`backend`]: the uniform generate/score interface over remote
//!   completion servers and reference models
//! - [`ensemble`]: full consensus runs with quorum handling and canonical
//!   audit reports
//! - [`attack`]: the seeded poisoning harness that measures whether
//!   consensus selection actually rejects tampered candidates
//! - [`canonical`] and [`rng`]: the determinism substrate everything above
//!   shares

pub mod attack;
pub mod backend;
pub mod canonical;
pub mod ensemble;
pub mod ngram;
pub mod rng;
pub mod scoring;

pub use backend::{BackendError, ErrorCategory, ModelBackend, ModelEndpoint};
pub use ensemble::{run_consensus, ConsensusReport, EnsembleConfig, EnsembleError};
pub use ngram::{Corpus, NGramModel};
pub use scoring::{CandidateScore, ScoreMatrix, TokenLogProbs};
