//! Cross-model consensus scoring.
//!
//! A candidate is scored by every model except its own producer: each scorer
//! contributes the mean per-token natural-log probability it assigns to the
//! candidate's text, and the consensus score is the negated average of those
//! contributions. Lower is better; the winner is the candidate the other
//! models collectively find most plausible.
//!
//! All functions here are pure and operate on validated value types, so they
//! are safe to call from any number of threads.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ScoreError {
    #[error("token log-prob sequence is empty")]
    EmptyLogProbs,
    #[error("log probability [{index}] must be finite and <= 0, got {value}")]
    InvalidLogProb { index: usize, value: f64 },
    #[error("candidate text is empty")]
    EmptyCandidateText,
    #[error("score matrix needs at least 2 models, got {0}")]
    MatrixTooSmall(usize),
    #[error("index {index} out of range for {n} candidates")]
    IndexOutOfRange { index: usize, n: usize },
    #[error("self-score entry ({0},{0}) is excluded from the matrix")]
    SelfScore(usize),
    #[error("matrix entry ({i},{j}) must be finite and <= 0, got {value}")]
    InvalidEntry { i: usize, j: usize, value: f64 },
    #[error("candidate {0} has no successful scorers")]
    NoScorers(usize),
    #[error("outlier flagging needs at least 2 scores, got {0}")]
    TooFewScores(usize),
    #[error("outlier threshold k must be > 0, got {0}")]
    InvalidThreshold(f64),
    #[error("token_texts length {tokens} does not match {values} log-prob values")]
    TokenTextMismatch { tokens: usize, values: usize },
}

/// Per-token natural-log probabilities of one text under one model.
///
/// Non-empty by construction; every value is finite and `<= 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenLogProbs {
    values: Vec<f64>,
}

impl TokenLogProbs {
    pub fn new(values: Vec<f64>) -> Result<Self, ScoreError> {
        if values.is_empty() {
            return Err(ScoreError::EmptyLogProbs);
        }
        for (index, &value) in values.iter().enumerate() {
            if !value.is_finite() || value > 0.0 {
                return Err(ScoreError::InvalidLogProb { index, value });
            }
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn token_count(&self) -> usize {
        self.values.len()
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Mean per-token log probability: `(1/count) * sum(values)`.
    ///
    /// Always finite and `<= 0`; the empty case is unrepresentable, so a
    /// degenerate text can never silently score as zero.
    pub fn mean(&self) -> f64 {
        self.sum() / self.values.len() as f64
    }
}

/// One model's generated solution with provenance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Candidate {
    candidate_id: usize,
    producer_id: String,
    text: Vec<u8>,
}

impl Candidate {
    pub fn new(candidate_id: usize, producer_id: impl Into<String>, text: Vec<u8>) -> Result<Self, ScoreError> {
        if text.is_empty() {
            return Err(ScoreError::EmptyCandidateText);
        }
        Ok(Self { candidate_id, producer_id: producer_id.into(), text })
    }

    pub fn candidate_id(&self) -> usize {
        self.candidate_id
    }

    pub fn producer_id(&self) -> &str {
        &self.producer_id
    }

    pub fn text(&self) -> &[u8] {
        &self.text
    }
}

/// `n x n` grid of cross-scores in nats/token: `entries[i][j]` is the mean
/// log probability model `j` assigns to candidate `i`.
///
/// The diagonal is excluded: a candidate is never scored by its own
/// producer. Storage may hold a diagonal value (e.g. from a hostile or
/// hand-built grid) but no accessor ever returns it, which is what the
/// diagonal-poisoning tests pin down.
#[derive(Debug, Clone)]
pub struct ScoreMatrix {
    n: usize,
    entries: Vec<Option<f64>>,
}

impl ScoreMatrix {
    pub fn new(n: usize) -> Result<Self, ScoreError> {
        if n < 2 {
            return Err(ScoreError::MatrixTooSmall(n));
        }
        Ok(Self { n, entries: vec![None; n * n] })
    }

    /// Build from row-major optional entries. Off-diagonal values are
    /// validated; diagonal cells are stored as given but remain invisible
    /// to every accessor.
    pub fn from_rows(rows: Vec<Vec<Option<f64>>>) -> Result<Self, ScoreError> {
        let n = rows.len();
        if n < 2 {
            return Err(ScoreError::MatrixTooSmall(n));
        }
        let mut entries = Vec::with_capacity(n * n);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(ScoreError::MatrixTooSmall(row.len()));
            }
            for (j, &cell) in row.iter().enumerate() {
                if i != j {
                    if let Some(value) = cell {
                        if !value.is_finite() || value > 0.0 {
                            return Err(ScoreError::InvalidEntry { i, j, value });
                        }
                    }
                }
                entries.push(cell);
            }
        }
        Ok(Self { n, entries })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn set(&mut self, i: usize, j: usize, value: f64) -> Result<(), ScoreError> {
        self.check_index(i)?;
        self.check_index(j)?;
        if i == j {
            return Err(ScoreError::SelfScore(i));
        }
        if !value.is_finite() || value > 0.0 {
            return Err(ScoreError::InvalidEntry { i, j, value });
        }
        self.entries[i * self.n + j] = Some(value);
        Ok(())
    }

    /// The entry `(i, j)`, or `None` if absent. Self-scores read as absent
    /// no matter what storage holds.
    pub fn entry(&self, i: usize, j: usize) -> Option<f64> {
        if i == j {
            return None;
        }
        self.entries[i * self.n + j]
    }

    /// Count of present off-diagonal entries in row `i`.
    pub fn row_present(&self, i: usize) -> usize {
        (0..self.n).filter(|&j| self.entry(i, j).is_some()).count()
    }

    /// Row-major view with the diagonal masked to `None`; this is the
    /// canonical serialized form.
    pub fn to_rows(&self) -> Vec<Vec<Option<f64>>> {
        (0..self.n)
            .map(|i| (0..self.n).map(|j| self.entry(i, j)).collect())
            .collect()
    }

    fn check_index(&self, index: usize) -> Result<(), ScoreError> {
        if index >= self.n {
            return Err(ScoreError::IndexOutOfRange { index, n: self.n });
        }
        Ok(())
    }
}

impl PartialEq for ScoreMatrix {
    fn eq(&self, other: &Self) -> bool {
        self.n == other.n && self.to_rows() == other.to_rows()
    }
}

/// Consensus score of one candidate: negated mean of its cross-scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub candidate_id: usize,
    /// Nats/token; lower means the other models find the text more plausible.
    pub score: f64,
    /// Off-diagonal entries that were present and used; `n - 1` when the
    /// row is complete.
    pub contributing_models: usize,
}

/// Negated average of row `i`'s present off-diagonal entries.
///
/// With backend failures the average runs over the present entries only and
/// `contributing_models` records how many that was; the quorum policy upstream
/// decides whether that is acceptable.
pub fn consensus_score(matrix: &ScoreMatrix, candidate: usize) -> Result<CandidateScore, ScoreError> {
    if candidate >= matrix.n() {
        return Err(ScoreError::IndexOutOfRange { index: candidate, n: matrix.n() });
    }
    let mut sum = 0.0;
    let mut used = 0usize;
    for j in 0..matrix.n() {
        if let Some(value) = matrix.entry(candidate, j) {
            sum += value;
            used += 1;
        }
    }
    if used == 0 {
        return Err(ScoreError::NoScorers(candidate));
    }
    // `+ 0.0` only normalizes a negative zero (all-zero rows) for clean
    // serialization; every other value is untouched.
    let score = -(sum / used as f64) + 0.0;
    Ok(CandidateScore { candidate_id: candidate, score, contributing_models: used })
}

/// All candidates scored and sorted ascending by score, ties broken by
/// ascending candidate id. The first element is the winner.
pub fn rank_candidates(matrix: &ScoreMatrix) -> Result<Vec<CandidateScore>, ScoreError> {
    let mut scores = (0..matrix.n())
        .map(|i| consensus_score(matrix, i))
        .collect::<Result<Vec<_>, _>>()?;
    scores.sort_by(|a, b| {
        a.score
            .total_cmp(&b.score)
            .then_with(|| a.candidate_id.cmp(&b.candidate_id))
    });
    Ok(scores)
}

/// `exp(-mean_logprob)`: the per-token perplexity view of the same quantity.
///
/// Strictly decreasing in the mean log probability, so ranking by consensus
/// score and ranking by mean cross-model perplexity select the same winner.
pub fn perplexity(mean_logprob: f64) -> f64 {
    (-mean_logprob).exp()
}

/// Outlier decision for one candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutlierFlag {
    pub candidate_id: usize,
    pub flagged: bool,
    pub zvalue: f64,
}

/// Flag scores above `mean + k * stdev` (population standard deviation).
///
/// All-equal scores have zero variance and produce zero flags. Note the
/// algebraic bound `|z| <= sqrt(count - 1)` for population z-scores: with a
/// pair of scores z is exactly 1, and small ensembles need a k below that
/// bound for a flag to be reachable at all.
pub fn flag_outliers(scores: &[CandidateScore], k: f64) -> Result<Vec<OutlierFlag>, ScoreError> {
    if scores.len() < 2 {
        return Err(ScoreError::TooFewScores(scores.len()));
    }
    if k <= 0.0 || !k.is_finite() {
        return Err(ScoreError::InvalidThreshold(k));
    }
    let n = scores.len() as f64;
    let mean = scores.iter().map(|s| s.score).sum::<f64>() / n;
    let variance = scores.iter().map(|s| (s.score - mean) * (s.score - mean)).sum::<f64>() / n;
    let stdev = variance.sqrt();
    Ok(scores
        .iter()
        .map(|s| {
            let zvalue = if stdev == 0.0 { 0.0 } else { (s.score - mean) / stdev };
            OutlierFlag {
                candidate_id: s.candidate_id,
                flagged: stdev > 0.0 && s.score > mean + k * stdev,
                zvalue,
            }
        })
        .collect())
}
