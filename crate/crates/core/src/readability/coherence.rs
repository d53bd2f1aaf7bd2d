use std::collections::{BTreeMap, BTreeSet};

use crate::backend::TokenId;
use crate::linalg::{self, Matrix};
use crate::measure::CoherenceKind;
use crate::readability::TokenPattern;
use crate::{Error, Result};

/// Window-level occurrence counts over a corpus.
///
/// With `window = Some(w)` every run of `w` consecutive tokens of a document
/// is one window (a document no longer than `w` is a single window); with
/// `None` each document is one window. A token occurs in a window if it
/// appears there at least once.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CooccurrenceStats {
    windows: u64,
    single: BTreeMap<TokenId, u64>,
    pair: BTreeMap<(TokenId, TokenId), u64>,
}

impl CooccurrenceStats {
    pub fn from_documents<'a, I>(documents: I, window: Option<usize>) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [TokenId]>,
    {
        if window == Some(0) {
            return Err(Error::Precondition("co-occurrence window must be at least 1".into()));
        }
        let mut stats = Self::default();
        for doc in documents {
            let size = window.unwrap_or(doc.len()).min(doc.len()).max(1);
            if doc.is_empty() {
                continue;
            }
            for w in doc.windows(size) {
                stats.add_window(w);
            }
        }
        if stats.windows == 0 {
            return Err(Error::Empty("corpus".into()));
        }
        Ok(stats)
    }

    fn add_window(&mut self, tokens: &[TokenId]) {
        self.windows += 1;
        let distinct: BTreeSet<TokenId> = tokens.iter().copied().collect();
        for &a in &distinct {
            *self.single.entry(a).or_default() += 1;
        }
        for (i, &a) in distinct.iter().enumerate() {
            for &b in distinct.iter().skip(i + 1) {
                *self.pair.entry((a, b)).or_default() += 1;
            }
        }
    }

    /// Combines counts gathered independently, e.g. by separate workers.
    pub fn merge(&mut self, other: &CooccurrenceStats) {
        self.windows += other.windows;
        for (k, v) in &other.single {
            *self.single.entry(*k).or_default() += v;
        }
        for (k, v) in &other.pair {
            *self.pair.entry(*k).or_default() += v;
        }
    }

    pub fn windows(&self) -> u64 {
        self.windows
    }

    pub fn probability(&self, a: TokenId) -> f64 {
        self.single.get(&a).copied().unwrap_or(0) as f64 / self.windows as f64
    }

    pub fn joint_probability(&self, a: TokenId, b: TokenId) -> f64 {
        if a == b {
            return self.probability(a);
        }
        let key = if a < b { (a, b) } else { (b, a) };
        self.pair.get(&key).copied().unwrap_or(0) as f64 / self.windows as f64
    }

    fn require_seen(&self, a: TokenId) -> Result<f64> {
        let p = self.probability(a);
        if p == 0.0 {
            return Err(Error::Undefined(format!("token {a} never occurs in the reference corpus")));
        }
        Ok(p)
    }

    /// `log((P(a,b) + ε) / (P(a)·P(b)))`
    pub fn uci(&self, a: TokenId, b: TokenId, epsilon: f64) -> Result<f64> {
        let (pa, pb) = (self.require_seen(a)?, self.require_seen(b)?);
        Ok(((self.joint_probability(a, b) + epsilon) / (pa * pb)).ln())
    }

    /// `log((P(a,b) + ε) / P(b))`, conditioning on `b`.
    pub fn umass(&self, a: TokenId, b: TokenId, epsilon: f64) -> Result<f64> {
        let pb = self.require_seen(b)?;
        self.require_seen(a)?;
        Ok(((self.joint_probability(a, b) + epsilon) / pb).ln())
    }
}

/// What a coherence score is computed against.
#[derive(Debug, Clone, Copy)]
pub enum CoherenceReference<'a> {
    Corpus(&'a CooccurrenceStats),
    /// Embedding matrix indexed by token id.
    Embeddings(&'a Matrix),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoherenceMeasure {
    pub kind: CoherenceKind,
    /// Smoothing for UCI/UMass.
    pub epsilon: f64,
}

impl CoherenceMeasure {
    pub const DEFAULT_EPSILON: f64 = 1e-12;

    pub fn new(kind: CoherenceKind) -> Self {
        Self { kind, epsilon: Self::DEFAULT_EPSILON }
    }
}

pub fn embedding_distance(a: &[f64], b: &[f64]) -> f64 {
    -linalg::l2_distance(a, b)
}

pub fn embedding_cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    let denom = linalg::norm(a) * linalg::norm(b);
    if denom == 0.0 {
        return Err(Error::Undefined("cosine similarity with a zero embedding".into()));
    }
    Ok((linalg::dot(a, b) / denom).clamp(-1.0, 1.0))
}

fn embedding_row(e: &Matrix, t: TokenId) -> Result<&[f64]> {
    if t as usize >= e.rows() {
        return Err(Error::IndexOutOfRange { index: t as usize, limit: e.rows() });
    }
    Ok(e.row(t as usize))
}

/// Mean pairwise similarity over the pattern's distinct tokens.
///
/// Symmetric measures average over unordered pairs. UMass is oriented
/// towards the lower-ranked token: for ranks `i < j` (descending weight) the
/// pair contributes `log((P(x_i, x_j) + ε) / P(x_j))`. Pairs are enumerated in
/// ascending token-id order (ranks only fix UMass orientation), so the score
/// does not depend on how the pattern lists ties.
pub fn coherence_score(pattern: &TokenPattern, measure: &CoherenceMeasure, reference: CoherenceReference<'_>) -> Result<f64> {
    let ranked = pattern.ranked_ids();
    let distinct: BTreeSet<TokenId> = ranked.iter().copied().collect();
    if distinct.len() < 2 {
        return Err(Error::Undefined(format!("coherence needs at least 2 distinct tokens, pattern has {}", distinct.len())));
    }
    let rank: BTreeMap<TokenId, usize> = ranked.iter().enumerate().map(|(i, &t)| (t, i)).rev().collect();
    let tokens: Vec<TokenId> = distinct.into_iter().collect();

    let mut total = 0.0;
    let mut pairs = 0usize;
    for (i, &a) in tokens.iter().enumerate() {
        for &b in &tokens[i + 1..] {
            let mu = match (measure.kind, reference) {
                (CoherenceKind::Uci, CoherenceReference::Corpus(stats)) => stats.uci(a, b, measure.epsilon)?,
                (CoherenceKind::UMass, CoherenceReference::Corpus(stats)) => {
                    let (hi, lo) = if rank[&a] < rank[&b] { (a, b) } else { (b, a) };
                    stats.umass(hi, lo, measure.epsilon)?
                }
                (CoherenceKind::EmbDist, CoherenceReference::Embeddings(e)) => {
                    embedding_distance(embedding_row(e, a)?, embedding_row(e, b)?)
                }
                (CoherenceKind::EmbCos, CoherenceReference::Embeddings(e)) => {
                    embedding_cosine(embedding_row(e, a)?, embedding_row(e, b)?)?
                }
                (CoherenceKind::Uci | CoherenceKind::UMass, _) => {
                    return Err(Error::Precondition("UCI/UMass need corpus co-occurrence statistics".into()))
                }
                _ => return Err(Error::Precondition("embedding measures need an embedding matrix".into())),
            };
            total += mu;
            pairs += 1;
        }
    }
    Ok(total / pairs as f64)
}
