//! Readability: token patterns that maximally activate a concept, scored by
//! topic coherence.

mod coherence;
mod pattern;

use serde::{Deserialize, Serialize};

pub use coherence::{
    coherence_score, embedding_cosine, embedding_distance, CoherenceMeasure, CoherenceReference, CooccurrenceStats,
};
pub use pattern::{extract_input_pattern, extract_output_pattern, median_hidden_norm};

use crate::backend::{Backend, ForwardPass, TokenId};
use crate::concept::Concept;
use crate::linalg::Matrix;
use crate::measure::{CoherenceKind, ReadabilityMeasure, Side};
use crate::{Error, Result};

/// Ranked, deduplicated tokens with finite weights.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenPattern {
    side: Side,
    tokens: Vec<(TokenId, f64)>,
    source_stats: usize,
    degenerate: bool,
}

impl TokenPattern {
    /// Deduplicates by token keeping the largest weight, then ranks by
    /// descending weight. Equal weights keep their input order.
    pub fn from_weights<I>(side: Side, weights: I, source_stats: usize) -> Result<Self>
    where
        I: IntoIterator<Item = (TokenId, f64)>,
    {
        let mut tokens: Vec<(TokenId, f64)> = Vec::new();
        for (t, w) in weights {
            if !w.is_finite() {
                return Err(Error::NonFinite("pattern weight"));
            }
            match tokens.iter_mut().find(|(u, _)| *u == t) {
                Some(entry) => entry.1 = entry.1.max(w),
                None => tokens.push((t, w)),
            }
        }
        tokens.sort_by(|a, b| b.1.total_cmp(&a.1));
        Ok(Self { side, tokens, source_stats, degenerate: false })
    }

    pub fn empty(side: Side, source_stats: usize) -> Self {
        Self { side, tokens: Vec::new(), source_stats, degenerate: false }
    }

    pub(crate) fn mark_degenerate(mut self) -> Self {
        self.degenerate = true;
        self
    }

    pub fn side(&self) -> Side {
        self.side
    }

    pub fn tokens(&self) -> &[(TokenId, f64)] {
        &self.tokens
    }

    pub fn ranked_ids(&self) -> Vec<TokenId> {
        self.tokens.iter().map(|&(t, _)| t).collect()
    }

    /// Number of corpus positions scanned (input side) or decoded (output side).
    pub fn source_stats(&self) -> usize {
        self.source_stats
    }

    /// No positive activation anywhere in the corpus.
    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Output pattern decoded from a zero-scale hidden state.
    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    pub fn to_file(&self, concept_id: &str) -> PatternFile {
        PatternFile {
            concept_id: concept_id.to_string(),
            side: self.side,
            tokens: self.tokens.iter().map(|&(id, weight)| PatternToken { id, weight }).collect(),
        }
    }
}

/// On-disk pattern format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternFile {
    pub concept_id: String,
    pub side: Side,
    pub tokens: Vec<PatternToken>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternToken {
    pub id: TokenId,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReadabilityConfig {
    /// Occurrences kept on the input side, and context contributors kept.
    pub input_top_k: usize,
    /// Tokens kept on the output side.
    pub output_top_k: usize,
    /// Co-occurrence window; `None` uses whole documents.
    pub window: Option<usize>,
    pub epsilon: f64,
    /// Output-side scale; `None` uses the median hidden norm of the batch.
    pub scale: Option<f64>,
    /// Token substituted for an ablated context token.
    pub baseline_token: TokenId,
}

impl Default for ReadabilityConfig {
    fn default() -> Self {
        Self {
            input_top_k: 10,
            output_top_k: 10,
            window: None,
            epsilon: CoherenceMeasure::DEFAULT_EPSILON,
            scale: None,
            baseline_token: 0,
        }
    }
}

impl ReadabilityConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_top_k == 0 || self.output_top_k == 0 {
            return Err(Error::Config("pattern sizes must be at least 1".into()));
        }
        if self.window == Some(0) {
            return Err(Error::Config("co-occurrence window must be at least 1".into()));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config("epsilon must be positive".into()));
        }
        if let Some(c) = self.scale {
            if !(c >= 0.0 && c.is_finite()) {
                return Err(Error::Config("scale must be finite and non-negative".into()));
            }
        }
        Ok(())
    }
}

/// Embedding of every vocabulary token, indexed by token id.
pub fn vocabulary_embeddings(backend: &dyn Backend) -> Result<Matrix> {
    let ids: Vec<TokenId> = (0..backend.info().vocab_size as TokenId).collect();
    backend.embed(&ids)
}

/// Readability of one concept on one batch, with the patterns scored.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchReadability {
    /// One entry per requested measure; `None` when the pattern has fewer
    /// than two distinct tokens.
    pub scores: Vec<Option<f64>>,
    pub input: Option<TokenPattern>,
    pub output: Option<TokenPattern>,
}

/// Readability scores of one concept on one batch.
///
/// Patterns are extracted once per side; co-occurrence statistics come from
/// the batch itself.
pub fn evaluate_batch(
    concept: &Concept,
    batch: &[ForwardPass],
    measures: &[ReadabilityMeasure],
    backend: &dyn Backend,
    embeddings: &Matrix,
    cfg: &ReadabilityConfig,
) -> Result<BatchReadability> {
    let needs = |side| measures.iter().any(|m| m.side == side);
    let input = if needs(Side::Input) { Some(extract_input_pattern(concept, batch, backend, cfg)?) } else { None };
    let output = if needs(Side::Output) { Some(extract_output_pattern(concept, batch, backend, cfg)?) } else { None };
    let stats = if measures.iter().any(|m| matches!(m.coherence, CoherenceKind::Uci | CoherenceKind::UMass)) {
        Some(CooccurrenceStats::from_documents(batch.iter().map(|p| p.sequence.token_ids.as_slice()), cfg.window)?)
    } else {
        None
    };

    let scores = measures
        .iter()
        .map(|m| {
            let pattern = match m.side {
                Side::Input => input.as_ref(),
                Side::Output => output.as_ref(),
            }
            .expect("pattern extracted for every requested side");
            let reference = match m.coherence {
                CoherenceKind::Uci | CoherenceKind::UMass => {
                    CoherenceReference::Corpus(stats.as_ref().expect("statistics built for co-occurrence measures"))
                }
                _ => CoherenceReference::Embeddings(embeddings),
            };
            let measure = CoherenceMeasure { kind: m.coherence, epsilon: cfg.epsilon };
            match coherence_score(pattern, &measure, reference) {
                Ok(s) => Ok(Some(s)),
                Err(Error::Undefined(_)) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BatchReadability { scores, input, output })
}
