//! Seeded synthetic corpora and concept sets for demos and tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::backend::{Backend, TokenId};
use crate::concept::Concept;
use crate::linalg;
use crate::pipeline::Document;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorpusSpec {
    pub n_docs: usize,
    pub doc_length: usize,
    pub vocab_size: usize,
    /// Token `t ≥ 1` belongs to topic `(t − 1) mod topics`; token 0 is never
    /// emitted.
    pub topics: usize,
    /// Probability that a token is drawn from the document's topic rather
    /// than uniformly.
    pub topic_weight: f64,
    pub seed: u64,
}

impl CorpusSpec {
    pub fn new(n_docs: usize, doc_length: usize, vocab_size: usize, seed: u64) -> Self {
        Self { n_docs, doc_length, vocab_size, topics: 10, topic_weight: 0.8, seed }
    }
}

/// Documents that each favour one topic's tokens.
pub fn synthetic_corpus(spec: &CorpusSpec) -> Result<Vec<Document>> {
    if spec.vocab_size < spec.topics + 1 || spec.topics == 0 {
        return Err(Error::Precondition(format!(
            "vocabulary of {} cannot hold {} topics plus the pad token",
            spec.vocab_size, spec.topics
        )));
    }
    if !(0.0..=1.0).contains(&spec.topic_weight) {
        return Err(Error::Precondition("topic weight must lie in [0, 1]".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let members: Vec<Vec<TokenId>> = (0..spec.topics)
        .map(|c| (1..spec.vocab_size as TokenId).filter(|t| (*t as usize - 1) % spec.topics == c).collect())
        .collect();
    Ok((0..spec.n_docs)
        .map(|i| {
            let topic = &members[rng.random_range(0..spec.topics)];
            let tokens = (0..spec.doc_length)
                .map(|_| {
                    if rng.random_bool(spec.topic_weight) {
                        topic[rng.random_range(0..topic.len())]
                    } else {
                        rng.random_range(1..spec.vocab_size as TokenId)
                    }
                })
                .collect();
            Document { doc_id: format!("doc{i:05}"), tokens }
        })
        .collect())
}

/// A mix of neuron, linear and ReLU-linear concepts sized for `backend`.
///
/// Linear concepts point along a token embedding, ReLU-linear ones along a
/// random direction with a small negative bias, neurons cycle through the
/// hidden coordinates.
pub fn synthetic_concepts(backend: &dyn Backend, n: usize, seed: u64) -> Result<Vec<Concept>> {
    let info = backend.info();
    let m = info.hidden_width;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let id = format!("c{i:03}");
        let concept = match i % 3 {
            0 => Concept::one_hot(id, (i / 3 * 7) % m)?.with_semantic_expression(format!("hidden unit {}", (i / 3 * 7) % m)),
            1 => {
                let token = rng.random_range(1..info.vocab_size as TokenId);
                let e = backend.embed(&[token])?;
                let v = e.row(0);
                let norm = linalg::norm(v);
                if norm == 0.0 {
                    return Err(Error::ZeroNorm);
                }
                Concept::linear(id, linalg::scale(v, 1.0 / norm), 0.0)?.with_semantic_expression(format!("token {token}"))
            }
            _ => {
                let v: Vec<f64> = (0..m).map(|_| StandardNormal.sample(&mut rng)).collect();
                let norm = linalg::norm(&v);
                Concept::relu_linear(id, linalg::scale(&v, 1.0 / norm), -0.1)?
            }
        };
        out.push(concept.with_hidden_width(m)?);
    }
    Ok(out)
}
