//! Concepts as virtual neurons.
//!
//! A concept is an activation function `a: R^m -> R` over hidden vectors at
//! the interpreted layer; a positive value means the concept is present.
//! Three forms are supported:
//!
//! - linear: `v·h + b` (probe / TCAV style)
//! - ReLU-linear: `max(0, v·h + b)` (sparse dictionary unit)
//! - one-hot: `h[i]` (single neuron)

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::linalg;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum ConceptKind {
    Linear { v: Vec<f64>, b: f64 },
    ReluLinear { v: Vec<f64>, b: f64 },
    OneHot { neuron_index: usize },
}

impl ConceptKind {
    pub fn name(&self) -> &'static str {
        match self {
            ConceptKind::Linear { .. } => "linear",
            ConceptKind::ReluLinear { .. } => "relu_linear",
            ConceptKind::OneHot { .. } => "one_hot",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Concept {
    id: String,
    kind: ConceptKind,
    hidden_width: Option<usize>,
    semantic_expression: Option<String>,
}

impl Concept {
    pub fn linear(id: impl Into<String>, v: Vec<f64>, b: f64) -> Result<Self> {
        Self::new(id, ConceptKind::Linear { v, b }, None)
    }

    pub fn relu_linear(id: impl Into<String>, v: Vec<f64>, b: f64) -> Result<Self> {
        Self::new(id, ConceptKind::ReluLinear { v, b }, None)
    }

    pub fn one_hot(id: impl Into<String>, neuron_index: usize) -> Result<Self> {
        Self::new(id, ConceptKind::OneHot { neuron_index }, None)
    }

    /// Validates the definition. `hidden_width`, when given, is checked against
    /// `v` (or the neuron index) and then enforced on every evaluation.
    pub fn new(id: impl Into<String>, kind: ConceptKind, hidden_width: Option<usize>) -> Result<Self> {
        let id = id.into();
        let invalid = |reason: String| Error::InvalidConcept { id: id.clone(), reason };
        let width = match &kind {
            ConceptKind::Linear { v, b } | ConceptKind::ReluLinear { v, b } => {
                if v.is_empty() {
                    return Err(invalid("empty direction vector".into()));
                }
                if !linalg::all_finite(v) || !b.is_finite() {
                    return Err(invalid("non-finite parameters".into()));
                }
                if linalg::norm_sq(v) == 0.0 {
                    return Err(Error::ZeroNorm);
                }
                if let Some(m) = hidden_width {
                    if m != v.len() {
                        return Err(invalid(format!("v has length {} but hidden width is {m}", v.len())));
                    }
                }
                Some(v.len())
            }
            ConceptKind::OneHot { neuron_index } => {
                if let Some(m) = hidden_width {
                    if *neuron_index >= m {
                        return Err(invalid(format!("neuron index {neuron_index} >= hidden width {m}")));
                    }
                }
                hidden_width
            }
        };
        Ok(Self { id, kind, hidden_width: width, semantic_expression: None })
    }

    pub fn with_semantic_expression(mut self, text: impl Into<String>) -> Self {
        self.semantic_expression = Some(text.into());
        self
    }

    /// Pins the hidden width; fails if it contradicts the definition.
    pub fn with_hidden_width(self, m: usize) -> Result<Self> {
        let mut c = Concept::new(self.id, self.kind, Some(m))?;
        c.semantic_expression = self.semantic_expression;
        Ok(c)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn kind(&self) -> &ConceptKind {
        &self.kind
    }

    pub fn hidden_width(&self) -> Option<usize> {
        self.hidden_width
    }

    pub fn semantic_expression(&self) -> Option<&str> {
        self.semantic_expression.as_deref()
    }

    fn check_width(&self, h: &[f64]) -> Result<()> {
        if let Some(m) = self.hidden_width {
            if h.len() != m {
                return Err(Error::dims(m, h.len()));
            }
        }
        if let ConceptKind::OneHot { neuron_index } = self.kind {
            if neuron_index >= h.len() {
                return Err(Error::IndexOutOfRange { index: neuron_index, limit: h.len() });
            }
        }
        Ok(())
    }

    /// Affine pre-activation `v·h + b` (`h[i]` for a neuron).
    pub fn pre_activation(&self, h: &[f64]) -> Result<f64> {
        self.check_width(h)?;
        Ok(match &self.kind {
            ConceptKind::Linear { v, b } | ConceptKind::ReluLinear { v, b } => linalg::dot(v, h) + b,
            ConceptKind::OneHot { neuron_index } => h[*neuron_index],
        })
    }

    pub fn activate(&self, h: &[f64]) -> Result<f64> {
        let z = self.pre_activation(h)?;
        Ok(match self.kind {
            ConceptKind::ReluLinear { .. } => z.max(0.0),
            _ => z,
        })
    }

    pub fn activate_batch<'a, I>(&self, rows: I) -> Result<Vec<f64>>
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        rows.into_iter().map(|h| self.activate(h)).collect()
    }

    /// The concept direction in a space of width `m`: `v` or the basis vector `e_i`.
    pub fn direction(&self, m: usize) -> Result<Vec<f64>> {
        match &self.kind {
            ConceptKind::Linear { v, .. } | ConceptKind::ReluLinear { v, .. } => {
                if v.len() != m {
                    return Err(Error::dims(m, v.len()));
                }
                Ok(v.clone())
            }
            ConceptKind::OneHot { neuron_index } => {
                if *neuron_index >= m {
                    return Err(Error::IndexOutOfRange { index: *neuron_index, limit: m });
                }
                let mut e = vec![0.0; m];
                e[*neuron_index] = 1.0;
                Ok(e)
            }
        }
    }
}

/// Positive and negative hidden-state examples for fitting a linear concept.
#[derive(Debug, Clone)]
pub struct LabeledHiddenSet {
    pub positives: Vec<Vec<f64>>,
    pub negatives: Vec<Vec<f64>>,
}

impl LabeledHiddenSet {
    fn width(&self) -> Result<usize> {
        if self.positives.len() < 2 || self.negatives.len() < 2 {
            return Err(Error::Precondition("need at least 2 examples per class".into()));
        }
        let m = self.positives[0].len();
        if m == 0 {
            return Err(Error::Precondition("zero-width hidden vectors".into()));
        }
        for h in self.positives.iter().chain(&self.negatives) {
            if h.len() != m {
                return Err(Error::dims(m, h.len()));
            }
            if !linalg::all_finite(h) {
                return Err(Error::NonFinite("training example"));
            }
        }
        Ok(m)
    }
}

/// Full-batch gradient descent for L2-regularised logistic regression.
#[derive(Debug, Clone)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub l2: f64,
    pub max_iterations: usize,
    /// Stop once the gradient norm falls below this.
    pub tolerance: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self { learning_rate: 0.5, l2: 1e-2, max_iterations: 20_000, tolerance: 1e-6 }
    }
}

#[derive(Debug, Clone)]
pub struct TrainedConcept {
    pub concept: Concept,
    pub accuracy: f64,
    pub iterations: usize,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Fits a linear classifier separating positives from negatives; its decision
/// function `v·h + b` becomes the concept's activation.
///
/// Fails with [`Error::TrainingDidNotConverge`] when the iteration cap is hit
/// without reaching full training accuracy, or when the optimum is the
/// degenerate `v = 0` (e.g. identical classes).
pub fn train_linear_concept(
    id: impl Into<String>,
    data: &LabeledHiddenSet,
    config: &TrainingConfig,
) -> Result<TrainedConcept> {
    let m = data.width()?;
    let samples: Vec<(&[f64], f64)> = data
        .positives
        .iter()
        .map(|h| (h.as_slice(), 1.0))
        .chain(data.negatives.iter().map(|h| (h.as_slice(), 0.0)))
        .collect();
    let n = samples.len() as f64;

    let mut w = vec![0.0; m];
    let mut b = 0.0;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < config.max_iterations {
        let mut gw = vec![0.0; m];
        let mut gb = 0.0;
        for (h, y) in &samples {
            let r = sigmoid(linalg::dot(&w, h) + b) - y;
            for (g, x) in gw.iter_mut().zip(h.iter()) {
                *g += r * x;
            }
            gb += r;
        }
        for (g, wi) in gw.iter_mut().zip(&w) {
            *g = *g / n + config.l2 * wi;
        }
        gb /= n;
        let gnorm = (linalg::norm_sq(&gw) + gb * gb).sqrt();
        if gnorm < config.tolerance {
            converged = true;
            break;
        }
        for (wi, g) in w.iter_mut().zip(&gw) {
            *wi -= config.learning_rate * g;
        }
        b -= config.learning_rate * gb;
        iterations += 1;
    }

    let correct = samples
        .iter()
        .filter(|(h, y)| {
            let z = linalg::dot(&w, h) + b;
            (z > 0.0) == (*y > 0.5)
        })
        .count();
    let accuracy = correct as f64 / n;

    if linalg::norm_sq(&w) == 0.0 || (!converged && accuracy < 1.0) {
        return Err(Error::TrainingDidNotConverge { iterations, accuracy });
    }
    let concept = Concept::new(id, ConceptKind::Linear { v: w, b }, Some(m))?;
    Ok(TrainedConcept { concept, accuracy, iterations })
}

// ---------------------------------------------------------------------------
// Concept file

#[derive(Debug, Serialize, Deserialize)]
struct ConceptRecord {
    id: String,
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    v: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    b: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    neuron_index: Option<usize>,
    #[serde(default)]
    semantic_expression: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ConceptFile {
    concepts: Vec<ConceptRecord>,
}

impl TryFrom<ConceptRecord> for Concept {
    type Error = Error;

    fn try_from(r: ConceptRecord) -> Result<Self> {
        let missing = |field: &str| Error::InvalidConcept {
            id: r.id.clone(),
            reason: format!("kind `{}` requires field `{field}`", r.kind),
        };
        let kind = match r.kind.as_str() {
            "linear" => ConceptKind::Linear {
                v: r.v.clone().ok_or_else(|| missing("v"))?,
                b: r.b.unwrap_or(0.0),
            },
            "relu_linear" => ConceptKind::ReluLinear {
                v: r.v.clone().ok_or_else(|| missing("v"))?,
                b: r.b.unwrap_or(0.0),
            },
            "one_hot" => ConceptKind::OneHot {
                neuron_index: r.neuron_index.ok_or_else(|| missing("neuron_index"))?,
            },
            other => return Err(Error::UnknownConceptKind(other.to_string())),
        };
        let mut c = Concept::new(r.id, kind, None)?;
        c.semantic_expression = r.semantic_expression;
        Ok(c)
    }
}

impl From<&Concept> for ConceptRecord {
    fn from(c: &Concept) -> Self {
        let (v, b, neuron_index) = match &c.kind {
            ConceptKind::Linear { v, b } | ConceptKind::ReluLinear { v, b } => (Some(v.clone()), Some(*b), None),
            ConceptKind::OneHot { neuron_index } => (None, None, Some(*neuron_index)),
        };
        ConceptRecord {
            id: c.id.clone(),
            kind: c.kind.name().to_string(),
            v,
            b,
            neuron_index,
            semantic_expression: c.semantic_expression.clone(),
        }
    }
}

pub fn parse_concepts(json: &str) -> Result<Vec<Concept>> {
    let file: ConceptFile = serde_json::from_str(json)?;
    let concepts = file
        .concepts
        .into_iter()
        .map(Concept::try_from)
        .collect::<Result<Vec<_>>>()?;
    let mut seen = std::collections::BTreeSet::new();
    for c in &concepts {
        if !seen.insert(c.id()) {
            return Err(Error::InvalidConcept { id: c.id.clone(), reason: "duplicate id".into() });
        }
    }
    Ok(concepts)
}

pub fn load_concepts(path: &Path) -> Result<Vec<Concept>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_concepts(&text)
}

pub fn concepts_to_json(concepts: &[Concept]) -> Result<String> {
    let file = ConceptFile { concepts: concepts.iter().map(ConceptRecord::from).collect() };
    Ok(serde_json::to_string_pretty(&file)?)
}
