//! Faithfulness: how much the model output moves when a concept is perturbed
//! in hidden space.
//!
//! For every token position the unperturbed logits `y = g(h_t)` are compared
//! with `y' = g(ξ(h_t))`, where `ξ` is ablation or ε-addition, through one of
//! four differences (loss, KL divergence, predicted-class logit, true-class
//! logit). Per-token differences are averaged per batch, either uniformly or
//! weighted by the clamped concept activation.

use serde::{Deserialize, Serialize};

use crate::backend::{log_softmax, Backend, ForwardPass, LogitRow};
use crate::concept::Concept;
use crate::linalg;
use crate::measure::{DifferenceKind, FaithfulnessMeasure, PerturbationKind};
use crate::perturbation::{ablate_with, addition_direction, Solver};
use crate::{Error, Result};

fn check_finite(y: &LogitRow) -> Result<()> {
    if linalg::all_finite(&y.logits) {
        Ok(())
    } else {
        Err(Error::NonFinite("logits"))
    }
}

fn check_pair(y: &LogitRow, y_pert: &LogitRow) -> Result<()> {
    if y.logits.len() != y_pert.logits.len() {
        return Err(Error::dims(y.logits.len(), y_pert.logits.len()));
    }
    check_finite(y)?;
    check_finite(y_pert)
}

fn check_class(y: &LogitRow, j: usize) -> Result<()> {
    if j >= y.logits.len() {
        return Err(Error::IndexOutOfRange { index: j, limit: y.logits.len() });
    }
    Ok(())
}

/// Cross-entropy of `true_class` under the softmax of `y`.
pub fn cross_entropy(y: &LogitRow, true_class: usize) -> Result<f64> {
    check_class(y, true_class)?;
    check_finite(y)?;
    Ok(-log_softmax(&y.logits)[true_class])
}

/// `CE(y) − CE(y')`: negative when the perturbation hurts the true token.
pub fn delta_loss(y: &LogitRow, y_pert: &LogitRow, true_class: usize) -> Result<f64> {
    check_pair(y, y_pert)?;
    Ok(cross_entropy(y, true_class)? - cross_entropy(y_pert, true_class)?)
}

/// `KL(softmax(y) ‖ softmax(y'))` in nats.
pub fn delta_div(y: &LogitRow, y_pert: &LogitRow) -> Result<f64> {
    check_pair(y, y_pert)?;
    let lp = log_softmax(&y.logits);
    let lq = log_softmax(&y_pert.logits);
    let kl = lp.iter().zip(&lq).fold(0.0, |acc, (a, b)| acc + a.exp() * (a - b));
    // rounding can leave a tiny negative residue for equal distributions
    Ok(kl.max(0.0))
}

/// `−(y_j − y'_j)` on raw logits.
pub fn delta_class(y: &LogitRow, y_pert: &LogitRow, j: usize) -> Result<f64> {
    check_pair(y, y_pert)?;
    check_class(y, j)?;
    Ok(-(y.logits[j] - y_pert.logits[j]))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    Uniform,
    #[default]
    ActivationWeighted,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FaithfulnessConfig {
    pub weighting: Weighting,
    /// GRAD step is `relative_step · (1 + ‖h‖)`.
    pub relative_step: f64,
    pub solver: Solver,
}

impl Default for FaithfulnessConfig {
    fn default() -> Self {
        Self { weighting: Weighting::ActivationWeighted, relative_step: 1e-3, solver: Solver::ClosedForm }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaithfulnessResult {
    pub concept_id: String,
    pub measure: String,
    pub score: f64,
    pub token_count: usize,
    pub per_batch_scores: Vec<f64>,
    pub skipped_batches: Vec<usize>,
}

/// Class index the difference is read at, or `None` when the position has
/// no ground truth and the measure needs one.
fn target_class(diff: DifferenceKind, pass: &ForwardPass, position: usize) -> Option<usize> {
    match diff {
        DifferenceKind::Loss | DifferenceKind::TClass => pass.sequence.next_token_ids[position].map(|t| t as usize),
        DifferenceKind::PClass => Some(pass.logits[position].argmax()),
        DifferenceKind::Div => Some(0),
    }
}

fn difference(diff: DifferenceKind, y: &LogitRow, y_pert: &LogitRow, class: usize) -> Result<f64> {
    match diff {
        DifferenceKind::Loss => delta_loss(y, y_pert, class),
        DifferenceKind::Div => delta_div(y, y_pert),
        DifferenceKind::PClass | DifferenceKind::TClass => delta_class(y, y_pert, class),
    }
}

/// Directional derivative of a difference quantity along the concept's
/// ε-addition direction, by central differences.
///
/// Loss: `−[CE(h+εd) − CE(h−εd)] / 2ε`. PClass/TClass:
/// `[y_j(h+εd) − y_j(h−εd)] / 2ε`. Signs follow the finite differences.
pub fn grad_delta(
    concept: &Concept,
    pass: &ForwardPass,
    position: usize,
    diff: DifferenceKind,
    backend: &dyn Backend,
    relative_step: f64,
) -> Result<f64> {
    FaithfulnessMeasure::new(PerturbationKind::Grad, diff)?;
    let class = target_class(diff, pass, position)
        .ok_or_else(|| Error::Precondition(format!("position {position} has no ground-truth next token")))?;
    let (plus, minus, eps) = grad_pair(concept, pass, position, backend, relative_step)?;
    grad_from_pair(diff, &plus, &minus, eps, class)
}

fn grad_pair(
    concept: &Concept,
    pass: &ForwardPass,
    position: usize,
    backend: &dyn Backend,
    relative_step: f64,
) -> Result<(LogitRow, LogitRow, f64)> {
    let hidden = &pass.sequence.hidden;
    if position >= hidden.rows() {
        return Err(Error::IndexOutOfRange { index: position, limit: hidden.rows() });
    }
    let h = hidden.row(position);
    let d = addition_direction(concept, h.len())?;
    let eps = relative_step * (1.0 + linalg::norm(h));
    let plus = backend.decode_replaced(hidden, position, &linalg::axpy(h, eps, &d))?;
    let minus = backend.decode_replaced(hidden, position, &linalg::axpy(h, -eps, &d))?;
    Ok((plus, minus, eps))
}

fn grad_from_pair(diff: DifferenceKind, plus: &LogitRow, minus: &LogitRow, eps: f64, class: usize) -> Result<f64> {
    match diff {
        DifferenceKind::Loss => Ok(-(cross_entropy(plus, class)? - cross_entropy(minus, class)?) / (2.0 * eps)),
        DifferenceKind::PClass | DifferenceKind::TClass => {
            check_class(plus, class)?;
            Ok((plus.logits[class] - minus.logits[class]) / (2.0 * eps))
        }
        DifferenceKind::Div => Err(Error::UnsupportedCombination("GRAD-Div".into())),
    }
}

/// Score of one batch for one measure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchScore {
    /// `None` when no position carried weight.
    pub score: Option<f64>,
    pub token_count: usize,
}

#[derive(Default, Clone, Copy)]
struct Accumulator {
    weighted: f64,
    weight: f64,
    count: usize,
}

/// All requested measures for one batch, sharing decodes between measures.
pub fn evaluate_batch(
    concept: &Concept,
    batch: &[ForwardPass],
    measures: &[FaithfulnessMeasure],
    backend: &dyn Backend,
    config: &FaithfulnessConfig,
) -> Result<Vec<BatchScore>> {
    let mut acc = vec![Accumulator::default(); measures.len()];
    let need_abl = measures.iter().any(|m| m.perturbation == PerturbationKind::Abl);
    let need_grad = measures.iter().any(|m| m.perturbation == PerturbationKind::Grad);

    for pass in batch {
        let hidden = &pass.sequence.hidden;
        for t in 0..pass.sequence.len() {
            let h = hidden.row(t);
            let weight = match config.weighting {
                Weighting::Uniform => 1.0,
                Weighting::ActivationWeighted => concept.activate(h)?.max(0.0),
            };
            if weight == 0.0 {
                continue;
            }
            let y = &pass.logits[t];

            let ablated = if need_abl {
                let row = ablate_with(concept, h, &config.solver)?;
                Some(if row.as_slice() == h { y.clone() } else { backend.decode_replaced(hidden, t, &row)? })
            } else {
                None
            };
            let grad = if need_grad { Some(grad_pair(concept, pass, t, backend, config.relative_step)?) } else { None };

            for (m, a) in measures.iter().zip(acc.iter_mut()) {
                let Some(class) = target_class(m.difference, pass, t) else { continue };
                let delta = match m.perturbation {
                    PerturbationKind::Abl => difference(m.difference, y, ablated.as_ref().expect("ablation computed"), class)?,
                    PerturbationKind::Grad => {
                        let (plus, minus, eps) = grad.as_ref().expect("gradient pair computed");
                        grad_from_pair(m.difference, plus, minus, *eps, class)?
                    }
                };
                a.weighted += weight * delta;
                a.weight += weight;
                a.count += 1;
            }
        }
    }
    Ok(acc
        .into_iter()
        .map(|a| BatchScore {
            score: (a.weight > 0.0).then(|| a.weighted / a.weight),
            token_count: a.count,
        })
        .collect())
}

/// Faithfulness of `concept` over corpus batches: per-batch means, then the
/// unweighted mean over batches that carried weight.
pub fn evaluate_faithfulness(
    concept: &Concept,
    batches: &[Vec<ForwardPass>],
    measure: FaithfulnessMeasure,
    backend: &dyn Backend,
    config: &FaithfulnessConfig,
) -> Result<FaithfulnessResult> {
    if batches.iter().all(|b| b.is_empty()) {
        return Err(Error::Empty("corpus".into()));
    }
    let mut per_batch = Vec::new();
    let mut skipped = Vec::new();
    let mut tokens = 0;
    for (i, batch) in batches.iter().enumerate() {
        let s = evaluate_batch(concept, batch, &[measure], backend, config)?[0];
        tokens += s.token_count;
        match s.score {
            Some(v) => per_batch.push(v),
            None => skipped.push(i),
        }
    }
    aggregate(concept.id(), measure, per_batch, skipped, tokens)
}

pub(crate) fn aggregate(
    concept_id: &str,
    measure: FaithfulnessMeasure,
    per_batch_scores: Vec<f64>,
    skipped_batches: Vec<usize>,
    token_count: usize,
) -> Result<FaithfulnessResult> {
    if per_batch_scores.is_empty() {
        return Err(Error::AllBatchesSkipped);
    }
    let score = per_batch_scores.iter().sum::<f64>() / per_batch_scores.len() as f64;
    Ok(FaithfulnessResult {
        concept_id: concept_id.to_string(),
        measure: crate::measure::Measure::Faithfulness(measure).to_string(),
        score,
        token_count,
        per_batch_scores,
        skipped_batches,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{LinearReadout, ToyConfig, ToyTransformer};
    use crate::linalg::Matrix;

    fn row(logits: Vec<f64>) -> LogitRow {
        LogitRow { position: 0, logits }
    }

    #[test]
    fn loss_difference() {
        let y = row(vec![0.0, 0.0]);
        assert_eq!(delta_loss(&y, &y, 1).unwrap(), 0.0);
        // log-softmax mass 1 − 1e-9 on class 0
        let confident = row(vec![0.0, (1e-9f64).ln() - (1.0 - 1e-9f64).ln()]);
        let d = delta_loss(&y, &confident, 0).unwrap();
        assert!((d - std::f64::consts::LN_2).abs() < 1e-6, "{d}");
        assert!(delta_loss(&y, &y, 2).is_err());
    }

    #[test]
    fn kl_difference() {
        let y = row(vec![0.3, -1.2, 2.0]);
        assert_eq!(delta_div(&y, &y).unwrap(), 0.0);
        let p = row(vec![0.0, 0.0]);
        let q = row(vec![0.0, 3f64.ln()]);
        let expected = 0.5 * 2f64.ln() + 0.5 * (2.0f64 / 3.0).ln();
        assert!((delta_div(&p, &q).unwrap() - expected).abs() < 1e-12);
        assert!((delta_div(&p, &q).unwrap() - 0.1438).abs() < 1e-4);
        assert_ne!(delta_div(&p, &q).unwrap(), delta_div(&q, &p).unwrap());
        assert!(delta_div(&row(vec![f64::NAN, 0.0]), &p).is_err());
    }

    #[test]
    fn class_difference() {
        let y = row(vec![2.0, 0.0]);
        assert_eq!(delta_class(&y, &y, 0).unwrap(), 0.0);
        assert_eq!(delta_class(&y, &row(vec![5.0, 0.0]), 0).unwrap(), 3.0);
        assert!(delta_class(&y, &y, 2).is_err());
    }

    fn single_linear_layer() -> LinearReadout {
        // k = 3, m = 2; W's null space is spanned by (1, -1)
        let embedding = Matrix::from_vec(3, 2, vec![1.0, 0.0, 0.0, 1.0, 0.5, 0.5]);
        let weight = Matrix::from_vec(3, 2, vec![1.0, 1.0, 2.0, 2.0, -1.0, -1.0]);
        LinearReadout::new(embedding, weight, vec![0.1, 0.0, -0.3]).unwrap()
    }

    #[test]
    fn grad_in_null_space_is_zero() {
        let b = single_linear_layer();
        let pass = b.forward(&[0, 1, 2]).unwrap();
        let c = Concept::linear("null", vec![1.0, -1.0], 0.0).unwrap();
        for diff in [DifferenceKind::Loss, DifferenceKind::PClass, DifferenceKind::TClass] {
            let g = grad_delta(&c, &pass, 0, diff, &b, 1e-3).unwrap();
            assert!(g.abs() < 1e-6, "{diff:?}: {g}");
        }
    }

    #[test]
    fn grad_matches_analytic_slope_for_linear_logits() {
        let b = single_linear_layer();
        let pass = b.forward(&[0, 1, 2]).unwrap();
        let c = Concept::linear("c", vec![0.3, 0.9], 0.0).unwrap();
        let d = addition_direction(&c, 2).unwrap();
        let slope = b.weight().mul_vec(&d);
        let j = pass.logits[0].argmax();
        let fd = grad_delta(&c, &pass, 0, DifferenceKind::PClass, &b, 1e-3).unwrap();
        assert!((fd - slope[j]).abs() < 1e-8);
        let t = pass.sequence.next_token_ids[0].unwrap() as usize;
        let fd = grad_delta(&c, &pass, 0, DifferenceKind::TClass, &b, 1e-3).unwrap();
        assert!((fd - slope[t]).abs() < 1e-8);
    }

    #[test]
    fn grad_div_is_rejected() {
        let b = single_linear_layer();
        let pass = b.forward(&[0, 1]).unwrap();
        let c = Concept::one_hot("n", 0).unwrap();
        assert!(matches!(grad_delta(&c, &pass, 0, DifferenceKind::Div, &b, 1e-3), Err(Error::UnsupportedCombination(_))));
        // last position has no ground truth
        assert!(grad_delta(&c, &pass, 1, DifferenceKind::Loss, &b, 1e-3).is_err());
    }

    #[test]
    fn class_mean_over_batch() {
        // logits = (x, 0, 0) with x ∈ {-1, -3}; ablating neuron 0 moves logit 0 to 0
        let embedding = Matrix::from_vec(3, 2, vec![-1.0, 0.0, -3.0, 0.0, 0.0, 0.0]);
        let weight = Matrix::from_vec(3, 2, vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let b = LinearReadout::new(embedding, weight, vec![0.0; 3]).unwrap();
        let batch = vec![b.forward(&[0, 0]).unwrap(), b.forward(&[1, 0]).unwrap()];
        let c = Concept::one_hot("n", 0).unwrap();
        let cfg = FaithfulnessConfig { weighting: Weighting::Uniform, ..FaithfulnessConfig::default() };
        let m = FaithfulnessMeasure::new(PerturbationKind::Abl, DifferenceKind::TClass).unwrap();
        // position 0 of each sequence: δ = 1 and 3; last positions excluded
        let r = evaluate_faithfulness(&c, &[batch], m, &b, &cfg).unwrap();
        assert_eq!(r.token_count, 2);
        assert_eq!(r.score, 2.0);
    }

    #[test]
    fn zero_activation_concept_scores_zero_or_is_skipped() {
        let b = ToyTransformer::new(ToyConfig::with_seed(2));
        let batch = vec![b.forward(&[1, 2, 3]).unwrap()];
        // inactive everywhere: huge negative bias
        let c = Concept::relu_linear("off", vec![1.0; 32], -1e6).unwrap();
        let m = FaithfulnessMeasure::new(PerturbationKind::Abl, DifferenceKind::Div).unwrap();
        let uniform = FaithfulnessConfig { weighting: Weighting::Uniform, ..FaithfulnessConfig::default() };
        assert_eq!(evaluate_faithfulness(&c, std::slice::from_ref(&batch), m, &b, &uniform).unwrap().score, 0.0);
        assert!(matches!(
            evaluate_faithfulness(&c, &[batch], m, &b, &FaithfulnessConfig::default()),
            Err(Error::AllBatchesSkipped)
        ));
        assert!(evaluate_faithfulness(&c, &[], m, &b, &uniform).is_err());
    }

    #[test]
    fn deterministic() {
        let b = ToyTransformer::new(ToyConfig::with_seed(4));
        let batches = vec![vec![b.forward(&[5, 6, 7, 8]).unwrap()], vec![b.forward(&[9, 10, 11]).unwrap()]];
        let c = Concept::linear("l", (0..32).map(|i| (i as f64).sin()).collect(), 0.1).unwrap();
        for m in crate::measure::Measure::all() {
            if let crate::measure::Measure::Faithfulness(f) = m {
                let cfg = FaithfulnessConfig { weighting: Weighting::Uniform, ..FaithfulnessConfig::default() };
                let a = evaluate_faithfulness(&c, &batches, f, &b, &cfg).unwrap();
                let again = evaluate_faithfulness(&c, &batches, f, &b, &cfg).unwrap();
                assert_eq!(a, again);
            }
        }
    }
}
