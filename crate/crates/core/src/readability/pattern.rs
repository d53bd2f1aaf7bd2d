use crate::backend::{Backend, ForwardPass, TokenId};
use crate::concept::Concept;
use crate::linalg::{self, Matrix};
use crate::measure::Side;
use crate::perturbation::addition_direction;
use crate::readability::{ReadabilityConfig, TokenPattern};
use crate::{Error, Result};

struct Occurrence {
    sequence: usize,
    position: usize,
    activation: f64,
}

fn min_max(values: &mut [(TokenId, f64)]) {
    let lo = values.iter().map(|v| v.1).fold(f64::INFINITY, f64::min);
    let hi = values.iter().map(|v| v.1).fold(f64::NEG_INFINITY, f64::max);
    for v in values.iter_mut() {
        v.1 = if hi > lo { (v.1 - lo) / (hi - lo) } else { 1.0 };
    }
}

fn dedup_max(values: Vec<(TokenId, f64)>) -> Vec<(TokenId, f64)> {
    let mut out: Vec<(TokenId, f64)> = Vec::new();
    for (t, w) in values {
        match out.iter_mut().find(|(u, _)| *u == t) {
            Some(e) => e.1 = e.1.max(w),
            None => out.push((t, w)),
        }
    }
    out
}

/// Input-side pattern: the tokens at the `input_top_k` most activating
/// positions, plus the context tokens whose replacement by the baseline
/// token most reduces the activation at those positions.
///
/// Only preceding tokens are ablated and the sequence is cut after the
/// occurrence, since later tokens cannot influence a causal model. Direct
/// and context weights are min-max normalised separately before merging;
/// on equal weight a direct token ranks first.
///
/// A corpus with no positive activation gives an empty pattern.
pub fn extract_input_pattern(
    concept: &Concept,
    batch: &[ForwardPass],
    backend: &dyn Backend,
    cfg: &ReadabilityConfig,
) -> Result<TokenPattern> {
    if batch.iter().all(|p| p.sequence.is_empty()) {
        return Err(Error::Empty("corpus".into()));
    }
    let mut occurrences = Vec::new();
    let mut scanned = 0;
    for (s, pass) in batch.iter().enumerate() {
        for (t, h) in pass.sequence.hidden.iter_rows().enumerate() {
            scanned += 1;
            let a = concept.activate(h)?;
            if !a.is_finite() {
                return Err(Error::NonFinite("activation"));
            }
            if a > 0.0 {
                occurrences.push(Occurrence { sequence: s, position: t, activation: a });
            }
        }
    }
    if occurrences.is_empty() {
        return Ok(TokenPattern::empty(Side::Input, scanned));
    }
    // stable: ties keep corpus order
    occurrences.sort_by(|a, b| b.activation.total_cmp(&a.activation));
    occurrences.truncate(cfg.input_top_k);

    let token = |o: &Occurrence| batch[o.sequence].sequence.token_ids[o.position];
    let mut direct = dedup_max(occurrences.iter().map(|o| (token(o), o.activation)).collect());

    let mut context = Vec::new();
    for o in &occurrences {
        let prefix = &batch[o.sequence].sequence.token_ids[..=o.position];
        if prefix.len() < 2 {
            continue;
        }
        let base = concept.activate(backend.forward(prefix)?.sequence.hidden.row(o.position))?;
        let mut edited = prefix.to_vec();
        for j in 0..o.position {
            if prefix[j] == cfg.baseline_token {
                continue;
            }
            edited[j] = cfg.baseline_token;
            let a = concept.activate(backend.forward(&edited)?.sequence.hidden.row(o.position))?;
            edited[j] = prefix[j];
            let drop = base - a;
            if !drop.is_finite() {
                return Err(Error::NonFinite("activation drop"));
            }
            if drop > 0.0 {
                context.push((prefix[j], drop));
            }
        }
    }
    let mut context = dedup_max(context);
    context.sort_by(|a, b| b.1.total_cmp(&a.1));
    context.truncate(cfg.input_top_k);

    min_max(&mut direct);
    min_max(&mut context);
    TokenPattern::from_weights(Side::Input, direct.into_iter().chain(context), scanned)
}

/// Median L2 norm of the hidden states in a batch; 0 for an empty batch.
pub fn median_hidden_norm(batch: &[ForwardPass]) -> f64 {
    let mut norms: Vec<f64> = batch.iter().flat_map(|p| p.sequence.hidden.iter_rows().map(linalg::norm)).collect();
    if norms.is_empty() {
        return 0.0;
    }
    norms.sort_by(f64::total_cmp);
    let n = norms.len();
    if n % 2 == 1 {
        norms[n / 2]
    } else {
        0.5 * (norms[n / 2 - 1] + norms[n / 2])
    }
}

/// Output-side pattern: the `output_top_k` highest logits when decoding
/// `c·v/‖v‖` as a one-token sequence, with the logits as weights.
///
/// `c` is `cfg.scale`, or the median hidden norm of `batch` when unset. With
/// `c = 0` the pattern reflects the model's baseline distribution and is
/// flagged degenerate.
pub fn extract_output_pattern(
    concept: &Concept,
    batch: &[ForwardPass],
    backend: &dyn Backend,
    cfg: &ReadabilityConfig,
) -> Result<TokenPattern> {
    let info = backend.info();
    let m = info.hidden_width;
    let c = cfg.scale.unwrap_or_else(|| median_hidden_norm(batch));
    let h = linalg::scale(&addition_direction(concept, m)?, c);
    let logits = backend.decode(&Matrix::from_vec(1, m, h), 0)?;

    let mut k = cfg.output_top_k;
    if k > logits.logits.len() {
        log::warn!("output pattern size {k} exceeds vocabulary size {}; clamping", logits.logits.len());
        k = logits.logits.len();
    }
    let mut ranked: Vec<(TokenId, f64)> = logits.logits.iter().enumerate().map(|(i, &l)| (i as TokenId, l)).collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1));
    ranked.truncate(k);
    let pattern = TokenPattern::from_weights(Side::Output, ranked, 1)?;
    Ok(if c == 0.0 { pattern.mark_degenerate() } else { pattern })
}
