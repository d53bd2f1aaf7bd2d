//! Reliability and validity statistics over measure outputs.

mod correlation;
mod mtmm;
mod reliability;
mod table;

use std::collections::BTreeMap;

use serde::Serialize;

pub use correlation::{average_ranks, kendall_tau, pearson, spearman};
pub use mtmm::{build_mtmm, MtmmReport};
pub use reliability::{cronbach_alpha, inter_rater, test_retest, InterRater, RaterAgreement};
pub use table::{criterion_means, ratings_by_rater, read_criterion_csv, CriterionRating, ScoreRow, ScoreTable};

use crate::{Error, Result};

/// Minimal acceptable reliability for a measure.
pub const RELIABILITY_THRESHOLD: f64 = 0.9;

/// Correlations between automatic and criterion scores; `None` where a
/// correlation is undefined (constant input).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConcurrentValidity {
    pub n_concepts: usize,
    pub kendall: Option<f64>,
    pub pearson: Option<f64>,
    pub spearman: Option<f64>,
}

fn defined(r: Result<f64>) -> Result<Option<f64>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::Undefined(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Correlates two concept-keyed score maps over their shared concepts.
pub fn concurrent_validity(auto: &BTreeMap<String, f64>, criterion: &BTreeMap<String, f64>) -> Result<ConcurrentValidity> {
    let (x, y): (Vec<f64>, Vec<f64>) = auto.iter().filter_map(|(c, &a)| criterion.get(c).map(|&b| (a, b))).unzip();
    if x.is_empty() {
        return Err(Error::Empty("no concept has both an automatic and a criterion score".into()));
    }
    if x.len() < 2 {
        return Err(Error::Precondition("concurrent validity needs at least 2 shared concepts".into()));
    }
    Ok(ConcurrentValidity {
        n_concepts: x.len(),
        kendall: defined(kendall_tau(&x, &y))?,
        pearson: defined(pearson(&x, &y))?,
        spearman: defined(spearman(&x, &y))?,
    })
}
