use std::collections::BTreeMap;

use serde::Serialize;

use super::correlation::{kendall_tau, pearson};
use crate::{Error, Result};

/// Cronbach's alpha of `J` subsets, each a vector of scores over the same
/// `N` concepts. Variances are population variances over concepts.
pub fn cronbach_alpha(subsets: &[Vec<f64>]) -> Result<f64> {
    let j = subsets.len();
    if j < 2 {
        return Err(Error::Precondition(format!("Cronbach's alpha needs at least 2 subsets, got {j}")));
    }
    let n = subsets[0].len();
    if n < 2 {
        return Err(Error::Precondition(format!("Cronbach's alpha needs at least 2 concepts, got {n}")));
    }
    if let Some(bad) = subsets.iter().find(|s| s.len() != n) {
        return Err(Error::dims(n, bad.len()));
    }
    if !subsets.iter().flatten().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("subset score"));
    }
    // var(Σx_j) = Σ_ij cov(x_i, x_j), so the formula only needs the
    // covariance matrix. Scaling it by the largest variance keeps identical
    // subsets at exactly 1: every entry becomes 1.0 and the sums are integers.
    let means: Vec<f64> = subsets.iter().map(|s| s.iter().sum::<f64>() / n as f64).collect();
    let cov = |a: usize, b: usize| {
        subsets[a].iter().zip(&subsets[b]).map(|(x, y)| (x - means[a]) * (y - means[b])).sum::<f64>() / n as f64
    };
    let matrix: Vec<Vec<f64>> = (0..j).map(|a| (0..j).map(|b| cov(a, b)).collect()).collect();
    let scale = (0..j).map(|a| matrix[a][a]).fold(0.0, f64::max);
    if scale == 0.0 {
        return Err(Error::Undefined("every subset has zero variance".into()));
    }
    let diagonal: f64 = (0..j).map(|a| matrix[a][a] / scale).sum();
    let total: f64 = matrix.iter().flatten().map(|c| c / scale).sum();
    if total <= 0.0 {
        return Err(Error::Undefined("total score has zero variance".into()));
    }
    let jf = j as f64;
    Ok(jf * (total - diagonal) / ((jf - 1.0) * total))
}

/// Runs a measure twice and correlates the per-concept results.
///
/// `run` receives the repetition index (0 then 1) and returns a score per
/// concept id; both runs must cover the same concepts.
pub fn test_retest<F>(mut run: F) -> Result<f64>
where
    F: FnMut(u32) -> Result<BTreeMap<String, f64>>,
{
    let first = run(0)?;
    let second = run(1)?;
    if first.len() < 2 {
        return Err(Error::Precondition(format!("test-retest needs at least 2 concepts, got {}", first.len())));
    }
    if first.keys().ne(second.keys()) {
        return Err(Error::Precondition("the two runs scored different concepts".into()));
    }
    let a: Vec<f64> = first.into_values().collect();
    let b: Vec<f64> = second.into_values().collect();
    pearson(&a, &b)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RaterAgreement {
    pub rater_a: String,
    pub rater_b: String,
    pub n_concepts: usize,
    /// `None` when the pair shares fewer than 2 concepts.
    pub kendall_tau: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InterRater {
    pub pairs: Vec<RaterAgreement>,
    /// Unweighted mean of the defined pairwise values.
    pub mean_pairwise_tau: Option<f64>,
}

/// Pairwise Kendall tau between raters over the concepts both rated.
///
/// `ratings` maps rater id to concept id to score.
pub fn inter_rater(ratings: &BTreeMap<String, BTreeMap<String, f64>>) -> Result<InterRater> {
    if ratings.len() < 2 {
        return Err(Error::Precondition(format!("inter-rater agreement needs at least 2 raters, got {}", ratings.len())));
    }
    let raters: Vec<(&String, &BTreeMap<String, f64>)> = ratings.iter().collect();
    let mut pairs = Vec::new();
    for (i, (ra, a)) in raters.iter().enumerate() {
        for (rb, b) in &raters[i + 1..] {
            let (xs, ys): (Vec<f64>, Vec<f64>) = a.iter().filter_map(|(c, &s)| b.get(c).map(|&t| (s, t))).unzip();
            let tau = if xs.len() >= 2 { Some(kendall_tau(&xs, &ys)?) } else { None };
            pairs.push(RaterAgreement {
                rater_a: (*ra).clone(),
                rater_b: (*rb).clone(),
                n_concepts: xs.len(),
                kendall_tau: tau,
            });
        }
    }
    let defined: Vec<f64> = pairs.iter().filter_map(|p| p.kendall_tau).collect();
    let mean_pairwise_tau = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
    Ok(InterRater { pairs, mean_pairwise_tau })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn identical_subsets() {
        let s = vec![1.0, 4.0, 2.0, 8.0];
        assert_eq!(cronbach_alpha(&[s.clone(), s.clone(), s]).unwrap(), 1.0);
    }

    #[test]
    fn hand_value() {
        // items (1,2,3), (1,3,2): total (2,5,5), var 2; item vars 2/3 each
        let a = cronbach_alpha(&[vec![1.0, 2.0, 3.0], vec![1.0, 3.0, 2.0]]).unwrap();
        assert!((a - 2.0 * (2.0 - 4.0 / 3.0) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn preconditions() {
        assert!(matches!(cronbach_alpha(&[vec![1.0, 2.0]]), Err(Error::Precondition(_))));
        assert!(matches!(cronbach_alpha(&[vec![1.0, 1.0], vec![2.0, 2.0]]), Err(Error::Undefined(_))));
        assert!(cronbach_alpha(&[vec![1.0, 2.0], vec![1.0]]).is_err());
    }

    #[test]
    fn independent_noise_is_near_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let subsets: Vec<Vec<f64>> = (0..10).map(|_| (0..1000).map(|_| StandardNormal.sample(&mut rng)).collect()).collect();
        assert!(cronbach_alpha(&subsets).unwrap().abs() <= 0.15);
    }

    #[test]
    fn retest_of_deterministic_run() {
        let scores: BTreeMap<String, f64> = [("a", 0.3), ("b", -1.2), ("c", 5.0)].into_iter().map(|(k, v)| (k.to_string(), v)).collect();
        assert_eq!(test_retest(|_| Ok(scores.clone())).unwrap(), 1.0);
        let one: BTreeMap<String, f64> = [("a".to_string(), 1.0)].into_iter().collect();
        assert!(matches!(test_retest(|_| Ok(one.clone())), Err(Error::Precondition(_))));
    }

    #[test]
    fn retest_recovers_true_score_fraction() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (var_t, var_e) = (1.0f64, 0.5f64);
        let truth: Vec<f64> = (0..500).map(|_| var_t.sqrt() * { let z: f64 = StandardNormal.sample(&mut rng); z }).collect();
        let r = test_retest(|rep| {
            let mut noise = ChaCha8Rng::seed_from_u64(1000 + u64::from(rep));
            Ok(truth
                .iter()
                .enumerate()
                .map(|(i, t)| (format!("c{i:03}"), t + var_e.sqrt() * { let z: f64 = StandardNormal.sample(&mut noise); z }))
                .collect())
        })
        .unwrap();
        assert!((r - var_t / (var_t + var_e)).abs() <= 0.05, "{r}");
    }

    #[test]
    fn inter_rater_pairs_and_mean() {
        let mk = |v: &[(&str, f64)]| v.iter().map(|(k, s)| (k.to_string(), *s)).collect::<BTreeMap<_, _>>();
        let ratings: BTreeMap<String, BTreeMap<String, f64>> = [
            ("r1".to_string(), mk(&[("a", 1.0), ("b", 2.0), ("c", 3.0)])),
            ("r2".to_string(), mk(&[("a", 1.0), ("b", 3.0), ("c", 2.0)])),
            ("r3".to_string(), mk(&[("a", 5.0)])),
        ]
        .into_iter()
        .collect();
        let ir = inter_rater(&ratings).unwrap();
        assert_eq!(ir.pairs.len(), 3);
        assert_eq!(ir.pairs[0].kendall_tau, Some(1.0 / 3.0));
        assert_eq!(ir.pairs[1].kendall_tau, None);
        assert_eq!(ir.mean_pairwise_tau, Some(1.0 / 3.0));
    }

    proptest! {
        #[test]
        fn alpha_bounded_and_shift_invariant(
            subsets in (2usize..5, 3usize..12).prop_flat_map(|(j, n)| proptest::collection::vec(proptest::collection::vec(-10.0..10.0f64, n), j)),
            shift in -100.0..100.0f64,
        ) {
            if let Ok(a) = cronbach_alpha(&subsets) {
                prop_assert!(a <= 1.0 + 1e-12);
                let shifted: Vec<Vec<f64>> = subsets.iter().map(|s| s.iter().map(|v| v + shift).collect()).collect();
                let b = cronbach_alpha(&shifted).unwrap();
                prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()), "{} vs {}", a, b);
            }
        }
    }
}
