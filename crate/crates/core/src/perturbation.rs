//! Concept perturbations of a single hidden vector.
//!
//! *Ablation* moves `h` to the L2-nearest point where the concept activation
//! is zero. *ε-addition* moves `h` a distance `ε` in the direction that
//! raises the activation fastest. Both have closed forms for the supported
//! concept kinds (Lagrange stationarity gives `h' = h - λ/2·v` with
//! `λ = 2(v·h + b)/(v·v)`); [`ablate_numeric`] solves the same constrained
//! problem for any differentiable activation.

use crate::concept::{Concept, ConceptKind};
use crate::linalg;
use crate::{Error, Result};

/// How a hidden state is perturbed when measuring faithfulness.
#[derive(Debug, Clone, PartialEq)]
pub enum PerturbationOp {
    /// Minimal-norm move onto `a(h') = 0`.
    Ablate { solver: Solver },
    /// Limit `ε → 0` of `h + ε·d`, evaluated by central differences with
    /// step `relative_step · (1 + ‖h‖)`.
    EpsilonAdd { relative_step: f64 },
}

impl PerturbationOp {
    pub fn validate(&self) -> Result<()> {
        match self {
            PerturbationOp::EpsilonAdd { relative_step } if !(*relative_step > 0.0 && relative_step.is_finite()) => {
                Err(Error::Config(format!("epsilon step must be positive, got {relative_step}")))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Solver {
    ClosedForm,
    Numeric(PenaltyConfig),
}

/// A scalar function of a hidden vector with a (sub)gradient.
pub trait DifferentiableActivation {
    fn value(&self, h: &[f64]) -> Result<f64>;
    fn gradient(&self, h: &[f64]) -> Result<Vec<f64>>;
}

impl DifferentiableActivation for Concept {
    fn value(&self, h: &[f64]) -> Result<f64> {
        self.activate(h)
    }

    fn gradient(&self, h: &[f64]) -> Result<Vec<f64>> {
        let z = self.pre_activation(h)?;
        let d = self.direction(h.len())?;
        Ok(match self.kind() {
            ConceptKind::ReluLinear { .. } if z <= 0.0 => vec![0.0; h.len()],
            _ => d,
        })
    }
}

fn direction_checked(concept: &Concept, m: usize) -> Result<(Vec<f64>, f64)> {
    let d = concept.direction(m)?;
    let nsq = linalg::norm_sq(&d);
    if nsq == 0.0 {
        return Err(Error::ZeroNorm);
    }
    Ok((d, nsq))
}

/// Closed-form ablation.
///
/// Linear: `h - (v·h + b)/(v·v) · v`. ReLU-linear: unchanged when
/// `v·h + b ≤ 0`, otherwise the same projection. Neuron: coordinate `i` zeroed.
pub fn ablate(concept: &Concept, h: &[f64]) -> Result<Vec<f64>> {
    let z = concept.pre_activation(h)?;
    if let ConceptKind::OneHot { neuron_index } = concept.kind() {
        let mut out = h.to_vec();
        out[*neuron_index] = 0.0;
        return Ok(out);
    }
    let (v, nsq) = direction_checked(concept, h.len())?;
    if z == 0.0 || (matches!(concept.kind(), ConceptKind::ReluLinear { .. }) && z <= 0.0) {
        return Ok(h.to_vec());
    }
    Ok(linalg::axpy(h, -z / nsq, &v))
}

/// Unit direction maximising the activation gain of a fixed-length step.
pub fn addition_direction(concept: &Concept, m: usize) -> Result<Vec<f64>> {
    let (v, nsq) = direction_checked(concept, m)?;
    Ok(linalg::scale(&v, 1.0 / nsq.sqrt()))
}

/// The ε-addition point `h + ε·v/‖v‖`.
pub fn epsilon_add(concept: &Concept, h: &[f64], epsilon: f64) -> Result<Vec<f64>> {
    if epsilon.is_nan() || epsilon <= 0.0 {
        return Err(Error::Precondition(format!("epsilon must be positive, got {epsilon}")));
    }
    concept.pre_activation(h)?;
    let d = addition_direction(concept, h.len())?;
    Ok(linalg::axpy(h, epsilon, &d))
}

/// Quadratic-penalty settings: minimise `‖h' − h‖² + ρ·a(h')²` for a
/// geometric sequence of `ρ`, each stage by gradient descent with
/// backtracking line search.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyConfig {
    pub initial_penalty: f64,
    pub penalty_growth: f64,
    pub max_outer_iterations: usize,
    pub max_inner_iterations: usize,
    pub initial_step: f64,
    /// Accept once `|a(h')| ≤ tolerance`.
    pub tolerance: f64,
    /// Inner stage stops when the gradient norm falls below this fraction
    /// of its starting value.
    pub inner_relative_tolerance: f64,
}

impl Default for PenaltyConfig {
    fn default() -> Self {
        Self {
            initial_penalty: 1.0,
            penalty_growth: 10.0,
            max_outer_iterations: 40,
            max_inner_iterations: 500,
            initial_step: 0.5,
            tolerance: 1e-12,
            inner_relative_tolerance: 1e-12,
        }
    }
}

/// Numeric ablation for any [`DifferentiableActivation`].
pub fn ablate_numeric<A>(activation: &A, h: &[f64], config: &PenaltyConfig) -> Result<Vec<f64>>
where
    A: DifferentiableActivation + ?Sized,
{
    let mut x = h.to_vec();
    let mut violation = activation.value(&x)?.abs();
    if violation <= config.tolerance {
        return Ok(x);
    }
    let mut rho = config.initial_penalty;
    let mut iterations = 0;
    for _ in 0..config.max_outer_iterations {
        let objective = |p: &[f64]| -> Result<f64> {
            let a = activation.value(p)?;
            Ok(linalg::norm_sq(&linalg::axpy(p, -1.0, h)) + rho * a * a)
        };
        let mut f = objective(&x)?;
        let mut g0 = None;
        for _ in 0..config.max_inner_iterations {
            iterations += 1;
            let a = activation.value(&x)?;
            let ga = activation.gradient(&x)?;
            // ∇ = 2(x − h) + 2ρ·a·∇a
            let grad: Vec<f64> = x
                .iter()
                .zip(h)
                .zip(&ga)
                .map(|((xi, hi), gi)| 2.0 * (xi - hi) + 2.0 * rho * a * gi)
                .collect();
            let gsq = linalg::norm_sq(&grad);
            let g0 = *g0.get_or_insert(gsq.sqrt());
            if gsq.sqrt() <= config.inner_relative_tolerance * g0 || gsq == 0.0 {
                break;
            }
            // Armijo backtracking from a step scaled to the current curvature bound.
            let mut step = config.initial_step / (1.0 + rho * linalg::norm_sq(&ga));
            let mut accepted = false;
            for _ in 0..60 {
                let candidate = linalg::axpy(&x, -step, &grad);
                let fc = objective(&candidate)?;
                if fc <= f - 1e-4 * step * gsq {
                    x = candidate;
                    f = fc;
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        violation = activation.value(&x)?.abs();
        if violation <= config.tolerance {
            return Ok(x);
        }
        rho *= config.penalty_growth;
    }
    Err(Error::SolverDidNotConverge { iterations, violation })
}

/// Ablation with the requested solver.
pub fn ablate_with(concept: &Concept, h: &[f64], solver: &Solver) -> Result<Vec<f64>> {
    match solver {
        Solver::ClosedForm => ablate(concept, h),
        Solver::Numeric(cfg) => ablate_numeric(concept, h, cfg),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn gaussian(rng: &mut ChaCha8Rng, m: usize) -> Vec<f64> {
        (0..m).map(|_| rng.sample(StandardNormal)).collect()
    }

    #[test]
    fn ablate_linear_example_is_minimal_on_a_grid() {
        let c = Concept::linear("x", vec![1.0, 0.0], 0.0).unwrap();
        let out = ablate(&c, &[3.0, 4.0]).unwrap();
        assert_eq!(out, vec![0.0, 4.0]);
        // feasible set is the line x = 0; scan it densely
        let best = (-4000..=4000)
            .map(|i| linalg::l2_distance(&[0.0, i as f64 * 0.005], &[3.0, 4.0]))
            .fold(f64::INFINITY, f64::min);
        assert!((linalg::l2_distance(&out, &[3.0, 4.0]) - 3.0).abs() < 1e-15);
        assert!(best >= 3.0 - 1e-12);
    }

    #[test]
    fn ablate_inactive_relu_is_identity() {
        let c = Concept::relu_linear("r", vec![1.0, 0.0], -5.0).unwrap();
        assert_eq!(ablate(&c, &[1.0, 0.0]).unwrap(), vec![1.0, 0.0]);
        // kink counts as inactive
        let c = Concept::relu_linear("r", vec![1.0, 0.0], -1.0).unwrap();
        assert_eq!(ablate(&c, &[1.0, 2.0]).unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn ablate_on_constraint_set_is_identity() {
        let c = Concept::linear("x", vec![1.0, 1.0], -3.0).unwrap();
        assert_eq!(ablate(&c, &[1.0, 2.0]).unwrap(), vec![1.0, 2.0]);
        let n = Concept::one_hot("n", 1).unwrap();
        assert_eq!(ablate(&n, &[1.0, 0.0]).unwrap(), vec![1.0, 0.0]);
        assert_eq!(ablate(&n, &[1.0, 7.0, 2.0]).unwrap(), vec![1.0, 0.0, 2.0]);
    }

    #[test]
    fn bias_is_part_of_the_projection() {
        let c = Concept::linear("b", vec![0.0, 2.0], 1.0).unwrap();
        let out = ablate(&c, &[5.0, 3.0]).unwrap();
        assert_eq!(out, vec![5.0, -0.5]);
        assert_eq!(c.activate(&out).unwrap(), 0.0);
    }

    #[test]
    fn addition_direction_examples() {
        let c = Concept::linear("x", vec![3.0, 4.0], 0.0).unwrap();
        let d = addition_direction(&c, 2).unwrap();
        assert!((d[0] - 0.6).abs() < 1e-15 && (d[1] - 0.8).abs() < 1e-15);
        // 10^4 points on the unit sphere: none beats the closed form
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = [0.3, -0.7];
        let best = c.activate(&linalg::axpy(&h, 0.1, &d)).unwrap();
        for _ in 0..10_000 {
            let theta: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let p = [h[0] + 0.1 * theta.cos(), h[1] + 0.1 * theta.sin()];
            assert!(c.activate(&p).unwrap() <= best + 1e-15);
        }
        let n = Concept::one_hot("n", 1).unwrap();
        assert_eq!(addition_direction(&n, 3).unwrap(), vec![0.0, 1.0, 0.0]);
        assert!(addition_direction(&n, 1).is_err());
        assert!(epsilon_add(&c, &h, 0.0).is_err());
        assert_eq!(epsilon_add(&n, &[1.0, 1.0, 1.0], 0.5).unwrap(), vec![1.0, 1.5, 1.0]);
    }

    #[test]
    fn numeric_matches_closed_form() {
        let c = Concept::linear("x", vec![1.0, 0.0], 0.0).unwrap();
        let num = ablate_numeric(&c, &[3.0, 4.0], &PenaltyConfig::default()).unwrap();
        assert!(linalg::l2_distance(&num, &[0.0, 4.0]) <= 1e-6);

        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..100 {
            let v = gaussian(&mut rng, 8);
            let h = gaussian(&mut rng, 8);
            let z = linalg::dot(&v, &h);
            // bias chosen so the unit is active
            let c = Concept::relu_linear("r", v, 0.5 - z.min(0.0) * 2.0).unwrap();
            assert!(c.activate(&h).unwrap() > 0.0);
            let closed = ablate(&c, &h).unwrap();
            let num = ablate_numeric(&c, &h, &PenaltyConfig::default()).unwrap();
            assert!(linalg::l2_distance(&closed, &num) <= 1e-6);
        }
    }

    #[test]
    fn numeric_reports_non_convergence() {
        let c = Concept::linear("x", vec![1.0, 0.0], 0.0).unwrap();
        let cfg = PenaltyConfig { max_outer_iterations: 1, ..PenaltyConfig::default() };
        match ablate_numeric(&c, &[3.0, 4.0], &cfg) {
            Err(Error::SolverDidNotConverge { violation, .. }) => assert!(violation > cfg.tolerance),
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    /// Smooth non-linear activation `tanh(v·h) − c`; its zero set is the
    /// hyperplane `v·h = atanh(c)`, so the exact ablation is known.
    struct TanhUnit {
        v: Vec<f64>,
        c: f64,
    }

    impl DifferentiableActivation for TanhUnit {
        fn value(&self, h: &[f64]) -> Result<f64> {
            Ok(linalg::dot(&self.v, h).tanh() - self.c)
        }
        fn gradient(&self, h: &[f64]) -> Result<Vec<f64>> {
            let t = linalg::dot(&self.v, h).tanh();
            Ok(linalg::scale(&self.v, 1.0 - t * t))
        }
    }

    #[test]
    fn numeric_handles_nonlinear_activation() {
        let unit = TanhUnit { v: vec![0.6, 0.8, 0.0], c: 0.2 };
        let h = [1.0, 1.0, 3.0];
        let out = ablate_numeric(&unit, &h, &PenaltyConfig { tolerance: 1e-10, ..PenaltyConfig::default() }).unwrap();
        let target = 0.2f64.atanh();
        let expected = linalg::axpy(&h, target - linalg::dot(&unit.v, &h), &unit.v);
        assert!(linalg::l2_distance(&out, &expected) < 1e-6, "{out:?} vs {expected:?}");
    }

    #[test]
    fn zero_norm_direction() {
        assert!(matches!(Concept::linear("z", vec![0.0, 0.0], 0.0), Err(Error::ZeroNorm)));
        let n = Concept::one_hot("n", 4).unwrap();
        assert!(ablate(&n, &[1.0, 2.0]).is_err());
    }
}
