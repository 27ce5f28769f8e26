//! Monte-Carlo verification of the CKL lower-bound chain.
//!
//! The chain is
//!
//! ```text
//! L_CKL >= KL + sum_{D-} p (1 - q^(gamma-beta)) ln q + (gamma / log e) sum_{D+} q log q      (b)
//!       >= sum_{D-} p (-1 + ln p) - 2 gamma / e                                              (f)
//! ```
//!
//! with the intermediate steps
//!
//! * (a) `(1 - q)^gamma >= 1 - gamma q` for `q in [0, 1]`, `gamma >= 1`;
//! * (c) `sum_{D+} p ln(p/q) >= -sum_{D-} p`;
//! * (d) `(1/s) sum_{D+} q log q >= (P/s) log(P/s)` with `P = sum_{D+} q`;
//! * (e) `-sum_{D-} p q^(gamma-beta) ln q >= 0`.
//!
//! `log` is base 2 and `ln` natural; `gamma / log e` converts between them.
//! Step (f) relies on `min_u u log(u/s) = -2 log e / e`, which only holds for
//! `s <= 2` (see [`jensen_min`]); larger `s` is evaluated and logged but not
//! counted as a violation.

use std::f64::consts::{E, LOG2_E};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CklError, Result};
use crate::losses::{ckl_loss, clamp, kl_term};
use crate::params::CklHyperparams;
use crate::prob::TopOneDistribution;

/// Absolute slack tolerated before an inequality counts as violated.
pub const VIOLATION_TOLERANCE: f64 = 1e-9;

/// Largest `|D+|` for which the constant bound is asserted.
pub const CONSTANT_BOUND_MAX_POSITIVES: usize = 2;

/// Upper end of the sampled `|D-|`.
pub const MAX_SAMPLED_NEGATIVES: usize = 8;

pub const CHECK_NAMES: [&str; 6] = [
    "a_bernoulli",
    "b_eq_cklbound",
    "c_positive_kl",
    "d_jensen",
    "e_third_component",
    "f_constant_bound",
];

/// RHS of the first inequality of the chain, with the student clamped as in
/// [`ckl_loss`].
pub fn eq_cklbound_rhs(
    teacher: &TopOneDistribution,
    student: &TopOneDistribution,
    betas: &[f64],
    hp: &CklHyperparams,
) -> Result<f64> {
    teacher.check_aligned(student)?;
    if betas.len() != student.num_negatives() {
        return Err(CklError::Misaligned {
            expected: student.num_negatives(),
            got: betas.len(),
        });
    }
    let eps = hp.prob_clamp_epsilon;
    let q: Vec<f64> = student
        .probs()
        .iter()
        .map(|&x| clamp(x, eps, 1.0 - eps))
        .collect();
    let p = teacher.probs();
    let s = teacher.num_positives();

    let kl: f64 = p.iter().zip(&q).map(|(&pi, &qi)| kl_term(pi, qi)).sum();
    let negative_part: f64 = (s..p.len())
        .map(|i| p[i] * (1.0 - q[i].powf(hp.gamma - betas[i - s])) * q[i].ln())
        .sum();
    let entropy_part: f64 = q[..s].iter().map(|&qj| qj * qj.log2()).sum();
    Ok(kl + negative_part + hp.gamma / LOG2_E * entropy_part)
}

/// `sum_{D-} p (-1 + ln p) - 2 gamma / e`; independent of the student.
pub fn constant_lower_bound(teacher_negatives: &[f64], gamma: f64) -> f64 {
    let sum: f64 = teacher_negatives
        .iter()
        .map(|&p| if p > 0.0 { p * (-1.0 + p.ln()) } else { 0.0 })
        .sum();
    sum - 2.0 * gamma / E
}

/// Exact minimum of `u log2(u / s)` over `u in [0, 1]`.
///
/// The interior minimum `u = s/e` is feasible only for `s <= e`, giving
/// `-(s/e) log e`; otherwise the minimum sits at `u = 1` and equals `-log s`.
pub fn jensen_min(s: f64) -> f64 {
    if s <= E {
        -(s / E) * LOG2_E
    } else {
        -s.log2()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InequalityCheck {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

impl InequalityCheck {
    fn new(name: &str, lhs: f64, rhs: f64) -> Self {
        Self {
            name: name.to_string(),
            lhs,
            rhs,
            holds: lhs >= rhs - VIOLATION_TOLERANCE,
        }
    }

    pub fn slack(&self) -> f64 {
        self.lhs - self.rhs
    }
}

/// Every quantity of the chain for one `(p, q, beta, gamma)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainEvaluation {
    pub num_positives: usize,
    pub num_negatives: usize,
    pub gamma: f64,
    pub ckl_value: f64,
    pub rhs_eq_cklbound: f64,
    pub constant_bound: f64,
    pub checks: Vec<InequalityCheck>,
}

impl ChainEvaluation {
    /// Whether the checks that are asserted for this `s` all hold.
    pub fn asserted_hold(&self) -> bool {
        self.checks
            .iter()
            .enumerate()
            .all(|(i, c)| c.holds || (i == 5 && !self.constant_bound_asserted()))
    }

    pub fn constant_bound_asserted(&self) -> bool {
        self.num_positives <= CONSTANT_BOUND_MAX_POSITIVES
    }
}

/// Evaluate inequalities (a)-(f) for one configuration.
pub fn evaluate_chain(
    teacher: &TopOneDistribution,
    student: &TopOneDistribution,
    betas: &[f64],
    hp: &CklHyperparams,
) -> Result<ChainEvaluation> {
    let ckl_value = ckl_loss(teacher, student, betas, hp)?;
    let rhs = eq_cklbound_rhs(teacher, student, betas, hp)?;
    let gamma = hp.gamma;
    let eps = hp.prob_clamp_epsilon;
    let p = teacher.probs();
    let q: Vec<f64> = student
        .probs()
        .iter()
        .map(|&x| clamp(x, eps, 1.0 - eps))
        .collect();
    let s = teacher.num_positives();
    let n = p.len();

    // (a) tightest document.
    let bernoulli = q
        .iter()
        .map(|&x| InequalityCheck::new(CHECK_NAMES[0], (1.0 - x).powf(gamma), 1.0 - gamma * x))
        .min_by(|x, y| x.slack().total_cmp(&y.slack()))
        .expect("non-empty");

    let pos_kl: f64 = (0..s).map(|j| kl_term(p[j], q[j])).sum();
    let neg_mass: f64 = p[s..].iter().sum();

    let sf = s as f64;
    let pos_mass: f64 = q[..s].iter().sum();
    let mean_qlogq = q[..s].iter().map(|&x| x * x.log2()).sum::<f64>() / sf;
    let jensen_rhs = (pos_mass / sf) * (pos_mass / sf).log2();

    let third: f64 = (s..n)
        .map(|i| -p[i] * q[i].powf(gamma - betas[i - s]) * q[i].ln())
        .sum();

    let constant_bound = constant_lower_bound(teacher.negatives(), gamma);

    Ok(ChainEvaluation {
        num_positives: s,
        num_negatives: n - s,
        gamma,
        ckl_value,
        rhs_eq_cklbound: rhs,
        constant_bound,
        checks: vec![
            bernoulli,
            InequalityCheck::new(CHECK_NAMES[1], ckl_value, rhs),
            InequalityCheck::new(CHECK_NAMES[2], pos_kl, -neg_mass),
            InequalityCheck::new(CHECK_NAMES[3], mean_qlogq, jensen_rhs),
            InequalityCheck::new(CHECK_NAMES[4], third, 0.0),
            InequalityCheck::new(CHECK_NAMES[5], ckl_value, constant_bound),
        ],
    })
}

/// Aggregate over all samples for one inequality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckSummary {
    pub name: String,
    /// Samples on which the inequality was asserted.
    pub asserted: usize,
    pub violations: usize,
    /// Failures on samples where the inequality is only logged.
    pub logged_failures: usize,
    /// Smallest `lhs - rhs` seen on asserted samples.
    pub min_slack: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub seed: u64,
    pub s_max: usize,
    pub samples_tested: usize,
    /// Samples where any asserted inequality fails by more than the tolerance.
    pub violations: usize,
    pub tolerance: f64,
    /// Values of the sample closest to violating an asserted inequality.
    pub ckl_value: f64,
    pub rhs_eq_cklbound: f64,
    pub constant_bound: f64,
    pub intermediate_checks: Vec<InequalityCheck>,
    pub checks: Vec<CheckSummary>,
}

fn sample_simplex(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(Exp1)).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / total).collect()
}

/// One random draw: Dirichlet(1) teacher and student, `gamma in [1, 7]`,
/// `alpha in [0, gamma - 1]`, biases from a random rank permutation.
pub fn random_configuration(
    rng: &mut ChaCha8Rng,
    s_max: usize,
) -> (
    TopOneDistribution,
    TopOneDistribution,
    Vec<f64>,
    CklHyperparams,
) {
    let s = rng.random_range(1..=s_max.max(1));
    let m = rng.random_range(1..=MAX_SAMPLED_NEGATIVES);
    let n = s + m;
    let p = sample_simplex(rng, n);
    let q = sample_simplex(rng, n);
    let gamma = rng.random_range(1.0..=7.0);
    let alpha = rng.random_range(0.0..=(gamma - 1.0));
    let mut ranks: Vec<usize> = (1..=n).collect();
    ranks.shuffle(rng);
    let recip = ranks[..s].iter().map(|&r| 1.0 / r as f64).sum::<f64>() / s as f64;
    let betas = ranks[s..]
        .iter()
        .map(|&r| alpha * (1.0 / r as f64 - recip))
        .collect();
    let hp = CklHyperparams {
        gamma,
        alpha,
        ..CklHyperparams::default()
    };
    let teacher = TopOneDistribution::from_probs(p, s).expect("dirichlet sample");
    let student = TopOneDistribution::from_probs(q, s).expect("dirichlet sample");
    (teacher, student, betas, hp)
}

fn sample_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Sample `samples` random configurations with `|D+| <= s_max` and count
/// violations of the chain.
pub fn verify_bound_chain(samples: usize, s_max: usize, seed: u64) -> Result<BoundReport> {
    if samples == 0 {
        return Err(CklError::InvalidConfig("sample count must be >= 1".into()));
    }
    if s_max == 0 {
        return Err(CklError::InvalidConfig("s_max must be >= 1".into()));
    }
    let evals: Vec<ChainEvaluation> = (0..samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = sample_rng(seed, i);
            let (p, q, betas, hp) = random_configuration(&mut rng, s_max);
            evaluate_chain(&p, &q, &betas, &hp)
        })
        .collect::<Result<_>>()?;

    let mut checks: Vec<CheckSummary> = CHECK_NAMES
        .iter()
        .map(|n| CheckSummary {
            name: n.to_string(),
            asserted: 0,
            violations: 0,
            logged_failures: 0,
            min_slack: f64::INFINITY,
        })
        .collect();
    let mut violations = 0;
    let mut tightest: Option<(f64, usize)> = None;
    for (idx, ev) in evals.iter().enumerate() {
        for (k, c) in ev.checks.iter().enumerate() {
            let asserted = k != 5 || ev.constant_bound_asserted();
            let summary = &mut checks[k];
            if asserted {
                summary.asserted += 1;
                summary.min_slack = summary.min_slack.min(c.slack());
                if !c.holds {
                    summary.violations += 1;
                }
            } else if !c.holds {
                summary.logged_failures += 1;
            }
        }
        if !ev.asserted_hold() {
            violations += 1;
        }
        let slack = ev
            .checks
            .iter()
            .enumerate()
            .filter(|(k, _)| *k != 5 || ev.constant_bound_asserted())
            .map(|(_, c)| c.slack())
            .fold(f64::INFINITY, f64::min);
        if tightest.is_none_or(|(t, _)| slack < t) {
            tightest = Some((slack, idx));
        }
    }
    let worst = &evals[tightest.expect("samples >= 1").1];
    Ok(BoundReport {
        seed,
        s_max,
        samples_tested: samples,
        violations,
        tolerance: VIOLATION_TOLERANCE,
        ckl_value: worst.ckl_value,
        rhs_eq_cklbound: worst.rhs_eq_cklbound,
        constant_bound: worst.constant_bound,
        intermediate_checks: worst.checks.clone(),
        checks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn d(p: &[f64], s: usize) -> TopOneDistribution {
        TopOneDistribution::from_probs(p.to_vec(), s).unwrap()
    }

    #[test]
    fn rhs_golden_value() {
        let p = d(&[0.7, 0.3], 1);
        let q = d(&[0.5, 0.5], 1);
        let hp = CklHyperparams::new(5.0, 1.0).unwrap();
        let rhs = eq_cklbound_rhs(&p, &q, &[0.0], &hp).unwrap();
        // KL + 0.3 (1 - 0.5^5) ln 0.5 + 5 * 0.5 ln 0.5, all by hand.
        let kl = 0.7 * 1.4f64.ln() + 0.3 * 0.6f64.ln();
        let expected = kl + 0.3 * (1.0 - 0.03125) * 0.5f64.ln() + 5.0 * 0.5 * 0.5f64.ln();
        assert_abs_diff_eq!(rhs, expected, epsilon = 1e-12);
        assert_abs_diff_eq!(rhs, -1.852031, epsilon = 1e-6);
    }

    #[test]
    fn rhs_sign_structure_at_p_equals_q() {
        let q = d(&[0.4, 0.1, 0.3, 0.2], 2);
        let hp = CklHyperparams::new(3.0, 1.0).unwrap();
        let rhs = eq_cklbound_rhs(&q, &q, &[0.2, -0.4], &hp).unwrap();
        assert!(rhs <= 0.0);
        let ev = evaluate_chain(&q, &q, &[0.2, -0.4], &hp).unwrap();
        assert_eq!(ev.ckl_value, 0.0);
        assert!(ev.asserted_hold());
    }

    #[test]
    fn rhs_finite_at_clamped_zero_negative() {
        let p = d(&[0.5, 0.5], 1);
        let q = d(&[1.0, 0.0], 1);
        let hp = CklHyperparams::new(1.0, 0.0).unwrap();
        let rhs = eq_cklbound_rhs(&p, &q, &[0.0], &hp).unwrap();
        // With q_neg = eps, p (1 - eps) ln eps dominates; the clamp keeps it finite.
        assert!(rhs.is_finite());
        let neg_part = 0.5 * (1.0 - 1e-12) * (1e-12f64).ln();
        let kl = 0.5 * (0.5f64 / (1.0 - 1e-12)).ln() + 0.5 * (0.5f64 / 1e-12).ln();
        let ent = (1.0 - 1e-12) * (1.0 - 1e-12f64).ln();
        assert_abs_diff_eq!(rhs, kl + neg_part + ent, epsilon = 1e-9);
        // Separately the negative part diverges like p ln eps; it cancels the
        // matching KL term, leaving p ln p for that document.
        assert_abs_diff_eq!(rhs, 0.5 * 0.5f64.ln() + 0.5 * 0.5f64.ln(), epsilon = 1e-9);
    }

    #[test]
    fn constant_bound_values() {
        assert_abs_diff_eq!(
            constant_lower_bound(&[0.3], 5.0),
            0.3 * (-1.0 + 0.3f64.ln()) - 10.0 / E,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(constant_lower_bound(&[0.3], 5.0), -4.33998, epsilon = 1e-5);
        assert_abs_diff_eq!(constant_lower_bound(&[], 5.0), -10.0 / E, epsilon = 1e-15);
        assert_abs_diff_eq!(constant_lower_bound(&[0.0], 1.0), -0.73576, epsilon = 1e-5);
    }

    #[test]
    fn jensen_min_values() {
        assert_abs_diff_eq!(jensen_min(1.0), -LOG2_E / E, epsilon = 1e-15);
        assert_abs_diff_eq!(jensen_min(1.0), -0.53074, epsilon = 1e-5);
        assert_abs_diff_eq!(jensen_min(2.0), -2.0 * LOG2_E / E, epsilon = 1e-12);
        assert_abs_diff_eq!(jensen_min(2.0), -1.06147, epsilon = 1e-5);
        assert_eq!(jensen_min(4.0), -2.0);
        assert!(jensen_min(4.0) < -2.0 * LOG2_E / E);
    }

    #[test]
    fn jensen_min_matches_grid_search() {
        for s in [1.0, 1.5, 2.0, 2.5, 3.0, 4.0, 8.0] {
            let grid_min = (0..=200_000)
                .map(|i| i as f64 / 200_000.0)
                .filter(|&u| u > 0.0)
                .map(|u| u * (u / s).log2())
                .fold(f64::INFINITY, f64::min);
            assert_abs_diff_eq!(jensen_min(s), grid_min, epsilon = 1e-9);
        }
    }

    #[test]
    fn constant_bound_ignores_student() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = [0.1, 0.25, 0.05];
        let reference = constant_lower_bound(&p, 4.0);
        for _ in 0..100 {
            let (_, q, _, _) = random_configuration(&mut rng, 2);
            assert!(!q.is_empty());
            assert!((constant_lower_bound(&p, 4.0) - reference).abs() <= 1e-12);
        }
    }

    #[test]
    fn concentrated_positive_probe() {
        // q piles onto one positive; Jensen is loose, everything still holds.
        let p = d(&[0.45, 0.45, 0.1], 2);
        let q = d(&[1.0 - 2e-9, 1e-9, 1e-9], 2);
        let hp = CklHyperparams::new(5.0, 1.0).unwrap();
        let ev = evaluate_chain(&p, &q, &[0.0], &hp).unwrap();
        assert!(ev.asserted_hold(), "{ev:#?}");
    }

    #[test]
    fn positive_kl_bound_tight_when_q_matches_p_on_positives() {
        // Teacher mass almost all on positives, student equal there.
        let p = d(&[0.6, 0.4 - 1e-9, 1e-9], 2);
        let q = d(&[0.6, 0.4 - 1e-9, 1e-9], 2);
        let hp = CklHyperparams::new(2.0, 0.5).unwrap();
        let ev = evaluate_chain(&p, &q, &[0.0], &hp).unwrap();
        let c = &ev.checks[2];
        assert!(
            c.slack() >= -VIOLATION_TOLERANCE && c.slack() < 1e-8,
            "{c:?}"
        );
    }

    #[test]
    fn small_run_is_clean_and_deterministic() {
        let a = verify_bound_chain(5_000, 2, 7).unwrap();
        assert_eq!(a.violations, 0, "{a:#?}");
        assert!(a.checks.iter().all(|c| c.violations == 0));
        assert_eq!(a.checks[5].asserted, 5_000);
        let b = verify_bound_chain(5_000, 2, 7).unwrap();
        assert_eq!(a, b);
        assert!(verify_bound_chain(0, 2, 7).is_err());
    }

    #[test]
    fn larger_positive_sets_only_log_constant_bound() {
        let r = verify_bound_chain(5_000, 6, 3).unwrap();
        assert_eq!(r.violations, 0);
        for c in &r.checks[..5] {
            assert_eq!(c.asserted, 5_000);
        }
        assert!(r.checks[5].asserted < 5_000);
    }
}
