//! Closed-form gradients with respect to student probabilities and scores,
//! the CKL/KL and BKL/KL gradient-contribution ratios, and a central
//! finite-difference oracle.
//!
//! Exponent biases are constants here: they are refreshed between training
//! steps, never differentiated.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::beta::compute_ranks;
use crate::error::{CklError, Result};
use crate::losses::{
    self, check_exponents, clamp, kl_term, loss_on_scores, negative_weight, positive_weight,
    LossConfig, LossKind,
};
use crate::params::{BklParams, CklHyperparams, DEFAULT_PROB_EPSILON};
use crate::precise;
use crate::prob::softmax;

/// Central-difference step.
pub const FD_STEP: f64 = 1e-6;

/// Denominator floor of [`relative_error`]. Below this gradient magnitude
/// errors are measured in absolute terms.
pub const REL_ERROR_FLOOR: f64 = 1e-3;

/// `|a - n| / max(|a|, |n|, REL_ERROR_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// `(f(x + h) - f(x - h)) / 2h`
pub fn central_difference<F: Fn(f64) -> f64>(f: F, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// Central differences of `f` along every coordinate of `x`.
pub fn numeric_gradient<F>(f: F, x: &[f64], h: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let mut work = x.to_vec();
    (0..x.len())
        .map(|i| {
            work[i] = x[i] + h;
            let up = f(&work);
            work[i] = x[i] - h;
            let down = f(&work);
            work[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `d/dq [p ln(p/q)] = -p/q`
pub fn kl_grad_q(p: f64, q: f64) -> f64 {
    if p <= 0.0 {
        0.0
    } else {
        -p / q
    }
}

/// Derivative of one CKL summand with respect to its student probability.
pub fn ckl_grad_q(p: f64, q: f64, is_positive: bool, gamma: f64, beta: f64) -> Result<f64> {
    if p <= 0.0 {
        return Ok(0.0);
    }
    let log_ratio = (p / q).ln();
    if is_positive {
        Ok(
            -gamma * (1.0 - q).powf(gamma - 1.0) * p * log_ratio
                - positive_weight(q, gamma) * p / q,
        )
    } else {
        check_exponents(gamma, &[beta])?;
        let a = gamma - beta;
        Ok(a * q.powf(a - 1.0) * p * log_ratio - negative_weight(q, gamma, beta) * p / q)
    }
}

/// `g_CKL`: CKL's per-document gradient over KL's.
///
/// Positive: `(1-q)^(gamma-1) (gamma q ln(p/q) + 1 - q)`.
/// Negative: `q^(gamma-beta) (1 - (gamma-beta) ln(p/q))`.
pub fn grad_ratio(p: f64, q: f64, is_positive: bool, gamma: f64, beta: f64) -> Result<f64> {
    if p.is_nan() || p <= 0.0 {
        return Err(CklError::RatioUndefined);
    }
    let log_ratio = (p / q).ln();
    if is_positive {
        Ok((1.0 - q).powf(gamma - 1.0) * (gamma * q * log_ratio + 1.0 - q))
    } else {
        check_exponents(gamma, &[beta])?;
        let a = gamma - beta;
        Ok(q.powf(a) * (1.0 - a * log_ratio))
    }
}

/// Derivative of one reconstructed-BKL summand:
/// positive `-p/q + lambda (ln q + 1)`, negative `-p/q + lambda`.
pub fn bkl_grad_q(p: f64, q: f64, is_positive: bool, lambda: f64) -> f64 {
    let reg = if is_positive {
        lambda * (q.ln() + 1.0)
    } else {
        lambda
    };
    kl_grad_q(p, q) + reg
}

/// `g_BKL`: positive `1 - lambda (q/p)(ln q + 1)`, negative `1 - lambda q/p`.
pub fn bkl_grad_ratio(p: f64, q: f64, is_positive: bool, lambda: f64) -> Result<f64> {
    if p.is_nan() || p <= 0.0 {
        return Err(CklError::RatioUndefined);
    }
    let reg = if is_positive { q.ln() + 1.0 } else { 1.0 };
    Ok(1.0 - lambda * (q / p) * reg)
}

/// `d/dq [-ln q]` for positives, zero for negatives.
pub fn nll_grad_q(q: f64, is_positive: bool) -> f64 {
    if is_positive {
        -1.0 / q
    } else {
        0.0
    }
}

/// Per-term value used by the finite-difference oracle; mirrors the loss
/// summands without going through the gradient code.
pub fn loss_term(cfg: &LossConfig, p: f64, q: f64, is_positive: bool, beta: f64) -> f64 {
    match cfg.kind {
        LossKind::Kl => kl_term(p, q),
        LossKind::Ckl => losses::ckl_term(p, q, is_positive, cfg.ckl.gamma, beta),
        LossKind::Bkl => {
            let reg = if is_positive { q * q.ln() } else { q };
            kl_term(p, q) + cfg.bkl.lambda * reg
        }
        LossKind::Nll => {
            if is_positive {
                -q.ln()
            } else {
                0.0
            }
        }
        LossKind::KlNll => kl_term(p, q) + if is_positive { -q.ln() } else { 0.0 },
        LossKind::MarginMse => f64::NAN,
    }
}

/// Analytic per-term derivative matching [`loss_term`].
pub fn loss_term_grad_q(
    cfg: &LossConfig,
    p: f64,
    q: f64,
    is_positive: bool,
    beta: f64,
) -> Result<f64> {
    Ok(match cfg.kind {
        LossKind::Kl => kl_grad_q(p, q),
        LossKind::Ckl => ckl_grad_q(p, q, is_positive, cfg.ckl.gamma, beta)?,
        LossKind::Bkl => bkl_grad_q(p, q, is_positive, cfg.bkl.lambda),
        LossKind::Nll => nll_grad_q(q, is_positive),
        LossKind::KlNll => kl_grad_q(p, q) + nll_grad_q(q, is_positive),
        LossKind::MarginMse => {
            return Err(CklError::InvalidConfig(
                "margin_mse is defined on scores, not probabilities".into(),
            ))
        }
    })
}

fn clamp_bounds(cfg: &LossConfig) -> (f64, f64) {
    match cfg.kind {
        LossKind::Ckl => (cfg.ckl.prob_clamp_epsilon, 1.0 - cfg.ckl.prob_clamp_epsilon),
        _ => (DEFAULT_PROB_EPSILON, 1.0),
    }
}

/// Gradient of an instance loss with respect to raw student scores.
///
/// Distributional losses go through the softmax Jacobian
/// `dq_i/ds_k = q_i (delta_ik - q_k)`, giving `q_k (g_k - sum_i g_i q_i)`
/// with `g = dL/dq`. Components where the probability clamp is active carry
/// no gradient.
pub fn loss_grad_scores(
    cfg: &LossConfig,
    teacher_scores: &[f64],
    student_scores: &[f64],
    num_positives: usize,
    betas: &[f64],
) -> Result<Vec<f64>> {
    let n = student_scores.len();
    if teacher_scores.len() != n {
        return Err(CklError::Misaligned {
            expected: n,
            got: teacher_scores.len(),
        });
    }
    if cfg.kind == LossKind::MarginMse {
        return margin_mse_grad_scores(teacher_scores, student_scores, num_positives);
    }
    if num_positives > n {
        return Err(CklError::Misaligned {
            expected: n,
            got: num_positives,
        });
    }
    if cfg.kind == LossKind::Ckl && betas.len() != n - num_positives {
        return Err(CklError::Misaligned {
            expected: n - num_positives,
            got: betas.len(),
        });
    }
    let p = softmax(teacher_scores)?;
    let q = softmax(student_scores)?;
    let (lo, hi) = clamp_bounds(cfg);
    let mut g = Vec::with_capacity(n);
    for i in 0..n {
        let is_pos = i < num_positives;
        let beta = if is_pos || cfg.kind != LossKind::Ckl {
            0.0
        } else {
            betas[i - num_positives]
        };
        let qc = clamp(q[i], lo, hi);
        if qc != q[i] {
            g.push(0.0);
        } else {
            g.push(loss_term_grad_q(cfg, p[i], qc, is_pos, beta)?);
        }
    }
    let mean: f64 = g.iter().zip(&q).map(|(gi, qi)| gi * qi).sum();
    Ok(q.iter().zip(&g).map(|(qk, gk)| qk * (gk - mean)).collect())
}

fn margin_mse_grad_scores(
    teacher: &[f64],
    student: &[f64],
    num_positives: usize,
) -> Result<Vec<f64>> {
    let n = student.len();
    if num_positives == 0 || num_positives >= n {
        return Err(CklError::NoPairs);
    }
    let pairs = (num_positives * (n - num_positives)) as f64;
    let mut grad = vec![0.0; n];
    for j in 0..num_positives {
        for i in num_positives..n {
            let diff = (teacher[j] - teacher[i]) - (student[j] - student[i]);
            grad[j] -= 2.0 * diff / pairs;
            grad[i] += 2.0 * diff / pairs;
        }
    }
    Ok(grad)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientReport {
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
}

impl GradientReport {
    pub fn compare(analytic: Vec<f64>, numeric: Vec<f64>) -> Self {
        let mut max_rel_error: f64 = 0.0;
        let mut max_abs_error: f64 = 0.0;
        for (&a, &n) in analytic.iter().zip(&numeric) {
            max_abs_error = max_abs_error.max((a - n).abs());
            max_rel_error = max_rel_error.max(relative_error(a, n));
        }
        Self {
            analytic,
            numeric,
            max_rel_error,
            max_abs_error,
        }
    }
}

/// Score-space gradient of one instance against central differences.
pub fn check_instance(
    cfg: &LossConfig,
    teacher_scores: &[f64],
    student_scores: &[f64],
    num_positives: usize,
    betas: &[f64],
) -> Result<GradientReport> {
    let analytic = loss_grad_scores(cfg, teacher_scores, student_scores, num_positives, betas)?;
    // Validate once so the closure below cannot fail.
    loss_on_scores(cfg, teacher_scores, student_scores, num_positives, betas)?;
    let numeric = numeric_gradient(
        |s| loss_on_scores(cfg, teacher_scores, s, num_positives, betas).unwrap_or(f64::NAN),
        student_scores,
        FD_STEP,
    );
    Ok(GradientReport::compare(analytic, numeric))
}

/// Worst-case agreement for one family of checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckStats {
    pub name: String,
    pub samples: usize,
    /// Samples whose double-precision difference missed the tolerance and
    /// were re-measured with the 128-bit difference quotient.
    pub refined: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
}

impl CheckStats {
    fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            samples: 0,
            refined: 0,
            max_rel_error: 0.0,
            max_abs_error: 0.0,
        }
    }

    fn record(&mut self, analytic: f64, numeric: f64) {
        self.samples += 1;
        let rel = relative_error(analytic, numeric);
        // NaN must surface as a failure.
        self.max_rel_error = if rel.is_nan() {
            f64::NAN
        } else {
            self.max_rel_error.max(rel)
        };
        self.max_abs_error = self.max_abs_error.max((analytic - numeric).abs());
    }

    /// Record against the double-precision difference, falling back to
    /// `refine` when that one disagrees beyond [`REFINE_THRESHOLD`].
    fn record_refined<R>(&mut self, analytic: f64, numeric: f64, refine: R) -> Result<()>
    where
        R: FnOnce() -> Result<f64>,
    {
        let numeric = if relative_error(analytic, numeric) < REFINE_THRESHOLD {
            numeric
        } else {
            self.refined += 1;
            refine()?
        };
        self.record(analytic, numeric);
        Ok(())
    }

    fn merge(mut self, other: &Self) -> Self {
        self.samples += other.samples;
        self.refined += other.refined;
        self.max_rel_error = if other.max_rel_error.is_nan() || self.max_rel_error.is_nan() {
            f64::NAN
        } else {
            self.max_rel_error.max(other.max_rel_error)
        };
        self.max_abs_error = self.max_abs_error.max(other.max_abs_error);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckSummary {
    pub draws: usize,
    pub seed: u64,
    pub step: f64,
    pub tolerance: f64,
    /// Per-term `dL/dq` checks, then score-space checks.
    pub checks: Vec<CheckStats>,
    /// Largest relative error over all checks.
    pub max_rel_error: f64,
    /// Largest `|ckl_grad_q - grad_ratio * kl_grad_q|`.
    pub ratio_identity_max_error: f64,
    pub passed: bool,
}

/// Relative-error gate of [`gradcheck`].
pub const GRADCHECK_TOLERANCE: f64 = 1e-6;
pub const RATIO_IDENTITY_TOLERANCE: f64 = 1e-10;

/// Relative disagreement above which a double-precision difference is
/// re-measured in 128-bit arithmetic.
pub const REFINE_THRESHOLD: f64 = GRADCHECK_TOLERANCE / 10.0;

const TERM_LOSSES: [LossKind; 4] = [LossKind::Kl, LossKind::Ckl, LossKind::Bkl, LossKind::Nll];

fn draw_rng(seed: u64, draw: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(draw as u64);
    rng
}

fn random_hp(rng: &mut ChaCha8Rng) -> CklHyperparams {
    let gamma = rng.random_range(1.0..7.0);
    let alpha = rng.random_range(0.0..=(gamma - 1.0));
    CklHyperparams {
        gamma,
        alpha,
        ..CklHyperparams::default()
    }
}

fn check_one_draw(seed: u64, draw: usize) -> Result<(Vec<CheckStats>, f64)> {
    let mut rng = draw_rng(seed, draw);
    let hp = random_hp(&mut rng);
    let lambda = rng.random_range(0.0..0.5);
    let bkl = BklParams { lambda };

    let mut term_stats: Vec<CheckStats> = TERM_LOSSES
        .iter()
        .map(|k| CheckStats::new(format!("dq/{k}")))
        .collect();
    let mut ratio_err: f64 = 0.0;

    // Per-term derivatives at (p, q) away from the clamp.
    let p = rng.random_range(1e-3..1.0);
    let q = rng.random_range(1e-3..(1.0 - 1e-3));
    let is_pos = rng.random_bool(0.5);
    let beta = if is_pos {
        0.0
    } else {
        rng.random_range(-hp.alpha..=hp.alpha)
    };
    for (stats, &kind) in term_stats.iter_mut().zip(TERM_LOSSES.iter()) {
        let cfg = LossConfig::new(kind).with_ckl(hp).with_bkl(bkl);
        let analytic = loss_term_grad_q(&cfg, p, q, is_pos, beta)?;
        let numeric = central_difference(|x| loss_term(&cfg, p, x, is_pos, beta), q, FD_STEP);
        stats.record_refined(analytic, numeric, || {
            precise::term_central_difference(&cfg, p, q, is_pos, beta, FD_STEP)
        })?;
    }
    let g = grad_ratio(p, q, is_pos, hp.gamma, beta)?;
    let ckl = ckl_grad_q(p, q, is_pos, hp.gamma, beta)?;
    ratio_err = ratio_err.max((ckl - g * kl_grad_q(p, q)).abs());

    // Score-space gradients on a random instance.
    let s = rng.random_range(1..=3);
    let m = rng.random_range(1..=6);
    let n = s + m;
    let teacher: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
    let student: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
    let ids: Vec<String> = (0..n).map(|i| format!("d{i}")).collect();
    let id_refs: Vec<&str> = ids.iter().map(String::as_str).collect();
    let ranks = compute_ranks(&id_refs, &student);
    let recip: f64 = (0..s).map(|j| 1.0 / ranks[&ids[j]] as f64).sum::<f64>() / s as f64;
    let betas: Vec<f64> = (s..n)
        .map(|i| hp.alpha * (1.0 / ranks[&ids[i]] as f64 - recip))
        .collect();

    let mut score_stats = Vec::new();
    for kind in LossKind::ALL {
        let cfg = LossConfig::new(kind).with_ckl(hp).with_bkl(bkl);
        let report = check_instance(&cfg, &teacher, &student, s, &betas)?;
        let mut stats = CheckStats::new(format!("ds/{kind}"));
        for (k, (&a, &num)) in report.analytic.iter().zip(&report.numeric).enumerate() {
            stats.record_refined(a, num, || {
                precise::score_central_difference(&cfg, &teacher, &student, s, &betas, k, FD_STEP)
            })?;
        }
        score_stats.push(stats);
    }
    term_stats.extend(score_stats);
    Ok((term_stats, ratio_err))
}

/// Finite-difference check of every analytic gradient over `draws` random
/// draws, deterministic in `seed`.
///
/// Each derivative is compared with a double-precision central difference.
/// When the two disagree beyond [`REFINE_THRESHOLD`] the same difference quotient is
/// re-evaluated in 128-bit arithmetic (see [`crate::precise`]) and that value
/// is used instead; the count is reported per check as `refined`.
pub fn gradcheck(draws: usize, seed: u64) -> Result<GradcheckSummary> {
    if draws == 0 {
        return Err(CklError::InvalidConfig("draw count must be >= 1".into()));
    }
    let per_draw: Vec<(Vec<CheckStats>, f64)> = (0..draws)
        .into_par_iter()
        .map(|d| check_one_draw(seed, d))
        .collect::<Result<_>>()?;
    let mut checks: Vec<CheckStats> = TERM_LOSSES
        .iter()
        .map(|k| CheckStats::new(format!("dq/{k}")))
        .chain(
            LossKind::ALL
                .iter()
                .map(|k| CheckStats::new(format!("ds/{k}"))),
        )
        .collect();
    let mut ratio_identity_max_error: f64 = 0.0;
    for (stats, ratio) in &per_draw {
        for (acc, s) in checks.iter_mut().zip(stats) {
            *acc = acc.clone().merge(s);
        }
        ratio_identity_max_error = ratio_identity_max_error.max(*ratio);
    }
    let max_rel_error = checks.iter().fold(0.0f64, |m, c| m.max(c.max_rel_error));
    let passed =
        max_rel_error < GRADCHECK_TOLERANCE && ratio_identity_max_error <= RATIO_IDENTITY_TOLERANCE;
    Ok(GradcheckSummary {
        draws,
        seed,
        step: FD_STEP,
        tolerance: GRADCHECK_TOLERANCE,
        checks,
        max_rel_error,
        ratio_identity_max_error,
        passed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Positive,
    Negative,
}

impl Branch {
    pub fn as_str(&self) -> &'static str {
        match self {
            Branch::Positive => "positive",
            Branch::Negative => "negative",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub branch: Branch,
    pub pq_ratio: f64,
    pub q: f64,
    pub g_ckl: f64,
    pub g_bkl: f64,
}

/// Evenly spaced student probabilities `0.05, 0.10, ..., 0.95`.
pub fn default_q_grid() -> Vec<f64> {
    (1..20).map(|i| i as f64 * 0.05).collect()
}

/// 61 log-spaced teacher/student ratios from 0.05 to 20.
pub fn default_ratio_grid() -> Vec<f64> {
    let (lo, hi) = (0.05f64.ln(), 20.0f64.ln());
    (0..61)
        .map(|i| (lo + (hi - lo) * i as f64 / 60.0).exp())
        .collect()
}

/// Gradient-contribution ratios of CKL and BKL over a `(q, p/q)` grid.
///
/// Rows with `p = ratio * q > 1` are skipped. Rows are ordered by branch,
/// then `q`, then ratio.
pub fn curve_sweep(
    gamma: f64,
    beta: f64,
    lambda: f64,
    q_grid: &[f64],
    ratio_grid: &[f64],
) -> Result<Vec<CurveRow>> {
    if q_grid.is_empty() || ratio_grid.is_empty() {
        return Err(CklError::InvalidConfig(
            "curve grids must be non-empty".into(),
        ));
    }
    check_exponents(gamma, &[beta])?;
    let mut rows = Vec::new();
    for branch in [Branch::Positive, Branch::Negative] {
        let is_pos = branch == Branch::Positive;
        let b = if is_pos { 0.0 } else { beta };
        for &q in q_grid {
            for &r in ratio_grid {
                let p = r * q;
                if p > 1.0 {
                    continue;
                }
                rows.push(CurveRow {
                    branch,
                    pq_ratio: r,
                    q,
                    g_ckl: grad_ratio(p, q, is_pos, gamma, b)?,
                    g_bkl: bkl_grad_ratio(p, q, is_pos, lambda)?,
                });
            }
        }
    }
    Ok(rows)
}

pub const CURVES_HEADER: &str = "branch,pq_ratio,q,g_ckl,g_bkl";

pub fn write_curves_csv<W: Write>(mut w: W, rows: &[CurveRow]) -> Result<()> {
    writeln!(w, "{CURVES_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.branch.as_str(),
            r.pq_ratio,
            r.q,
            r.g_ckl,
            r.g_bkl
        )?;
    }
    Ok(())
}

/// Ratio `p/q` where the positive-branch `g_CKL` changes sign:
/// `gamma q ln(p/q) + 1 - q = 0`.
pub fn positive_zero_crossing(q: f64, gamma: f64) -> f64 {
    (-(1.0 - q) / (gamma * q)).exp()
}

/// Ratio `p/q` where the negative-branch `g_CKL` changes sign:
/// `(gamma - beta) ln(p/q) = 1`.
pub fn negative_zero_crossing(gamma: f64, beta: f64) -> f64 {
    (1.0 / (gamma - beta)).exp()
}

/// Bisection for a sign change of `f` on `[lo, hi]`.
pub fn bisect<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64, tol: f64) -> Option<f64> {
    let mut f_lo = f(lo);
    let f_hi = f(hi);
    if f_lo == 0.0 {
        return Some(lo);
    }
    if f_hi == 0.0 {
        return Some(hi);
    }
    if f_lo.signum() == f_hi.signum() {
        return None;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let f_mid = f(mid);
        if f_mid == 0.0 || (hi - lo) < tol {
            return Some(mid);
        }
        if f_mid.signum() == f_lo.signum() {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::E;

    #[test]
    fn kl_grad_values() {
        assert_eq!(kl_grad_q(0.5, 0.5), -1.0);
        assert_eq!(kl_grad_q(0.5, 0.25), -2.0);
        assert_eq!(kl_grad_q(0.0, 0.3), 0.0);
    }

    #[test]
    fn ckl_grad_values() {
        assert_abs_diff_eq!(
            ckl_grad_q(0.5, 0.5, true, 5.0, 0.0).unwrap(),
            -0.03125,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            ckl_grad_q(0.5, 0.5, false, 5.0, 0.0).unwrap(),
            -0.03125,
            epsilon = 1e-15
        );
        let near_one = ckl_grad_q(0.5, 1.0 - 1e-12, true, 5.0, 0.0).unwrap();
        assert!(near_one.abs() < 1e-40);
        assert!(matches!(
            ckl_grad_q(0.5, 0.5, false, 1.0, 0.5),
            Err(CklError::ExponentBelowOne { .. })
        ));
    }

    #[test]
    fn ratio_values() {
        assert_abs_diff_eq!(
            grad_ratio(0.5, 0.5, true, 5.0, 0.0).unwrap(),
            0.03125,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            grad_ratio(0.5, 0.5, false, 5.0, 0.0).unwrap(),
            0.03125,
            epsilon = 1e-15
        );
        // p/q = e at q = 0.5: 0.5^4 * (5 * 0.5 + 0.5)
        assert_abs_diff_eq!(
            grad_ratio(0.5 * E, 0.5, true, 5.0, 0.0).unwrap(),
            0.1875,
            epsilon = 1e-14
        );
        assert!(matches!(
            grad_ratio(0.0, 0.5, true, 5.0, 0.0),
            Err(CklError::RatioUndefined)
        ));
    }

    #[test]
    fn bkl_ratio_values() {
        for &(p, q, pos) in &[(0.3, 0.7, true), (0.9, 0.1, false), (0.5, 0.5, true)] {
            assert_eq!(bkl_grad_ratio(p, q, pos, 0.0).unwrap(), 1.0);
        }
        assert!(bkl_grad_ratio(0.0, 0.5, true, 0.1).is_err());
    }

    #[test]
    fn bkl_ratio_matches_finite_differences() {
        let cfg_b = LossConfig::new(LossKind::Bkl).with_bkl(BklParams { lambda: 0.1 });
        let cfg_k = LossConfig::new(LossKind::Kl);
        for &(p, q, pos) in &[
            (0.5, 0.5, true),
            (0.2, 0.6, true),
            (0.1, 0.4, false),
            (0.7, 0.05, false),
        ] {
            let fd_b = central_difference(|x| loss_term(&cfg_b, p, x, pos, 0.0), q, FD_STEP);
            let fd_k = central_difference(|x| loss_term(&cfg_k, p, x, pos, 0.0), q, FD_STEP);
            let closed = bkl_grad_ratio(p, q, pos, 0.1).unwrap();
            assert_abs_diff_eq!(fd_b / fd_k, closed, epsilon = 1e-6);
        }
        // Golden value obtained from the finite-difference ratio above at
        // p = q = 0.5, lambda = 0.1: 1 - 0.1 * (1 + ln 0.5).
        let fd = central_difference(|x| loss_term(&cfg_b, 0.5, x, true, 0.0), 0.5, FD_STEP)
            / central_difference(|x| loss_term(&cfg_k, 0.5, x, true, 0.0), 0.5, FD_STEP);
        assert_abs_diff_eq!(fd, 0.969_314_718, epsilon = 1e-6);
        assert_abs_diff_eq!(
            bkl_grad_ratio(0.5, 0.5, true, 0.1).unwrap(),
            0.969_314_718,
            epsilon = 1e-9
        );
    }

    #[test]
    fn kl_stationary_and_simplex_sum() {
        let scores = [0.3, -1.2, 2.0, 0.7];
        let cfg = LossConfig::new(LossKind::Kl);
        let g = loss_grad_scores(&cfg, &scores, &scores, 2, &[]).unwrap();
        assert!(g.iter().all(|x| x.abs() < 1e-9));
        let teacher = [1.0, 0.0, -0.5, 2.5];
        for kind in LossKind::ALL {
            if !kind.is_distributional() {
                continue;
            }
            let cfg = LossConfig::new(kind);
            let g = loss_grad_scores(&cfg, &teacher, &scores, 2, &[0.2, -0.3]).unwrap();
            assert!(g.iter().sum::<f64>().abs() < 1e-9, "{kind}");
        }
    }

    #[test]
    fn single_instance_fd_agreement() {
        let teacher = [2.0, 0.5, -1.0, 0.1, -0.4];
        let student = [0.4, 1.5, -0.2, 0.3, 0.0];
        let betas = [0.3, -0.1, 0.05];
        for kind in LossKind::ALL {
            let cfg = LossConfig::new(kind);
            let r = check_instance(&cfg, &teacher, &student, 2, &betas).unwrap();
            assert!(r.max_rel_error < 1e-6, "{kind}: {r:?}");
        }
    }

    #[test]
    fn small_gradcheck_passes() {
        let s = gradcheck(200, 1).unwrap();
        assert!(s.passed, "{s:#?}");
        assert_eq!(s.checks.len(), 10);
        assert!(s.checks.iter().all(|c| c.samples > 0));
        assert_eq!(gradcheck(200, 1).unwrap(), s);
    }

    #[test]
    fn curve_shape_and_roots() {
        let rows = curve_sweep(5.0, 0.0, 0.1, &default_q_grid(), &default_ratio_grid()).unwrap();
        assert!(rows.iter().all(|r| r.pq_ratio * r.q <= 1.0));
        for q in [0.2, 0.5, 0.8] {
            let f = |r: f64| grad_ratio(r * q, q, true, 5.0, 0.0).unwrap();
            let root = bisect(f, 1e-6, 1.0 / q, 1e-14).unwrap();
            assert_abs_diff_eq!(root, positive_zero_crossing(q, 5.0), epsilon = 1e-8);
        }
        let f = |r: f64| grad_ratio(r * 0.3, 0.3, false, 5.0, 0.0).unwrap();
        let root = bisect(f, 0.1, 1.0 / 0.3, 1e-14).unwrap();
        assert_abs_diff_eq!(root, negative_zero_crossing(5.0, 0.0), epsilon = 1e-8);
        assert!(curve_sweep(5.0, 0.0, 0.1, &[], &[1.0]).is_err());
    }

    #[test]
    fn curves_csv_header() {
        let rows = curve_sweep(5.0, 0.0, 0.1, &[0.5], &[1.0]).unwrap();
        let mut buf = Vec::new();
        write_curves_csv(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some(CURVES_HEADER));
        assert!(lines
            .next()
            .unwrap()
            .starts_with("positive,1,0.5,0.03125,0.96931471805599"));
        assert_eq!(lines.next(), Some("negative,1,0.5,0.03125,0.9"));
    }
}
