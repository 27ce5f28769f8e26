//! Distillation losses over top-one distributions.
//!
//! All losses are per instance. `p` is the teacher distribution and `q` the
//! student's; both are aligned positives first. Student probabilities are
//! clamped before any logarithm so every loss stays finite at the simplex
//! boundary.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{CklError, Result};
use crate::params::{BklParams, CklHyperparams, DEFAULT_PROB_EPSILON};
use crate::prob::TopOneDistribution;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Kl,
    Ckl,
    Bkl,
    MarginMse,
    Nll,
    KlNll,
}

impl LossKind {
    pub const ALL: [LossKind; 6] = [
        LossKind::Kl,
        LossKind::Ckl,
        LossKind::Bkl,
        LossKind::MarginMse,
        LossKind::Nll,
        LossKind::KlNll,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            LossKind::Kl => "kl",
            LossKind::Ckl => "ckl",
            LossKind::Bkl => "bkl",
            LossKind::MarginMse => "margin_mse",
            LossKind::Nll => "nll",
            LossKind::KlNll => "kl_nll",
        }
    }

    /// True for losses that depend on scores only through the student's
    /// top-one distribution.
    pub fn is_distributional(&self) -> bool {
        !matches!(self, LossKind::MarginMse)
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LossKind {
    type Err = CklError;

    fn from_str(s: &str) -> Result<Self> {
        LossKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| CklError::InvalidConfig(format!("unknown loss {s:?}")))
    }
}

/// A loss choice together with the parameters it reads.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub kind: LossKind,
    pub ckl: CklHyperparams,
    pub bkl: BklParams,
}

impl LossConfig {
    pub fn new(kind: LossKind) -> Self {
        Self {
            kind,
            ckl: CklHyperparams::default(),
            bkl: BklParams::default(),
        }
    }

    pub fn with_ckl(mut self, hp: CklHyperparams) -> Self {
        self.ckl = hp;
        self
    }

    pub fn with_bkl(mut self, bkl: BklParams) -> Self {
        self.bkl = bkl;
        self
    }
}

/// CKL term weights: `(1 - q_j)^gamma` for positives and
/// `q_i^(gamma - beta_i)` for negatives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CklTermWeights {
    pub positive_weights: Vec<f64>,
    pub negative_weights: Vec<f64>,
}

impl CklTermWeights {
    /// Weights aligned with the distribution, positives first.
    pub fn all(&self) -> Vec<f64> {
        self.positive_weights
            .iter()
            .chain(self.negative_weights.iter())
            .copied()
            .collect()
    }
}

#[inline]
pub(crate) fn clamp(q: f64, lo: f64, hi: f64) -> f64 {
    q.max(lo).min(hi)
}

/// `p ln(p / q)` with `0 ln 0 = 0`.
#[inline]
pub fn kl_term(p: f64, q: f64) -> f64 {
    if p <= 0.0 {
        0.0
    } else {
        p * (p / q).ln()
    }
}

#[inline]
pub fn positive_weight(q: f64, gamma: f64) -> f64 {
    (1.0 - q).powf(gamma)
}

#[inline]
pub fn negative_weight(q: f64, gamma: f64, beta: f64) -> f64 {
    q.powf(gamma - beta)
}

/// One CKL summand for a document with teacher `p`, clamped student `q`.
#[inline]
pub fn ckl_term(p: f64, q: f64, is_positive: bool, gamma: f64, beta: f64) -> f64 {
    let w = if is_positive {
        positive_weight(q, gamma)
    } else {
        negative_weight(q, gamma, beta)
    };
    w * kl_term(p, q)
}

pub(crate) fn check_exponents(gamma: f64, betas: &[f64]) -> Result<()> {
    for (index, &b) in betas.iter().enumerate() {
        let exponent = gamma - b;
        if exponent.is_nan() || exponent < 1.0 {
            return Err(CklError::ExponentBelowOne { index, exponent });
        }
    }
    Ok(())
}

fn check_betas(student: &TopOneDistribution, betas: &[f64], gamma: f64) -> Result<()> {
    if betas.len() != student.num_negatives() {
        return Err(CklError::Misaligned {
            expected: student.num_negatives(),
            got: betas.len(),
        });
    }
    check_exponents(gamma, betas)
}

/// `sum_i p_i ln(p_i / q_i)`, student clamped to `[eps, 1]`.
pub fn kl_loss(teacher: &TopOneDistribution, student: &TopOneDistribution) -> Result<f64> {
    teacher.check_aligned(student)?;
    Ok(teacher
        .probs()
        .iter()
        .zip(student.probs())
        .map(|(&p, &q)| kl_term(p, clamp(q, DEFAULT_PROB_EPSILON, 1.0)))
        .sum())
}

/// Term weights at the raw (unclamped) student probabilities. `betas` is
/// aligned with the negatives.
pub fn ckl_weights(
    student: &TopOneDistribution,
    betas: &[f64],
    hp: &CklHyperparams,
) -> Result<CklTermWeights> {
    check_betas(student, betas, hp.gamma)?;
    Ok(CklTermWeights {
        positive_weights: student
            .positives()
            .iter()
            .map(|&q| positive_weight(q, hp.gamma))
            .collect(),
        negative_weights: student
            .negatives()
            .iter()
            .zip(betas)
            .map(|(&q, &b)| negative_weight(q, hp.gamma, b))
            .collect(),
    })
}

/// Contrastively-weighted KL:
/// `sum_{D+} (1-q)^gamma p ln(p/q) + sum_{D-} q^(gamma-beta) p ln(p/q)`,
/// student clamped to `[eps, 1 - eps]`.
pub fn ckl_loss(
    teacher: &TopOneDistribution,
    student: &TopOneDistribution,
    betas: &[f64],
    hp: &CklHyperparams,
) -> Result<f64> {
    teacher.check_aligned(student)?;
    check_betas(student, betas, hp.gamma)?;
    let eps = hp.prob_clamp_epsilon;
    let s = student.num_positives();
    let mut total = 0.0;
    for (i, (&p, &q)) in teacher.probs().iter().zip(student.probs()).enumerate() {
        let q = clamp(q, eps, 1.0 - eps);
        let beta = if i < s { 0.0 } else { betas[i - s] };
        total += ckl_term(p, q, i < s, hp.gamma, beta);
    }
    Ok(total)
}

/// Reconstructed BKL: `KL + lambda * (sum_{D+} q ln q + sum_{D-} q)`.
pub fn bkl_loss(
    teacher: &TopOneDistribution,
    student: &TopOneDistribution,
    params: &BklParams,
) -> Result<f64> {
    let kl = kl_loss(teacher, student)?;
    let mut reg = 0.0;
    for &q in student.positives() {
        if q > 0.0 {
            reg += q * q.ln();
        }
    }
    for &q in student.negatives() {
        reg += q;
    }
    Ok(kl + params.lambda * reg)
}

/// Mean squared difference between teacher and student score margins over
/// every (positive, negative) pair. Scores are aligned positives first.
pub fn margin_mse_loss(
    teacher_scores: &[f64],
    student_scores: &[f64],
    num_positives: usize,
) -> Result<f64> {
    if teacher_scores.len() != student_scores.len() {
        return Err(CklError::Misaligned {
            expected: teacher_scores.len(),
            got: student_scores.len(),
        });
    }
    let n = teacher_scores.len();
    if num_positives == 0 || num_positives >= n {
        return Err(CklError::NoPairs);
    }
    let mut total = 0.0;
    for j in 0..num_positives {
        for i in num_positives..n {
            let diff =
                (teacher_scores[j] - teacher_scores[i]) - (student_scores[j] - student_scores[i]);
            total += diff * diff;
        }
    }
    Ok(total / (num_positives * (n - num_positives)) as f64)
}

/// `-sum_{D+} ln q_j`, student clamped to `[eps, 1]`.
pub fn nll_loss(student: &TopOneDistribution) -> f64 {
    student
        .positives()
        .iter()
        .map(|&q| -clamp(q, DEFAULT_PROB_EPSILON, 1.0).ln())
        .sum()
}

pub fn kl_plus_nll(teacher: &TopOneDistribution, student: &TopOneDistribution) -> Result<f64> {
    Ok(kl_loss(teacher, student)? + nll_loss(student))
}

/// Loss of one instance given raw teacher and student scores.
///
/// `betas` (aligned with the negatives) is read by CKL only.
pub fn loss_on_scores(
    cfg: &LossConfig,
    teacher_scores: &[f64],
    student_scores: &[f64],
    num_positives: usize,
    betas: &[f64],
) -> Result<f64> {
    if cfg.kind == LossKind::MarginMse {
        return margin_mse_loss(teacher_scores, student_scores, num_positives);
    }
    let p = TopOneDistribution::from_scores(teacher_scores, num_positives)?;
    let q = TopOneDistribution::from_scores(student_scores, num_positives)?;
    match cfg.kind {
        LossKind::Kl => kl_loss(&p, &q),
        LossKind::Ckl => ckl_loss(&p, &q, betas, &cfg.ckl),
        LossKind::Bkl => bkl_loss(&p, &q, &cfg.bkl),
        LossKind::Nll => Ok(nll_loss(&q)),
        LossKind::KlNll => kl_plus_nll(&p, &q),
        LossKind::MarginMse => unreachable!(),
    }
}
