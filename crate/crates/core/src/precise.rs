//! 128-bit re-implementation of the losses, used to re-measure central
//! differences whose double-precision evaluation is dominated by rounding.
//!
//! With `h = 1e-6` a double-precision difference quotient carries roughly
//! `1e-16 * |L| / h` of rounding noise, which swamps gradient components of
//! order `1e-3` and below. The same quotient evaluated here has noise far
//! under `1e-20`; only the truncation error of the central difference is left.

use dashu_float::round::mode::HalfEven;
use dashu_float::FBig;

use crate::error::{CklError, Result};
use crate::losses::{LossConfig, LossKind};
use crate::params::DEFAULT_PROB_EPSILON;

pub const PRECISION_BITS: usize = 128;

type F = FBig<HalfEven, 2>;

fn hp(x: f64) -> Result<F> {
    F::try_from(x)
        .map(|v| v.with_precision(PRECISION_BITS).value())
        .map_err(|_| CklError::InvalidScore(x))
}

fn to_f64(x: &F) -> f64 {
    x.to_f64().value()
}

fn max(a: F, b: F) -> F {
    if a >= b {
        a
    } else {
        b
    }
}

/// Softmax probabilities and their logarithms.
fn log_softmax(scores: &[F]) -> (Vec<F>, Vec<F>) {
    let top = scores
        .iter()
        .cloned()
        .reduce(max)
        .expect("non-empty scores");
    let shifted: Vec<F> = scores.iter().map(|s| s - &top).collect();
    let exps: Vec<F> = shifted.iter().map(|x| x.exp()).collect();
    let log_z = exps
        .iter()
        .cloned()
        .reduce(|a, b| a + b)
        .expect("non-empty")
        .ln();
    let logs: Vec<F> = shifted.iter().map(|x| x - &log_z).collect();
    let probs = logs.iter().map(|l| l.exp()).collect();
    (probs, logs)
}

struct Clamped {
    q: F,
    ln_q: F,
}

fn clamp(q: &F, ln_q: &F, lo: f64, hi: f64) -> Result<Clamped> {
    let (lo_f, hi_f) = (hp(lo)?, hp(hi)?);
    if *q < lo_f {
        return Ok(Clamped {
            ln_q: lo_f.ln(),
            q: lo_f,
        });
    }
    if *q > hi_f {
        return Ok(Clamped {
            ln_q: hi_f.ln(),
            q: hi_f,
        });
    }
    Ok(Clamped {
        q: q.clone(),
        ln_q: ln_q.clone(),
    })
}

fn pow(base_ln: &F, exponent: f64) -> Result<F> {
    Ok((base_ln * hp(exponent)?).exp())
}

/// Instance loss at `student`, with teacher log-probabilities precomputed.
fn instance_loss(
    cfg: &LossConfig,
    teacher: &(Vec<F>, Vec<F>),
    teacher_scores: &[F],
    student: &[F],
    s: usize,
    betas: &[f64],
) -> Result<F> {
    let zero = hp(0.0)?;
    if cfg.kind == LossKind::MarginMse {
        let n = student.len();
        let mut total = zero;
        for j in 0..s {
            for i in s..n {
                let d = (&teacher_scores[j] - &teacher_scores[i]) - (&student[j] - &student[i]);
                total += &d * &d;
            }
        }
        return Ok(total / hp((s * (n - s)) as f64)?);
    }
    let (p, ln_p) = teacher;
    let (q, ln_q) = log_softmax(student);
    let kl = |lo: f64, hi: f64| -> Result<F> {
        let mut total = hp(0.0)?;
        for i in 0..q.len() {
            let c = clamp(&q[i], &ln_q[i], lo, hi)?;
            total += &p[i] * (&ln_p[i] - &c.ln_q);
        }
        Ok(total)
    };
    let nll = || -> Result<F> {
        let mut total = hp(0.0)?;
        for j in 0..s {
            total -= clamp(&q[j], &ln_q[j], DEFAULT_PROB_EPSILON, 1.0)?.ln_q;
        }
        Ok(total)
    };
    match cfg.kind {
        LossKind::Kl => kl(DEFAULT_PROB_EPSILON, 1.0),
        LossKind::Nll => nll(),
        LossKind::KlNll => Ok(kl(DEFAULT_PROB_EPSILON, 1.0)? + nll()?),
        LossKind::Bkl => {
            let mut reg = hp(0.0)?;
            for j in 0..s {
                reg += &q[j] * &ln_q[j];
            }
            for qi in &q[s..] {
                reg += qi;
            }
            Ok(kl(DEFAULT_PROB_EPSILON, 1.0)? + hp(cfg.bkl.lambda)? * reg)
        }
        LossKind::Ckl => {
            let eps = cfg.ckl.prob_clamp_epsilon;
            let gamma = cfg.ckl.gamma;
            let one = hp(1.0)?;
            let mut total = hp(0.0)?;
            for i in 0..q.len() {
                let c = clamp(&q[i], &ln_q[i], eps, 1.0 - eps)?;
                let term = &p[i] * (&ln_p[i] - &c.ln_q);
                let w = if i < s {
                    pow(&(&one - &c.q).ln(), gamma)?
                } else {
                    pow(&c.ln_q, gamma - betas[i - s])?
                };
                total += w * term;
            }
            Ok(total)
        }
        LossKind::MarginMse => unreachable!(),
    }
}

/// `(L(s + h e_k) - L(s - h e_k)) / 2h` evaluated in 128-bit arithmetic.
pub fn score_central_difference(
    cfg: &LossConfig,
    teacher_scores: &[f64],
    student_scores: &[f64],
    num_positives: usize,
    betas: &[f64],
    k: usize,
    h: f64,
) -> Result<f64> {
    let n = student_scores.len();
    if teacher_scores.len() != n || k >= n || num_positives == 0 || num_positives > n {
        return Err(CklError::Misaligned {
            expected: n,
            got: teacher_scores.len(),
        });
    }
    let t: Vec<F> = teacher_scores
        .iter()
        .map(|&x| hp(x))
        .collect::<Result<_>>()?;
    let teacher = log_softmax(&t);
    let mut s: Vec<F> = student_scores
        .iter()
        .map(|&x| hp(x))
        .collect::<Result<_>>()?;
    let step = hp(h)?;
    let base = s[k].clone();
    s[k] = &base + &step;
    let up = instance_loss(cfg, &teacher, &t, &s, num_positives, betas)?;
    s[k] = &base - &step;
    let down = instance_loss(cfg, &teacher, &t, &s, num_positives, betas)?;
    Ok(to_f64(&((up - down) / (step * hp(2.0)?))))
}

/// Central difference of one per-document loss term in `q`, in 128-bit
/// arithmetic. Clamping is not applied; callers keep `q` inside `(0, 1)`.
pub fn term_central_difference(
    cfg: &LossConfig,
    p: f64,
    q: f64,
    is_positive: bool,
    beta: f64,
    h: f64,
) -> Result<f64> {
    let term = |x: F| -> Result<F> {
        let ln_x = x.ln();
        let pf = hp(p)?;
        let kl = &pf * (pf.ln() - &ln_x);
        Ok(match cfg.kind {
            LossKind::Kl => kl,
            LossKind::Ckl => {
                let w = if is_positive {
                    pow(&(hp(1.0)? - &x).ln(), cfg.ckl.gamma)?
                } else {
                    pow(&ln_x, cfg.ckl.gamma - beta)?
                };
                w * kl
            }
            LossKind::Bkl => {
                let reg = if is_positive { &x * &ln_x } else { x.clone() };
                kl + hp(cfg.bkl.lambda)? * reg
            }
            LossKind::Nll => {
                if is_positive {
                    -ln_x
                } else {
                    hp(0.0)?
                }
            }
            LossKind::KlNll => {
                if is_positive {
                    kl - ln_x
                } else {
                    kl
                }
            }
            LossKind::MarginMse => {
                return Err(CklError::InvalidConfig(
                    "margin_mse is defined on scores, not probabilities".into(),
                ))
            }
        })
    };
    let qf = hp(q)?;
    let step = hp(h)?;
    let up = term(&qf + &step)?;
    let down = term(&qf - &step)?;
    Ok(to_f64(&((up - down) / (step * hp(2.0)?))))
}
