//! Rank positions and the exponent biases of negative documents.
//!
//! A negative ranked above the harmonic-average position of the positives gets
//! a positive bias (its CKL weight grows), one ranked below gets a negative
//! bias. Biases are frozen between periodic refreshes so the loss can treat
//! them as constants.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{CklError, Result};
use crate::instance::DistillationInstance;
use crate::metrics::order_by_score;

pub const DEFAULT_RANK_POOL_K: usize = 50;

pub type RankMap = BTreeMap<String, usize>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaAssignment {
    pub alpha: f64,
    /// Exponent bias per negative doc_id.
    pub betas: BTreeMap<String, f64>,
    /// 1-based rank of every document that produced the biases.
    pub ranks: RankMap,
    /// `(1/s) * sum over positives of 1/rank`.
    pub harmonic_mean_reciprocal: f64,
}

impl BetaAssignment {
    /// All-zero biases, e.g. before the first refresh.
    pub fn zeros(inst: &DistillationInstance) -> Self {
        Self {
            alpha: 0.0,
            betas: inst
                .negatives
                .iter()
                .map(|d| (d.doc_id.clone(), 0.0))
                .collect(),
            ranks: RankMap::new(),
            harmonic_mean_reciprocal: 0.0,
        }
    }

    /// Biases from the instance's current student scores.
    pub fn from_student(inst: &DistillationInstance, alpha: f64) -> Result<Self> {
        let ranks = compute_ranks(&inst.doc_ids(), &inst.student_scores());
        compute_beta(&ranks, inst, alpha)
    }

    pub fn get(&self, doc_id: &str) -> Option<f64> {
        self.betas.get(doc_id).copied()
    }

    /// Biases in the instance's negative order.
    pub fn aligned(&self, inst: &DistillationInstance) -> Result<Vec<f64>> {
        inst.negatives
            .iter()
            .map(|d| {
                self.get(&d.doc_id)
                    .ok_or_else(|| CklError::InvalidInstance {
                        query_id: inst.query_id.clone(),
                        reason: format!("no beta for negative {}", d.doc_id),
                    })
            })
            .collect()
    }

    /// Largest `|beta|`.
    pub fn max_abs(&self) -> f64 {
        self.betas.values().fold(0.0, |m, b| m.max(b.abs()))
    }
}

/// Rank 1 is the highest score; ties go to the smaller doc_id.
pub fn compute_ranks(doc_ids: &[&str], scores: &[f64]) -> RankMap {
    order_by_score(scores, doc_ids)
        .into_iter()
        .enumerate()
        .map(|(pos, i)| (doc_ids[i].to_string(), pos + 1))
        .collect()
}

/// Ranks restricted to a stored candidate pool.
///
/// The pool is cut to its `k` best entries; those are ranked `1..=k` and every
/// other document in `doc_ids` gets rank `k + 1`.
pub fn topk_rank_approximation(pool: &[(&str, f64)], doc_ids: &[&str], k: usize) -> RankMap {
    let k = k.max(1);
    let ids: Vec<&str> = pool.iter().map(|(id, _)| *id).collect();
    let scores: Vec<f64> = pool.iter().map(|(_, s)| *s).collect();
    let mut ranks: RankMap = order_by_score(&scores, &ids)
        .into_iter()
        .take(k)
        .enumerate()
        .map(|(pos, i)| (ids[i].to_string(), pos + 1))
        .collect();
    for id in doc_ids {
        ranks.entry(id.to_string()).or_insert(k + 1);
    }
    ranks
}

/// `beta_i = alpha * (1/rank(i) - (1/s) * sum_{j in D+} 1/rank(j))`.
pub fn compute_beta(
    ranks: &RankMap,
    inst: &DistillationInstance,
    alpha: f64,
) -> Result<BetaAssignment> {
    let rank_of = |id: &str| {
        ranks
            .get(id)
            .copied()
            .ok_or_else(|| CklError::InvalidInstance {
                query_id: inst.query_id.clone(),
                reason: format!("no rank for {id}"),
            })
    };
    let mut recip_sum = 0.0;
    for d in &inst.positives {
        recip_sum += 1.0 / rank_of(&d.doc_id)? as f64;
    }
    let harmonic_mean_reciprocal = recip_sum / inst.num_positives() as f64;
    let mut betas = BTreeMap::new();
    for d in &inst.negatives {
        let r = rank_of(&d.doc_id)? as f64;
        betas.insert(
            d.doc_id.clone(),
            alpha * (1.0 / r - harmonic_mean_reciprocal),
        );
    }
    Ok(BetaAssignment {
        alpha,
        betas,
        ranks: ranks.clone(),
        harmonic_mean_reciprocal,
    })
}

pub fn is_update_step(step: usize, period: usize) -> bool {
    step.is_multiple_of(period.max(1))
}

/// Recompute biases from the latest student scores on update steps
/// (`step % period == 0`); otherwise keep `current`.
///
/// `rank_pool_k` limits ranking to the top-k candidates, see
/// [`topk_rank_approximation`].
pub fn schedule_update(
    step: usize,
    period: usize,
    current: &BetaAssignment,
    latest: &DistillationInstance,
    rank_pool_k: Option<usize>,
) -> Result<BetaAssignment> {
    if !is_update_step(step, period) {
        return Ok(current.clone());
    }
    refresh(latest, current.alpha, rank_pool_k)
}

/// Biases from `inst`'s student scores, optionally through a top-k pool.
pub fn refresh(
    inst: &DistillationInstance,
    alpha: f64,
    rank_pool_k: Option<usize>,
) -> Result<BetaAssignment> {
    let ids = inst.doc_ids();
    let scores = inst.student_scores();
    let ranks = match rank_pool_k {
        Some(k) => {
            let pool: Vec<(&str, f64)> = ids.iter().copied().zip(scores.iter().copied()).collect();
            topk_rank_approximation(&pool, &ids, k)
        }
        None => compute_ranks(&ids, &scores),
    };
    compute_beta(&ranks, inst, alpha)
}
