//! Ranking quality metrics and the two distribution diagnostics tracked during
//! training (positive entropy and top-k margin separation).

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::instance::DistillationInstance;
use crate::prob::TopOneDistribution;

pub const DEFAULT_CUTOFF: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RankingMetrics {
    pub mrr_at_10: f64,
    pub ndcg_at_10: f64,
    pub positive_entropy: f64,
    pub margin_separation: f64,
}

impl RankingMetrics {
    /// Metrics of one instance under its current student scores.
    pub fn for_instance(inst: &DistillationInstance) -> Result<Self> {
        let q = TopOneDistribution::student(inst)?;
        let scores = inst.student_scores();
        let ids = inst.doc_ids();
        let order = order_by_score(&scores, &ids);
        let labels: Vec<bool> = order.iter().map(|&i| q.is_positive(i)).collect();
        let gains: Vec<f64> = labels.iter().map(|&l| if l { 1.0 } else { 0.0 }).collect();
        Ok(Self {
            mrr_at_10: mrr_at_k(&labels, DEFAULT_CUTOFF),
            ndcg_at_10: ndcg_at_k(&gains, DEFAULT_CUTOFF),
            positive_entropy: positive_entropy(&q),
            margin_separation: margin_separation(&q, DEFAULT_CUTOFF),
        })
    }

    /// Unweighted mean, summed in slice order.
    pub fn mean(items: &[Self]) -> Self {
        if items.is_empty() {
            return Self::default();
        }
        let n = items.len() as f64;
        let mut acc = Self::default();
        for m in items {
            acc.mrr_at_10 += m.mrr_at_10;
            acc.ndcg_at_10 += m.ndcg_at_10;
            acc.positive_entropy += m.positive_entropy;
            acc.margin_separation += m.margin_separation;
        }
        Self {
            mrr_at_10: acc.mrr_at_10 / n,
            ndcg_at_10: acc.ndcg_at_10 / n,
            positive_entropy: acc.positive_entropy / n,
            margin_separation: acc.margin_separation / n,
        }
    }
}

/// Indices sorted by descending score; equal scores are ordered by ascending id.
pub fn order_by_score(scores: &[f64], ids: &[&str]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(Ordering::Equal)
            .then_with(|| ids[a].cmp(ids[b]))
    });
    idx
}

/// Shannon entropy (base 2) of the student's probabilities restricted to
/// positives, with `0 log 0 = 0`. The positive mass is not renormalized.
pub fn positive_entropy(dist: &TopOneDistribution) -> f64 {
    dist.positives()
        .iter()
        .filter(|&&q| q > 0.0)
        .map(|&q| -q * q.log2())
        .sum()
}

/// Lowest positive probability minus highest negative probability among the
/// `k` most probable documents.
///
/// If the top `k` holds no positive the result is `-max_neg`; with no negative
/// it is `+min_pos`.
pub fn margin_separation(dist: &TopOneDistribution, k: usize) -> f64 {
    let probs = dist.probs();
    let mut idx: Vec<usize> = (0..probs.len()).collect();
    idx.sort_by(|&a, &b| {
        probs[b]
            .partial_cmp(&probs[a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut min_pos: Option<f64> = None;
    let mut max_neg: Option<f64> = None;
    for &i in idx.iter().take(k.max(1)) {
        let q = probs[i];
        if dist.is_positive(i) {
            min_pos = Some(min_pos.map_or(q, |m| m.min(q)));
        } else {
            max_neg = Some(max_neg.map_or(q, |m| m.max(q)));
        }
    }
    match (min_pos, max_neg) {
        (Some(p), Some(n)) => p - n,
        (Some(p), None) => p,
        (None, Some(n)) => -n,
        (None, None) => 0.0,
    }
}

/// Reciprocal rank of the first relevant item within the first `k`.
pub fn mrr_at_k(ranked_relevance: &[bool], k: usize) -> f64 {
    ranked_relevance
        .iter()
        .take(k)
        .position(|&r| r)
        .map_or(0.0, |pos| 1.0 / (pos + 1) as f64)
}

fn dcg(gains: impl Iterator<Item = f64>) -> f64 {
    gains
        .enumerate()
        .map(|(i, g)| g / ((i + 2) as f64).log2())
        .sum()
}

/// DCG@k over IDCG@k with a `log2(rank + 1)` discount. Zero when the ranking
/// is empty or carries no gain.
pub fn ndcg_at_k(ranked_gains: &[f64], k: usize) -> f64 {
    let mut ideal = ranked_gains.to_vec();
    ideal.sort_by(|a, b| b.partial_cmp(a).unwrap_or(Ordering::Equal));
    let idcg = dcg(ideal.into_iter().take(k));
    if idcg <= 0.0 {
        return 0.0;
    }
    dcg(ranked_gains.iter().copied().take(k)) / idcg
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dist(pos: &[f64], neg: &[f64]) -> TopOneDistribution {
        let mut probs = pos.to_vec();
        probs.extend_from_slice(neg);
        TopOneDistribution::from_probs(probs, pos.len()).unwrap()
    }

    // Remaining mass goes to one extra negative.
    fn raw(pos: &[f64], neg: &[f64]) -> TopOneDistribution {
        let mut probs = pos.to_vec();
        probs.extend_from_slice(neg);
        let rest = 1.0 - probs.iter().sum::<f64>();
        probs.push(rest);
        TopOneDistribution::from_probs(probs, pos.len()).unwrap()
    }

    #[test]
    fn entropy_values() {
        assert_abs_diff_eq!(
            positive_entropy(&dist(&[0.5], &[0.5])),
            0.5,
            epsilon = 1e-15
        );
        assert_eq!(positive_entropy(&dist(&[0.0], &[1.0])), 0.0);
        assert_abs_diff_eq!(
            positive_entropy(&dist(&[0.25, 0.25], &[0.5])),
            1.0,
            epsilon = 1e-15
        );
        let tiny = positive_entropy(&dist(&[1e-300], &[1.0 - 1e-300]));
        assert!((0.0..1e-290).contains(&tiny));
    }

    #[test]
    fn margin_values() {
        assert_abs_diff_eq!(
            margin_separation(&dist(&[0.6], &[0.3, 0.1]), 10),
            0.3,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            margin_separation(&dist(&[0.4, 0.35], &[0.25]), 10),
            0.10,
            epsilon = 1e-12
        );
        // Top-2 holds only negatives.
        let all_neg = dist(&[0.05], &[0.5, 0.45]);
        assert_abs_diff_eq!(margin_separation(&all_neg, 2), -0.5, epsilon = 1e-12);
        // Top-1 holds only a positive.
        assert_abs_diff_eq!(
            margin_separation(&dist(&[0.7], &[0.3]), 1),
            0.7,
            epsilon = 1e-12
        );
    }

    #[test]
    fn margin_respects_cutoff() {
        // Lowest positive sits at rank 12 and is ignored for k = 10.
        let neg = vec![0.059; 10];
        let d = dist(&[0.4, 0.01], &neg);
        assert_abs_diff_eq!(margin_separation(&d, 10), 0.4 - 0.059, epsilon = 1e-12);
        assert_abs_diff_eq!(margin_separation(&d, 20), 0.01 - 0.059, epsilon = 1e-12);
    }

    #[test]
    fn mrr_values() {
        assert_eq!(mrr_at_k(&[true, false], 10), 1.0);
        let mut labels = vec![false; 10];
        labels.push(true);
        assert_eq!(mrr_at_k(&labels, 10), 0.0);
        assert_eq!(mrr_at_k(&[false, false, true], 10), 1.0 / 3.0);
        assert_eq!(mrr_at_k(&[], 10), 0.0);
    }

    #[test]
    fn ndcg_values() {
        assert_abs_diff_eq!(
            ndcg_at_k(&[0.0, 1.0, 0.0], 10),
            1.0 / 3f64.log2(),
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(ndcg_at_k(&[0.0, 1.0, 0.0], 10), 0.6309, epsilon = 1e-4);
        assert_eq!(ndcg_at_k(&[1.0, 1.0, 0.0], 10), 1.0);
        assert_eq!(ndcg_at_k(&[], 10), 0.0);
        assert_eq!(ndcg_at_k(&[0.0, 0.0], 10), 0.0);
    }

    #[test]
    fn entropy_maximized_by_equal_positive_mass() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..2000 {
            let total: f64 = rng.random_range(0.05..0.95);
            let even = vec![total / 3.0; 3];
            let base = positive_entropy(&raw(&even, &[]));
            // Move mass between positives while keeping the total fixed.
            let a: f64 = rng.random_range(-1.0..1.0) * total / 3.0;
            let b: f64 = rng.random_range(-1.0..1.0) * (total / 3.0 - a.abs());
            let perturbed = vec![even[0] + a, even[1] - a + b, even[2] - b];
            assert!(perturbed.iter().all(|&q| q >= 0.0));
            assert!(positive_entropy(&raw(&perturbed, &[])) <= base + 1e-12);
        }
    }

    #[test]
    fn order_breaks_ties_by_id() {
        assert_eq!(order_by_score(&[2.0, 2.0], &["b", "a"]), vec![1, 0]);
        assert_eq!(
            order_by_score(&[1.0, 5.0, 3.0], &["x", "y", "z"]),
            vec![1, 2, 0]
        );
    }

    proptest! {
        #[test]
        fn margin_invariant_under_relabeling(
            raw_scores in prop::collection::vec(-5.0f64..5.0, 2..14),
            split in 1usize..13,
            seed in any::<u64>(),
        ) {
            let s = split.min(raw_scores.len() - 1).max(1);
            let d = TopOneDistribution::from_scores(&raw_scores, s).unwrap();
            // Shuffle within positives and within negatives; labels move with values.
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut pos = d.positives().to_vec();
            let mut neg = d.negatives().to_vec();
            use rand::seq::SliceRandom;
            pos.shuffle(&mut rng);
            neg.shuffle(&mut rng);
            let mut probs = pos;
            probs.extend(neg);
            let e = TopOneDistribution::from_probs(probs, s).unwrap();
            prop_assert_eq!(margin_separation(&d, 10), margin_separation(&e, 10));
        }

        #[test]
        fn metric_ranges(raw_scores in prop::collection::vec(-5.0f64..5.0, 2..14), split in 1usize..13) {
            let s = split.min(raw_scores.len() - 1).max(1);
            let d = TopOneDistribution::from_scores(&raw_scores, s).unwrap();
            let m = margin_separation(&d, 10);
            prop_assert!((-1.0..=1.0).contains(&m));
            prop_assert!(positive_entropy(&d) >= 0.0);
        }
    }
}
