//! Top-one probabilities: the softmax over one query's candidate scores.

use serde::{Deserialize, Serialize};

use crate::error::{CklError, Result};
use crate::instance::DistillationInstance;

/// Tolerance on `sum(probs) == 1` when building a distribution from raw
/// probabilities.
pub const SIMPLEX_TOLERANCE: f64 = 1e-9;

/// Probabilities over an instance's documents, positives first.
///
/// `probs[..num_positives]` belong to `D+`, the rest to `D-`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopOneDistribution {
    probs: Vec<f64>,
    num_positives: usize,
}

impl TopOneDistribution {
    /// Softmax of `scores`, with the first `num_positives` entries labelled
    /// positive.
    pub fn from_scores(scores: &[f64], num_positives: usize) -> Result<Self> {
        let probs = softmax(scores)?;
        Self::check_split(probs.len(), num_positives)?;
        Ok(Self {
            probs,
            num_positives,
        })
    }

    /// Wrap already-normalized probabilities. Entries must lie in `[0, 1]` and
    /// sum to one within [`SIMPLEX_TOLERANCE`].
    pub fn from_probs(probs: Vec<f64>, num_positives: usize) -> Result<Self> {
        if probs.is_empty() {
            return Err(CklError::EmptyInstance);
        }
        if let Some(&bad) = probs
            .iter()
            .find(|p| !p.is_finite() || **p < 0.0 || **p > 1.0)
        {
            return Err(CklError::InvalidScore(bad));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > SIMPLEX_TOLERANCE {
            return Err(CklError::InvalidConfig(format!(
                "probabilities sum to {total}, not 1"
            )));
        }
        Self::check_split(probs.len(), num_positives)?;
        Ok(Self {
            probs,
            num_positives,
        })
    }

    /// Teacher distribution `p` of an instance.
    pub fn teacher(inst: &DistillationInstance) -> Result<Self> {
        Self::from_scores(&inst.teacher_scores(), inst.num_positives())
    }

    /// Student distribution `q` of an instance.
    pub fn student(inst: &DistillationInstance) -> Result<Self> {
        Self::from_scores(&inst.student_scores(), inst.num_positives())
    }

    fn check_split(len: usize, num_positives: usize) -> Result<()> {
        if num_positives > len {
            return Err(CklError::Misaligned {
                expected: len,
                got: num_positives,
            });
        }
        Ok(())
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn num_positives(&self) -> usize {
        self.num_positives
    }

    pub fn num_negatives(&self) -> usize {
        self.probs.len() - self.num_positives
    }

    pub fn positives(&self) -> &[f64] {
        &self.probs[..self.num_positives]
    }

    pub fn negatives(&self) -> &[f64] {
        &self.probs[self.num_positives..]
    }

    pub fn is_positive(&self, idx: usize) -> bool {
        idx < self.num_positives
    }

    pub(crate) fn check_aligned(&self, other: &Self) -> Result<()> {
        if self.len() != other.len() || self.num_positives != other.num_positives {
            return Err(CklError::Misaligned {
                expected: self.len(),
                got: other.len(),
            });
        }
        Ok(())
    }
}

/// Overflow-safe softmax: `exp(s_i - max) / sum_j exp(s_j - max)`.
pub fn softmax(scores: &[f64]) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(CklError::EmptyInstance);
    }
    if let Some(&bad) = scores.iter().find(|s| !s.is_finite()) {
        return Err(CklError::InvalidScore(bad));
    }
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// Top-one distribution of a score vector whose first `num_positives`
/// entries are positives.
pub fn top_one_probability(scores: &[f64], num_positives: usize) -> Result<TopOneDistribution> {
    TopOneDistribution::from_scores(scores, num_positives)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn symmetric_and_constant_scores() {
        let d = top_one_probability(&[0.0, 0.0], 1).unwrap();
        assert_eq!(d.probs(), &[0.5, 0.5]);
        for c in [-700.0, -3.5, 0.0, 42.0, 800.0] {
            let d = top_one_probability(&[c; 4], 1).unwrap();
            for &p in d.probs() {
                assert_abs_diff_eq!(p, 0.25, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn two_point_value() {
        // e / (e + 1)
        let e = std::f64::consts::E;
        let d = top_one_probability(&[1.0, 0.0], 1).unwrap();
        assert_abs_diff_eq!(d.probs()[0], e / (e + 1.0), epsilon = 1e-15);
        assert_abs_diff_eq!(d.probs()[0], 0.7310586, epsilon = 1e-7);
        assert_abs_diff_eq!(d.probs()[1], 0.2689414, epsilon = 1e-7);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            top_one_probability(&[], 0),
            Err(CklError::EmptyInstance)
        ));
        assert!(matches!(
            top_one_probability(&[1.0, f64::INFINITY], 1),
            Err(CklError::InvalidScore(_))
        ));
        assert!(matches!(
            top_one_probability(&[1.0, f64::NAN], 1),
            Err(CklError::InvalidScore(_))
        ));
        assert!(TopOneDistribution::from_probs(vec![0.6, 0.6], 1).is_err());
        assert!(TopOneDistribution::from_probs(vec![1.0, 0.0], 1).is_ok());
    }

    proptest! {
        #[test]
        fn shift_invariant(scores in prop::collection::vec(-30.0f64..30.0, 1..12), c in -200.0f64..200.0) {
            let a = softmax(&scores).unwrap();
            let shifted: Vec<f64> = scores.iter().map(|s| s + c).collect();
            let b = softmax(&shifted).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
        }

        #[test]
        fn positive_and_normalized(scores in prop::collection::vec(-30.0f64..30.0, 1..12)) {
            let p = softmax(&scores).unwrap();
            prop_assert!(p.iter().all(|&x| x > 0.0 && x <= 1.0));
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        }
    }
}
