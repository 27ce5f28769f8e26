//! Loss hyperparameters.

use serde::{Deserialize, Serialize};

use crate::error::{CklError, Result};

/// Clamp applied to student probabilities before any logarithm.
pub const DEFAULT_PROB_EPSILON: f64 = 1e-12;

/// Hyperparameters of the contrastively-weighted KL loss.
///
/// `gamma` is the shared weight exponent. `alpha` scales the rank-derived
/// exponent bias of negatives; keeping `alpha <= gamma - 1` guarantees every
/// negative exponent `gamma - beta` stays at or above one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CklHyperparams {
    pub gamma: f64,
    pub alpha: f64,
    /// Training steps between two recomputations of the exponent biases.
    pub beta_update_period: usize,
    pub prob_clamp_epsilon: f64,
}

impl Default for CklHyperparams {
    /// `(gamma, alpha) = (5, 1)`, the setting used for the retriever/reranker
    /// pipeline.
    fn default() -> Self {
        Self {
            gamma: 5.0,
            alpha: 1.0,
            beta_update_period: 2000,
            prob_clamp_epsilon: DEFAULT_PROB_EPSILON,
        }
    }
}

impl CklHyperparams {
    pub fn new(gamma: f64, alpha: f64) -> Result<Self> {
        let hp = Self {
            gamma,
            alpha,
            ..Self::default()
        };
        hp.validate()?;
        Ok(hp)
    }

    pub fn with_period(mut self, period: usize) -> Self {
        self.beta_update_period = period;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !self.gamma.is_finite() || self.gamma < 1.0 {
            return Err(CklError::InvalidConfig(format!(
                "gamma must be >= 1, got {}",
                self.gamma
            )));
        }
        if !self.alpha.is_finite() || self.alpha < 0.0 || self.alpha > self.gamma - 1.0 {
            return Err(CklError::InvalidConfig(format!(
                "alpha must lie in [0, gamma - 1] = [0, {}], got {}",
                self.gamma - 1.0,
                self.alpha
            )));
        }
        if self.beta_update_period == 0 {
            return Err(CklError::InvalidConfig(
                "beta_update_period must be positive".into(),
            ));
        }
        if !(self.prob_clamp_epsilon > 0.0 && self.prob_clamp_epsilon < 0.5) {
            return Err(CklError::InvalidConfig(format!(
                "prob_clamp_epsilon must lie in (0, 0.5), got {}",
                self.prob_clamp_epsilon
            )));
        }
        Ok(())
    }
}

/// Regularization weight of the reconstructed BKL loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BklParams {
    pub lambda: f64,
}

impl Default for BklParams {
    fn default() -> Self {
        Self { lambda: 0.1 }
    }
}

impl BklParams {
    pub fn new(lambda: f64) -> Result<Self> {
        if !lambda.is_finite() || lambda < 0.0 {
            return Err(CklError::InvalidConfig(format!(
                "lambda must be finite and non-negative, got {lambda}"
            )));
        }
        Ok(Self { lambda })
    }
}
