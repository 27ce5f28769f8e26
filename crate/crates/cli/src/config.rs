//! JSON run configuration. Every group is optional; command-line flags
//! override whatever the file sets.

use std::path::Path;

use anyhow::{bail, Context};
use ckl_core::gradients::{default_q_grid, default_ratio_grid};
use ckl_core::synth::{SynthConfig, TrainConfig, WarmupConfig};
use ckl_core::{BklParams, CklHyperparams, LossKind};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub hp: CklHyperparams,
    pub bkl: BklParams,
    pub gradcheck: GradcheckGroup,
    pub bounds: BoundsGroup,
    pub weights: WeightsGroup,
    pub curves: CurvesGroup,
    pub synth: SynthConfig,
    pub train: TrainGroup,
    pub compare: CompareGroup,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradcheckGroup {
    pub draws: usize,
    pub seed: u64,
}

impl Default for GradcheckGroup {
    fn default() -> Self {
        Self {
            draws: 1000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoundsGroup {
    pub samples: usize,
    pub s_max: usize,
    pub seed: u64,
}

impl Default for BoundsGroup {
    fn default() -> Self {
        Self {
            samples: 100_000,
            s_max: 2,
            seed: 7,
        }
    }
}

/// Student probabilities of the weight table, positives then negatives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WeightsGroup {
    pub positives: Vec<f64>,
    pub negatives: Vec<f64>,
}

impl Default for WeightsGroup {
    fn default() -> Self {
        Self {
            positives: vec![0.30, 0.20, 0.10],
            negatives: vec![0.15, 0.10, 0.06, 0.05, 0.04],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CurvesGroup {
    pub beta: f64,
    pub q_grid: Vec<f64>,
    pub ratio_grid: Vec<f64>,
}

impl Default for CurvesGroup {
    fn default() -> Self {
        Self {
            beta: 0.0,
            q_grid: default_q_grid(),
            ratio_grid: default_ratio_grid(),
        }
    }
}

/// Trainer settings; loss hyperparameters come from the `hp`/`bkl` groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainGroup {
    pub loss: LossKind,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub beta_update_period: Option<usize>,
    pub rank_pool_k: Option<usize>,
    pub warmup: Option<WarmupConfig>,
    pub seed: u64,
}

impl Default for TrainGroup {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            loss: t.loss,
            epochs: t.epochs,
            learning_rate: t.learning_rate,
            batch_size: t.batch_size,
            beta_update_period: t.beta_update_period,
            rank_pool_k: t.rank_pool_k,
            warmup: t.warmup,
            seed: t.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompareGroup {
    pub losses: Vec<LossKind>,
    /// CKL grid; empty means `(5, 1)`.
    pub hp_grid: Vec<CklHyperparams>,
    pub seeds: Vec<u64>,
}

impl Default for CompareGroup {
    fn default() -> Self {
        Self {
            losses: vec![LossKind::Kl, LossKind::Ckl],
            hp_grid: Vec::new(),
            seeds: (0..5).collect(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("invalid config {}", path.display()))
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            loss: t.loss,
            ckl: self.hp,
            bkl: self.bkl,
            epochs: t.epochs,
            learning_rate: t.learning_rate,
            batch_size: t.batch_size,
            beta_update_period: t.beta_update_period,
            rank_pool_k: t.rank_pool_k,
            warmup: t.warmup.clone(),
            seed: t.seed,
            initial_weights: None,
        }
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.hp.validate()?;
        BklParams::new(self.bkl.lambda)?;
        if self.gradcheck.draws == 0 {
            bail!("gradcheck.draws must be >= 1");
        }
        if self.bounds.samples == 0 || self.bounds.s_max == 0 {
            bail!("bounds.samples and bounds.s_max must be >= 1");
        }
        let w = &self.weights;
        if w.positives.is_empty() || w.negatives.is_empty() {
            bail!("weights needs at least one positive and one negative probability");
        }
        if !self.curves.beta.is_finite() {
            bail!("curves.beta must be finite");
        }
        self.synth.validate()?;
        self.train_config().validate()?;
        if self.compare.losses.len() < 2 {
            bail!("compare.losses needs at least two entries");
        }
        if self.compare.seeds.is_empty() {
            bail!("compare.seeds must not be empty");
        }
        for hp in &self.compare.hp_grid {
            hp.validate()?;
        }
        Ok(())
    }
}
