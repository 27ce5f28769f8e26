use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::data::{dot, SynthDataset, SynthQuery};
use crate::beta;
use crate::error::{CklError, Result};
use crate::gradients::loss_grad_scores;
use crate::losses::{loss_on_scores, LossConfig, LossKind};
use crate::metrics::RankingMetrics;
use crate::params::{BklParams, CklHyperparams};

pub const TRAINLOG_HEADER: &str = "step,loss,margin,entropy,mrr10,ndcg10";

/// Linear scorer `score = weights . features`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudentModel {
    pub weights: Vec<f64>,
    pub learning_rate: f64,
}

impl StudentModel {
    pub fn zeros(dim: usize, learning_rate: f64) -> Result<Self> {
        Self::new(vec![0.0; dim], learning_rate)
    }

    pub fn new(weights: Vec<f64>, learning_rate: f64) -> Result<Self> {
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(CklError::InvalidConfig(
                "student weights must be finite".into(),
            ));
        }
        if !(learning_rate >= 0.0 && learning_rate.is_finite()) {
            return Err(CklError::InvalidConfig(format!(
                "learning_rate must be finite and >= 0, got {learning_rate}"
            )));
        }
        Ok(Self {
            weights,
            learning_rate,
        })
    }

    pub fn score(&self, features: &[f64]) -> f64 {
        dot(features, &self.weights)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WarmupConfig {
    pub loss: LossKind,
    pub epochs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub ckl: CklHyperparams,
    pub bkl: BklParams,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Steps between bias refreshes; `None` means a tenth of an epoch.
    pub beta_update_period: Option<usize>,
    /// Rank only the top-k student candidates when refreshing biases.
    pub rank_pool_k: Option<usize>,
    pub warmup: Option<WarmupConfig>,
    /// Seeds the per-epoch shuffle.
    pub seed: u64,
    /// Initial weights; zeros when absent.
    pub initial_weights: Option<Vec<f64>>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss: LossKind::Ckl,
            ckl: CklHyperparams::default(),
            bkl: BklParams::default(),
            epochs: 60,
            learning_rate: 0.5,
            batch_size: 32,
            beta_update_period: None,
            rank_pool_k: Some(beta::DEFAULT_RANK_POOL_K),
            warmup: None,
            seed: 0,
            initial_weights: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.ckl.validate()?;
        if self.batch_size == 0 {
            return Err(CklError::InvalidConfig("batch_size must be >= 1".into()));
        }
        if self.beta_update_period == Some(0) {
            return Err(CklError::InvalidConfig(
                "beta_update_period must be >= 1".into(),
            ));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(CklError::InvalidConfig(format!(
                "learning_rate must be finite and >= 0, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }

    pub fn loss_config(&self, kind: LossKind) -> LossConfig {
        LossConfig::new(kind).with_ckl(self.ckl).with_bkl(self.bkl)
    }

    pub fn steps_per_epoch(&self, num_train: usize) -> usize {
        num_train.div_ceil(self.batch_size.max(1))
    }

    pub fn effective_beta_period(&self, num_train: usize) -> usize {
        self.beta_update_period
            .unwrap_or_else(|| (self.steps_per_epoch(num_train) / 10).max(1))
    }
}

/// Metrics after one optimizer step, averaged over the training queries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    /// Mean loss of the batch that produced this step.
    pub loss: f64,
    pub margin: f64,
    pub entropy: f64,
    pub mrr10: f64,
    pub ndcg10: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub metrics: RankingMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRunLog {
    pub loss: LossKind,
    /// Steps `1..=warmup_steps` belong to the warm-up phase.
    pub warmup_steps: usize,
    pub beta_update_period: usize,
    pub records: Vec<StepRecord>,
    /// Held-out metrics at the end of every epoch of the main phase.
    pub heldout: Vec<EpochRecord>,
    pub final_train_metrics: RankingMetrics,
    /// Held-out metrics of the final student.
    pub final_metrics: RankingMetrics,
    /// Largest `|beta|` produced by any refresh.
    pub max_abs_beta: f64,
    pub weights: Vec<f64>,
}

impl TrainRunLog {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{TRAINLOG_HEADER}")?;
        for r in &self.records {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                r.step, r.loss, r.margin, r.entropy, r.mrr10, r.ndcg10
            )?;
        }
        Ok(())
    }
}

/// Mean loss over `batch` and its gradient with respect to the weights.
///
/// `betas[i]` are the negative-aligned biases of `batch[i]` (read by CKL only).
pub fn batch_loss_and_grad(
    cfg: &LossConfig,
    batch: &[&SynthQuery],
    betas: &[&[f64]],
    weights: &[f64],
) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(CklError::EmptyInstance);
    }
    if betas.len() != batch.len() {
        return Err(CklError::Misaligned {
            expected: batch.len(),
            got: betas.len(),
        });
    }
    let dim = weights.len();
    let per_query: Vec<(f64, Vec<f64>)> = batch
        .par_iter()
        .zip(betas.par_iter())
        .map(|(q, b)| {
            let inst = &q.instance;
            let teacher = inst.teacher_scores();
            let student: Vec<f64> = q.features.iter().map(|x| dot(x, weights)).collect();
            let s = inst.num_positives();
            let loss = loss_on_scores(cfg, &teacher, &student, s, b)?;
            let g = loss_grad_scores(cfg, &teacher, &student, s, b)?;
            let mut gw = vec![0.0; dim];
            for (gk, x) in g.iter().zip(&q.features) {
                for (acc, xj) in gw.iter_mut().zip(x) {
                    *acc += gk * xj;
                }
            }
            Ok((loss, gw))
        })
        .collect::<Result<_>>()?;

    let n = batch.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; dim];
    for (l, gw) in &per_query {
        loss += l;
        for (acc, g) in grad.iter_mut().zip(gw) {
            *acc += g;
        }
    }
    grad.iter_mut().for_each(|g| *g /= n);
    Ok((loss / n, grad))
}

/// Mean metrics of `queries` under `weights`.
pub fn evaluate(queries: &[SynthQuery], weights: &[f64]) -> Result<RankingMetrics> {
    let per: Vec<RankingMetrics> = queries
        .par_iter()
        .map(|q| {
            let mut q = q.clone();
            q.rescore(weights)?;
            RankingMetrics::for_instance(&q.instance)
        })
        .collect::<Result<_>>()?;
    Ok(RankingMetrics::mean(&per))
}

struct Phase<'a> {
    kind: LossKind,
    epochs: usize,
    cfg: &'a TrainConfig,
    log_heldout: bool,
}

struct State {
    model: StudentModel,
    step: usize,
    records: Vec<StepRecord>,
    heldout: Vec<EpochRecord>,
    max_abs_beta: f64,
}

fn refresh_betas(
    train: &[SynthQuery],
    weights: &[f64],
    alpha: f64,
    rank_pool_k: Option<usize>,
) -> Result<Vec<Vec<f64>>> {
    train
        .par_iter()
        .map(|q| {
            let mut q = q.clone();
            q.rescore(weights)?;
            beta::refresh(&q.instance, alpha, rank_pool_k)?.aligned(&q.instance)
        })
        .collect()
}

fn run_phase(
    ds: &SynthDataset,
    phase: &Phase<'_>,
    state: &mut State,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    let cfg = phase.cfg;
    let loss_cfg = cfg.loss_config(phase.kind);
    let train = &ds.train;
    let period = cfg.effective_beta_period(train.len());
    let uses_beta = phase.kind == LossKind::Ckl;
    let mut betas: Vec<Vec<f64>> = train
        .iter()
        .map(|q| vec![0.0; q.instance.num_negatives()])
        .collect();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut phase_step = 0usize;

    for epoch in 1..=phase.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(cfg.batch_size) {
            if uses_beta && beta::is_update_step(phase_step, period) {
                betas = refresh_betas(train, &state.model.weights, cfg.ckl.alpha, cfg.rank_pool_k)?;
                let m = betas.iter().flatten().fold(0.0f64, |m, b| m.max(b.abs()));
                state.max_abs_beta = state.max_abs_beta.max(m);
            }
            let batch: Vec<&SynthQuery> = chunk.iter().map(|&i| &train[i]).collect();
            let batch_betas: Vec<&[f64]> = chunk.iter().map(|&i| betas[i].as_slice()).collect();
            let (loss, grad) =
                batch_loss_and_grad(&loss_cfg, &batch, &batch_betas, &state.model.weights)?;
            state.step += 1;
            phase_step += 1;
            if !loss.is_finite() {
                return Err(CklError::Diverged {
                    step: state.step,
                    loss,
                });
            }
            let lr = state.model.learning_rate;
            for (w, g) in state.model.weights.iter_mut().zip(&grad) {
                *w -= lr * g;
            }
            if state.model.weights.iter().any(|w| !w.is_finite()) {
                return Err(CklError::Diverged {
                    step: state.step,
                    loss,
                });
            }
            let m = evaluate(train, &state.model.weights)?;
            state.records.push(StepRecord {
                step: state.step,
                loss,
                margin: m.margin_separation,
                entropy: m.positive_entropy,
                mrr10: m.mrr_at_10,
                ndcg10: m.ndcg_at_10,
            });
        }
        if phase.log_heldout {
            state.heldout.push(EpochRecord {
                epoch,
                metrics: evaluate(&ds.heldout, &state.model.weights)?,
            });
        }
    }
    Ok(())
}

/// Mini-batch SGD of a linear student on `ds`.
///
/// An optional warm-up phase trains with its own loss first; the target loss
/// then continues from the warmed-up weights. Under CKL the biases are
/// recomputed for every training query from the current student on steps
/// `0, period, 2 period, ...` counted from the start of the CKL phase and held
/// fixed in between. Every step is logged with metrics over the training set.
pub fn train(ds: &SynthDataset, cfg: &TrainConfig) -> Result<TrainRunLog> {
    cfg.validate()?;
    let dim = ds.config.feature_dim;
    let weights = match &cfg.initial_weights {
        Some(w) if w.len() != dim => {
            return Err(CklError::Misaligned {
                expected: dim,
                got: w.len(),
            })
        }
        Some(w) => w.clone(),
        None => vec![0.0; dim],
    };
    let mut state = State {
        model: StudentModel::new(weights, cfg.learning_rate)?,
        step: 0,
        records: Vec::new(),
        heldout: Vec::new(),
        max_abs_beta: 0.0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    if let Some(w) = &cfg.warmup {
        let phase = Phase {
            kind: w.loss,
            epochs: w.epochs,
            cfg,
            log_heldout: false,
        };
        run_phase(ds, &phase, &mut state, &mut rng)?;
    }
    let warmup_steps = state.step;
    let phase = Phase {
        kind: cfg.loss,
        epochs: cfg.epochs,
        cfg,
        log_heldout: true,
    };
    run_phase(ds, &phase, &mut state, &mut rng)?;

    Ok(TrainRunLog {
        loss: cfg.loss,
        warmup_steps,
        beta_update_period: cfg.effective_beta_period(ds.train.len()),
        records: state.records,
        heldout: state.heldout,
        final_train_metrics: evaluate(&ds.train, &state.model.weights)?,
        final_metrics: evaluate(&ds.heldout, &state.model.weights)?,
        max_abs_beta: state.max_abs_beta,
        weights: state.model.weights,
    })
}
