use std::io::Write;

use serde::{Deserialize, Serialize};

use super::data::{generate_dataset, SynthConfig};
use super::train::{train, TrainConfig};
use crate::error::{CklError, Result};
use crate::losses::LossKind;
use crate::metrics::RankingMetrics;
use crate::params::CklHyperparams;

pub const COMPARE_HEADER: &str = "cell,loss,gamma,alpha,seeds,\
mrr10_mean,mrr10_std,ndcg10_mean,ndcg10_std,entropy_mean,entropy_std,margin_mean,margin_std";

/// One trained configuration of the comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub label: String,
    pub loss: LossKind,
    /// Set for CKL cells.
    pub hyperparams: Option<CklHyperparams>,
    /// Held-out metrics of the final student, one per seed.
    pub per_seed: Vec<RankingMetrics>,
    /// Training-set metrics of the final student, one per seed.
    pub per_seed_train: Vec<RankingMetrics>,
    pub mean: RankingMetrics,
    pub std: RankingMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub seeds: Vec<u64>,
    pub cells: Vec<CellResult>,
}

impl ComparisonTable {
    pub fn cell(&self, label: &str) -> Option<&CellResult> {
        self.cells.iter().find(|c| c.label == label)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{COMPARE_HEADER}")?;
        for c in &self.cells {
            let (gamma, alpha) = match &c.hyperparams {
                Some(hp) => (hp.gamma.to_string(), hp.alpha.to_string()),
                None => (String::new(), String::new()),
            };
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                c.label,
                c.loss,
                gamma,
                alpha,
                c.per_seed.len(),
                c.mean.mrr_at_10,
                c.std.mrr_at_10,
                c.mean.ndcg_at_10,
                c.std.ndcg_at_10,
                c.mean.positive_entropy,
                c.std.positive_entropy,
                c.mean.margin_separation,
                c.std.margin_separation,
            )?;
        }
        Ok(())
    }
}

fn sample_std(items: &[RankingMetrics], mean: &RankingMetrics) -> RankingMetrics {
    if items.len() < 2 {
        return RankingMetrics::default();
    }
    let n = (items.len() - 1) as f64;
    let var = |f: fn(&RankingMetrics) -> f64| {
        (items.iter().map(|m| (f(m) - f(mean)).powi(2)).sum::<f64>() / n).sqrt()
    };
    RankingMetrics {
        mrr_at_10: var(|m| m.mrr_at_10),
        ndcg_at_10: var(|m| m.ndcg_at_10),
        positive_entropy: var(|m| m.positive_entropy),
        margin_separation: var(|m| m.margin_separation),
    }
}

fn cell_label(loss: LossKind, hp: Option<&CklHyperparams>) -> String {
    match hp {
        Some(hp) => format!("{loss}(gamma={},alpha={})", hp.gamma, hp.alpha),
        None => loss.to_string(),
    }
}

/// Train every loss (and every CKL grid point) on the same data and the same
/// starting weights for each seed.
///
/// For each seed the dataset is drawn with `rng_seed = seed`; if `train_cfg`
/// has a warm-up, it is run once and all cells start from its weights. CKL
/// cells take `gamma`/`alpha` from `hp_grid`, or `(5, 1)` when it is empty.
/// Final metrics are on the held-out split.
pub fn compare_losses(
    data: &SynthConfig,
    losses: &[LossKind],
    hp_grid: &[CklHyperparams],
    seeds: &[u64],
    train_cfg: &TrainConfig,
) -> Result<ComparisonTable> {
    if losses.len() < 2 {
        return Err(CklError::InvalidConfig(
            "compare needs at least two losses".into(),
        ));
    }
    if seeds.is_empty() {
        return Err(CklError::InvalidConfig(
            "compare needs at least one seed".into(),
        ));
    }
    let default_grid = [CklHyperparams {
        gamma: 5.0,
        alpha: 1.0,
        ..train_cfg.ckl
    }];
    let grid: &[CklHyperparams] = if hp_grid.is_empty() {
        &default_grid
    } else {
        hp_grid
    };
    for hp in grid {
        hp.validate()?;
    }

    let mut specs: Vec<(LossKind, Option<CklHyperparams>)> = Vec::new();
    for &loss in losses {
        if loss == LossKind::Ckl {
            specs.extend(grid.iter().map(|hp| (loss, Some(*hp))));
        } else {
            specs.push((loss, None));
        }
    }

    let mut per_cell: Vec<(Vec<RankingMetrics>, Vec<RankingMetrics>)> =
        vec![Default::default(); specs.len()];
    for &seed in seeds {
        let ds = generate_dataset(&SynthConfig {
            rng_seed: seed,
            ..data.clone()
        })?;
        let start = match &train_cfg.warmup {
            Some(w) => {
                let warm = TrainConfig {
                    loss: w.loss,
                    epochs: w.epochs,
                    warmup: None,
                    seed,
                    ..train_cfg.clone()
                };
                Some(train(&ds, &warm)?.weights)
            }
            None => train_cfg.initial_weights.clone(),
        };
        for (k, (loss, hp)) in specs.iter().enumerate() {
            let cfg = TrainConfig {
                loss: *loss,
                ckl: (*hp).unwrap_or(train_cfg.ckl),
                warmup: None,
                initial_weights: start.clone(),
                seed,
                ..train_cfg.clone()
            };
            let log = train(&ds, &cfg)?;
            per_cell[k].0.push(log.final_metrics);
            per_cell[k].1.push(log.final_train_metrics);
        }
    }

    let cells = specs
        .into_iter()
        .zip(per_cell)
        .map(|((loss, hp), (per_seed, per_seed_train))| {
            let mean = RankingMetrics::mean(&per_seed);
            CellResult {
                label: cell_label(loss, hp.as_ref()),
                loss,
                std: sample_std(&per_seed, &mean),
                hyperparams: hp,
                per_seed,
                per_seed_train,
                mean,
            }
        })
        .collect();
    Ok(ComparisonTable {
        seeds: seeds.to_vec(),
        cells,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> (SynthConfig, TrainConfig) {
        (
            SynthConfig {
                num_queries: 40,
                ..SynthConfig::default()
            },
            TrainConfig {
                epochs: 3,
                ..TrainConfig::default()
            },
        )
    }

    #[test]
    fn same_loss_twice_gives_identical_columns() {
        let (data, cfg) = tiny();
        let t = compare_losses(&data, &[LossKind::Kl, LossKind::Kl], &[], &[1, 2], &cfg).unwrap();
        assert_eq!(t.cells.len(), 2);
        assert_eq!(t.cells[0], t.cells[1]);
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let rows: Vec<&str> = text.lines().collect();
        assert_eq!(rows[0], COMPARE_HEADER);
        assert_eq!(rows[1], rows[2]);
    }

    #[test]
    fn empty_grid_defaults_to_five_one() {
        let (data, cfg) = tiny();
        let t = compare_losses(&data, &[LossKind::Kl, LossKind::Ckl], &[], &[3], &cfg).unwrap();
        let hp = t.cells[1].hyperparams.as_ref().unwrap();
        assert_eq!((hp.gamma, hp.alpha), (5.0, 1.0));
        assert_eq!(t.cells[1].label, "ckl(gamma=5,alpha=1)");
        assert_eq!(t.cells[1].std, RankingMetrics::default());
    }

    #[test]
    fn grid_expands_ckl_cells() {
        let (data, cfg) = tiny();
        let grid = [
            CklHyperparams::new(1.0, 0.0).unwrap(),
            CklHyperparams::new(3.0, 1.0).unwrap(),
        ];
        let t = compare_losses(
            &data,
            &[LossKind::Ckl, LossKind::MarginMse],
            &grid,
            &[0],
            &cfg,
        )
        .unwrap();
        let labels: Vec<&str> = t.cells.iter().map(|c| c.label.as_str()).collect();
        assert_eq!(
            labels,
            ["ckl(gamma=1,alpha=0)", "ckl(gamma=3,alpha=1)", "margin_mse"]
        );
    }

    #[test]
    fn preconditions() {
        let (data, cfg) = tiny();
        assert!(compare_losses(&data, &[LossKind::Kl], &[], &[0], &cfg).is_err());
        assert!(compare_losses(&data, &[LossKind::Kl, LossKind::Ckl], &[], &[], &cfg).is_err());
    }
}
