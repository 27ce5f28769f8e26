use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{CklError, Result};
use crate::instance::{DistillationInstance, DocEntry};
use crate::metrics::order_by_score;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub num_queries: usize,
    /// `s`
    pub num_positives: usize,
    /// `m`
    pub num_negatives: usize,
    pub feature_dim: usize,
    /// Std-dev of Gaussian noise added to teacher scores.
    pub teacher_noise_sigma: f64,
    /// Fraction of queries whose teacher ranking is inverted.
    pub teacher_corruption_rate: f64,
    /// Per-query deviation of the relevance direction from the shared one.
    pub query_direction_noise: f64,
    /// Latent-score bonus added to positives on top of their selection.
    pub relevance_gap: f64,
    pub heldout_fraction: f64,
    pub rng_seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_queries: 240,
            num_positives: 3,
            num_negatives: 12,
            feature_dim: 16,
            teacher_noise_sigma: 0.5,
            teacher_corruption_rate: 0.0,
            query_direction_noise: 0.3,
            relevance_gap: 2.5,
            heldout_fraction: 0.25,
            rng_seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(CklError::InvalidConfig(msg));
        if self.num_queries < 2 {
            return bad("num_queries must be >= 2".into());
        }
        if self.num_positives < 1 || self.num_negatives < 1 {
            return bad("every query needs >= 1 positive and >= 1 negative".into());
        }
        if self.feature_dim < 1 {
            return bad("feature_dim must be >= 1".into());
        }
        if !(self.teacher_noise_sigma >= 0.0 && self.teacher_noise_sigma.is_finite()) {
            return bad(format!(
                "teacher_noise_sigma must be >= 0, got {}",
                self.teacher_noise_sigma
            ));
        }
        for (name, v) in [
            ("teacher_corruption_rate", self.teacher_corruption_rate),
            ("heldout_fraction", self.heldout_fraction),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} must lie in [0, 1], got {v}"));
            }
        }
        if !(self.query_direction_noise >= 0.0 && self.relevance_gap >= 0.0) {
            return bad("query_direction_noise and relevance_gap must be >= 0".into());
        }
        let heldout = self.heldout_count();
        if heldout == 0 || heldout >= self.num_queries {
            return bad("heldout_fraction must leave both splits non-empty".into());
        }
        Ok(())
    }

    pub fn heldout_count(&self) -> usize {
        (self.num_queries as f64 * self.heldout_fraction).round() as usize
    }
}

/// One query: its instance, per-document features aligned positives first,
/// and whether its teacher was corrupted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthQuery {
    pub instance: DistillationInstance,
    pub features: Vec<Vec<f64>>,
    pub corrupted: bool,
}

impl SynthQuery {
    /// Student scores `features . weights`, written into the instance.
    pub fn rescore(&mut self, weights: &[f64]) -> Result<()> {
        let scores: Vec<f64> = self.features.iter().map(|x| dot(x, weights)).collect();
        self.instance.set_student_scores(&scores)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthDataset {
    pub config: SynthConfig,
    pub train: Vec<SynthQuery>,
    pub heldout: Vec<SynthQuery>,
}

impl SynthDataset {
    pub fn instances(&self) -> impl Iterator<Item = &DistillationInstance> {
        self.train
            .iter()
            .chain(self.heldout.iter())
            .map(|q| &q.instance)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normal_vec(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect()
}

fn normalize(mut v: Vec<f64>) -> Vec<f64> {
    let norm = dot(&v, &v).sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

/// Draw a dataset.
///
/// A shared unit relevance direction is perturbed per query. Document features
/// are standard normal; the `s` documents with the highest latent score
/// (projection on the query direction) become positives and are pushed a
/// further `relevance_gap` along it. Teacher scores are the latent scores plus
/// Gaussian noise; corrupted queries have their teacher scores reflected
/// around their mean, inverting the teacher ranking. Student scores start at 0.
pub fn generate_dataset(cfg: &SynthConfig) -> Result<SynthDataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let dim = cfg.feature_dim;
    let shared = normalize(normal_vec(&mut rng, dim));
    let n = cfg.num_positives + cfg.num_negatives;

    let mut queries = Vec::with_capacity(cfg.num_queries);
    for qi in 0..cfg.num_queries {
        let jitter = normal_vec(&mut rng, dim);
        let direction = normalize(
            shared
                .iter()
                .zip(&jitter)
                .map(|(u, e)| u + cfg.query_direction_noise * e)
                .collect(),
        );
        let mut features: Vec<Vec<f64>> = (0..n).map(|_| normal_vec(&mut rng, dim)).collect();
        let latent: Vec<f64> = features.iter().map(|x| dot(x, &direction)).collect();
        let ids: Vec<String> = (0..n).map(|k| format!("q{qi:04}-d{k:02}")).collect();
        let id_refs: Vec<&str> = ids.iter().map(String::as_str).collect();
        let order = order_by_score(&latent, &id_refs);
        let (pos_idx, neg_idx) = order.split_at(cfg.num_positives);
        for &k in pos_idx {
            for (x, u) in features[k].iter_mut().zip(&direction) {
                *x += cfg.relevance_gap * u;
            }
        }

        let corrupted = rng.random_bool(cfg.teacher_corruption_rate);
        let mut teacher: Vec<f64> = features
            .iter()
            .map(|x| {
                dot(x, &direction) + cfg.teacher_noise_sigma * rng.sample::<f64, _>(StandardNormal)
            })
            .collect();
        if corrupted {
            let mean = teacher.iter().sum::<f64>() / n as f64;
            teacher.iter_mut().for_each(|t| *t = 2.0 * mean - *t);
        }

        let entry = |k: usize| DocEntry::new(ids[k].clone(), teacher[k], 0.0);
        let instance = DistillationInstance::new(
            format!("q{qi:04}"),
            pos_idx.iter().map(|&k| entry(k)).collect(),
            neg_idx.iter().map(|&k| entry(k)).collect(),
        )?;
        let aligned = pos_idx
            .iter()
            .chain(neg_idx)
            .map(|&k| features[k].clone())
            .collect();
        queries.push(SynthQuery {
            instance,
            features: aligned,
            corrupted,
        });
    }

    let heldout = queries.split_off(cfg.num_queries - cfg.heldout_count());
    Ok(SynthDataset {
        config: cfg.clone(),
        train: queries,
        heldout,
    })
}
