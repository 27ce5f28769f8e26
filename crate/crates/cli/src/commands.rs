use std::fmt::Write as _;
use std::fs::File;
use std::io::BufReader;

use anyhow::{anyhow, bail, Context};
use ckl_core::bounds::verify_bound_chain;
use ckl_core::gradients::{curve_sweep, gradcheck, write_curves_csv, Branch, CurveRow};
use ckl_core::instance::read_jsonl;
use ckl_core::losses::ckl_weights;
use ckl_core::synth::{compare_losses, generate_dataset, train, WarmupConfig};
use ckl_core::{BetaAssignment, DistillationInstance, DocEntry, LossKind, TopOneDistribution};

use crate::config::RunConfig;
use crate::output::{emit, json_bytes, write_atomic};
use crate::{Cli, Command, HpArgs, SynthArgs, TrainerArgs};

pub enum Outcome {
    Passed,
    Failed(String),
}

fn check(ok: bool, msg: impl FnOnce() -> String) -> Outcome {
    if ok {
        Outcome::Passed
    } else {
        Outcome::Failed(msg())
    }
}

fn apply_hp(cfg: &mut RunConfig, hp: &HpArgs) {
    if let Some(g) = hp.gamma {
        cfg.hp.gamma = g;
    }
    if let Some(a) = hp.alpha {
        cfg.hp.alpha = a;
    }
}

fn apply_synth(cfg: &mut RunConfig, s: &SynthArgs) {
    if let Some(c) = s.corruption {
        cfg.synth.teacher_corruption_rate = c;
    }
    if let Some(sigma) = s.sigma {
        cfg.synth.teacher_noise_sigma = sigma;
    }
    if let Some(n) = s.queries {
        cfg.synth.num_queries = n;
    }
}

fn apply_trainer(cfg: &mut RunConfig, t: &TrainerArgs) -> anyhow::Result<()> {
    let g = &mut cfg.train;
    if let Some(e) = t.epochs {
        g.epochs = e;
    }
    if let Some(lr) = t.learning_rate {
        g.learning_rate = lr;
    }
    if let Some(b) = t.batch_size {
        g.batch_size = b;
    }
    if let Some(p) = t.beta_update_period {
        g.beta_update_period = Some(p);
    }
    match (t.warmup_loss, t.warmup_epochs) {
        (Some(loss), Some(epochs)) => g.warmup = Some(WarmupConfig { loss, epochs }),
        (None, None) => {}
        _ => bail!("--warmup-loss and --warmup-epochs must be given together"),
    }
    Ok(())
}

pub fn run(cli: Cli) -> anyhow::Result<Outcome> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Gradcheck(a) => {
            if let Some(d) = a.draws {
                cfg.gradcheck.draws = d;
            }
            if let Some(s) = a.seed {
                cfg.gradcheck.seed = s;
            }
            cfg.validate()?;
            let summary = gradcheck(cfg.gradcheck.draws, cfg.gradcheck.seed)?;
            emit(a.out.out.as_deref(), &json_bytes(&summary)?)?;
            Ok(check(summary.passed, || {
                format!(
                    "max relative error {:e}, ratio identity error {:e}",
                    summary.max_rel_error, summary.ratio_identity_max_error
                )
            }))
        }
        Command::Bounds(a) => {
            if let Some(n) = a.samples {
                cfg.bounds.samples = n;
            }
            if let Some(s) = a.s_max {
                cfg.bounds.s_max = s;
            }
            if let Some(s) = a.seed {
                cfg.bounds.seed = s;
            }
            cfg.validate()?;
            let b = &cfg.bounds;
            let report = verify_bound_chain(b.samples, b.s_max, b.seed)?;
            emit(a.out.out.as_deref(), &json_bytes(&report)?)?;
            Ok(check(report.violations == 0, || {
                format!(
                    "{} of {} samples violate the bound chain",
                    report.violations, report.samples_tested
                )
            }))
        }
        Command::Weights(a) => {
            apply_hp(&mut cfg, &a.hp);
            cfg.validate()?;
            let inst = match &a.instances {
                Some(path) => load_instance(path, a.query.as_deref())?,
                None => demo_instance(&cfg)?,
            };
            let (csv, max_beta) = weights_table(&inst, &cfg)?;
            emit(a.out.out.as_deref(), csv.as_bytes())?;
            let alpha = cfg.hp.alpha;
            Ok(check(
                alpha == 0.0 && max_beta == 0.0 || max_beta < alpha,
                || format!("|beta| = {max_beta} is not below alpha = {alpha}"),
            ))
        }
        Command::Curves(a) => {
            if let Some(g) = a.gamma {
                cfg.hp.gamma = g;
            }
            if let Some(b) = a.beta {
                cfg.curves.beta = b;
            }
            if let Some(l) = a.lambda {
                cfg.bkl.lambda = l;
            }
            cfg.validate()?;
            let c = &cfg.curves;
            let rows = curve_sweep(
                cfg.hp.gamma,
                c.beta,
                cfg.bkl.lambda,
                &c.q_grid,
                &c.ratio_grid,
            )?;
            let mut bytes = Vec::new();
            write_curves_csv(&mut bytes, &rows)?;
            emit(a.out.out.as_deref(), &bytes)?;
            Ok(check(curves_monotone(&rows), || {
                "g_CKL is not monotone in p/q on some branch".to_string()
            }))
        }
        Command::Train(a) => {
            apply_hp(&mut cfg, &a.hp);
            apply_synth(&mut cfg, &a.synth);
            apply_trainer(&mut cfg, &a.trainer)?;
            if let Some(loss) = a.loss {
                cfg.train.loss = loss;
            }
            if let Some(seed) = a.seed {
                cfg.train.seed = seed;
                cfg.synth.rng_seed = seed;
            }
            cfg.validate()?;
            let ds = generate_dataset(&cfg.synth)?;
            let log = train(&ds, &cfg.train_config())?;
            let mut csv = Vec::new();
            log.write_csv(&mut csv)?;
            emit(a.out.out.as_deref(), &csv)?;
            if let Some(path) = &a.summary {
                write_atomic(path, &json_bytes(&log)?)?;
            }
            let alpha = cfg.hp.alpha;
            let uses_beta = cfg.train.loss == LossKind::Ckl && alpha > 0.0;
            Ok(check(!uses_beta || log.max_abs_beta < alpha, || {
                format!("|beta| reached {} with alpha = {alpha}", log.max_abs_beta)
            }))
        }
        Command::Compare(a) => {
            apply_synth(&mut cfg, &a.synth);
            apply_trainer(&mut cfg, &a.trainer)?;
            if let Some(losses) = a.losses {
                cfg.compare.losses = losses;
            }
            if let Some(seeds) = a.seeds {
                cfg.compare.seeds = seeds;
            }
            if a.hp.gamma.is_some() || a.hp.alpha.is_some() {
                apply_hp(&mut cfg, &a.hp);
                cfg.compare.hp_grid = vec![cfg.hp];
            }
            cfg.validate()?;
            let c = &cfg.compare;
            let table = compare_losses(
                &cfg.synth,
                &c.losses,
                &c.hp_grid,
                &c.seeds,
                &cfg.train_config(),
            )?;
            let mut csv = Vec::new();
            table.write_csv(&mut csv)?;
            emit(a.out.out.as_deref(), &csv)?;
            if let Some(path) = &a.summary {
                write_atomic(path, &json_bytes(&table)?)?;
            }
            Ok(Outcome::Passed)
        }
    }
}

/// Demo instance whose student scores are `ln q` of the configured grid.
fn demo_instance(cfg: &RunConfig) -> anyhow::Result<DistillationInstance> {
    let w = &cfg.weights;
    let doc = |prefix: &str, i: usize, q: f64| -> anyhow::Result<DocEntry> {
        if !(q > 0.0 && q <= 1.0) {
            bail!("weight-table probabilities must lie in (0, 1], got {q}");
        }
        Ok(DocEntry::new(format!("{prefix}{i}"), 0.0, q.ln()))
    };
    let positives = w
        .positives
        .iter()
        .enumerate()
        .map(|(i, &q)| doc("pos", i, q))
        .collect::<anyhow::Result<_>>()?;
    let negatives = w
        .negatives
        .iter()
        .enumerate()
        .map(|(i, &q)| doc("neg", i, q))
        .collect::<anyhow::Result<_>>()?;
    let total: f64 = w.positives.iter().chain(&w.negatives).sum();
    if (total - 1.0).abs() > 1e-9 {
        bail!("weight-table probabilities must sum to 1, got {total}");
    }
    Ok(DistillationInstance::new("demo", positives, negatives)?)
}

fn load_instance(
    path: &std::path::Path,
    query: Option<&str>,
) -> anyhow::Result<DistillationInstance> {
    let file = File::open(path).with_context(|| format!("cannot read {}", path.display()))?;
    let instances = read_jsonl(BufReader::new(file))
        .with_context(|| format!("malformed instances in {}", path.display()))?;
    match query {
        Some(id) => instances
            .into_iter()
            .find(|i| i.query_id == id)
            .ok_or_else(|| anyhow!("query {id:?} not found in {}", path.display())),
        None => instances
            .into_iter()
            .next()
            .ok_or_else(|| anyhow!("{} contains no instances", path.display())),
    }
}

/// `doc_index,kind,q,weight` rows, positives first, plus the largest `|beta|`.
fn weights_table(inst: &DistillationInstance, cfg: &RunConfig) -> anyhow::Result<(String, f64)> {
    let q = TopOneDistribution::student(inst)?;
    let betas = BetaAssignment::from_student(inst, cfg.hp.alpha)?;
    let weights = ckl_weights(&q, &betas.aligned(inst)?, &cfg.hp)?.all();
    let mut csv = String::from("doc_index,kind,q,weight\n");
    for (i, (&qi, w)) in q.probs().iter().zip(&weights).enumerate() {
        let kind = if q.is_positive(i) {
            "positive"
        } else {
            "negative"
        };
        writeln!(csv, "{i},{kind},{qi},{w}")?;
    }
    Ok((csv, betas.max_abs()))
}

/// Positive-branch `g_CKL` increases and negative-branch `g_CKL` decreases
/// along `p/q` for every `q`.
fn curves_monotone(rows: &[CurveRow]) -> bool {
    rows.windows(2).all(|w| {
        let (a, b) = (&w[0], &w[1]);
        if a.branch != b.branch || a.q != b.q {
            return true;
        }
        match a.branch {
            Branch::Positive => b.g_ckl > a.g_ckl,
            Branch::Negative => b.g_ckl < a.g_ckl,
        }
    })
}
