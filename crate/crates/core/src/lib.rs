//! Ranking-distillation loss laboratory.
//!
//! Contrastively-weighted KL divergence (CKL) plus the baseline losses it is
//! compared against (KL, a BKL reconstruction, MarginMSE, NLL and KL+NLL),
//! their closed-form gradients, Monte-Carlo checks of the CKL lower-bound
//! chain, and a small synthetic teacher/student benchmark.
//!
//! Every distribution in this crate is a *top-one* distribution: the softmax
//! of one query's candidate scores, positives first, negatives after.

pub mod beta;
pub mod bounds;
pub mod error;
pub mod gradients;
pub mod instance;
pub mod losses;
pub mod metrics;
pub mod params;
pub mod precise;
pub mod prob;
pub mod synth;

pub use beta::BetaAssignment;
pub use error::{CklError, Result};
pub use instance::{DistillationInstance, DocEntry};
pub use losses::LossKind;
pub use params::{BklParams, CklHyperparams};
pub use prob::{top_one_probability, TopOneDistribution};
