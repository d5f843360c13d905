//! Multi-task fine-tuning harness for object state-change classification (OSCC)
//! and point-of-no-return (PNR) temporal localization.
//!
//! The crate covers the whole pipeline at desk scale:
//!
//! - [`annotations`]: clip manifests, binary per-frame feature files and a
//!   synthetic generator that stands in for real egocentric clips.
//! - [`sampling`]: trim distribution, frame samplers, pseudo-PNR assignment
//!   and analytic / Monte-Carlo analysis of the sampling-induced time shift.
//! - [`labels`]: OSCC and `N + 1`-way temporal targets, label smoothing,
//!   mixup and temporal cutmix.
//! - [`model`]: a residual MLP trunk with drop path, mean pooling and two
//!   linear heads, with exact analytic gradients.
//! - [`optim`]: AdamW, warmup + cosine schedule, linear lr scaling and
//!   layer-wise lr decay.
//! - [`train`]: the multi-objective fine-tuning loop with best-checkpoint
//!   selection.
//! - [`eval`]: multi-view logit averaging, metrics and baseline predictors.
//! - [`cli`]: the `ego-pnr` command-line entry point.

pub mod annotations;
pub mod cli;
pub mod error;
pub mod eval;
pub mod labels;
pub mod model;
pub mod optim;
pub mod sampling;
pub mod train;

pub use error::{Error, Result};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Deterministic random stream used throughout the crate.
pub type Rng = ChaCha8Rng;

/// Builds the crate's RNG from a seed and an independent stream id.
pub fn rng_for(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
