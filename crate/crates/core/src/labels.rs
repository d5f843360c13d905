//! Supervised targets for the two heads, plus label smoothing, mixup and
//! temporal cutmix.
//!
//! Temporal classes `0..N` are sampled-frame slots; class `N` means "no state
//! change". OSCC class 0 is "no change", class 1 is "change".

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::annotations::ClipAnnotation;
use crate::error::{Error, Result};
use crate::sampling::SampledClip;

pub const OSCC_NO_CHANGE: usize = 0;
pub const OSCC_CHANGE: usize = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetPair {
    pub oscc: Vec<f64>,
    pub temporal: Vec<f64>,
}

impl TargetPair {
    pub fn hard(change: bool, slot: Option<usize>, n_frames: usize) -> Self {
        let mut oscc = vec![0.0; 2];
        let mut temporal = vec![0.0; n_frames + 1];
        if change {
            oscc[OSCC_CHANGE] = 1.0;
            temporal[slot.unwrap_or(n_frames)] = 1.0;
        } else {
            oscc[OSCC_NO_CHANGE] = 1.0;
            temporal[n_frames] = 1.0;
        }
        Self { oscc, temporal }
    }

    pub fn n_frames(&self) -> usize {
        self.temporal.len() - 1
    }

    fn mix(&self, other: &TargetPair, lambda: f64) -> TargetPair {
        TargetPair {
            oscc: convex(&self.oscc, &other.oscc, lambda),
            temporal: convex(&self.temporal, &other.temporal, lambda),
        }
    }

    pub fn smoothed(&self, eps: f64) -> Result<TargetPair> {
        Ok(TargetPair {
            oscc: smooth(&self.oscc, eps)?,
            temporal: smooth(&self.temporal, eps)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MixConfig {
    pub mixup_alpha: f64,
    pub cutmix_alpha: f64,
    pub smoothing_eps: f64,
    /// Probability of using cutmix instead of mixup for a batch when both are enabled.
    pub switch_prob: f64,
}

impl Default for MixConfig {
    fn default() -> Self {
        Self {
            mixup_alpha: 0.8,
            cutmix_alpha: 1.0,
            smoothing_eps: 0.1,
            switch_prob: 0.5,
        }
    }
}

impl MixConfig {
    pub fn disabled() -> Self {
        Self {
            mixup_alpha: 0.0,
            cutmix_alpha: 0.0,
            smoothing_eps: 0.0,
            switch_prob: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v >= 0.0 && v.is_finite();
        if !ok(self.mixup_alpha) || !ok(self.cutmix_alpha) {
            return Err(Error::Config("mixup/cutmix alpha must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.smoothing_eps) {
            return Err(Error::Config(format!(
                "smoothing_eps must lie in [0, 1), got {}",
                self.smoothing_eps
            )));
        }
        if !(0.0..=1.0).contains(&self.switch_prob) {
            return Err(Error::Config("switch_prob must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// One training example: `[n_frames × dim]` features and its targets.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub clip_id: String,
    pub features: Vec<f64>,
    pub targets: TargetPair,
}

impl Sample {
    pub fn n_frames(&self) -> usize {
        self.targets.n_frames()
    }

    pub fn dim(&self) -> usize {
        self.features.len() / self.n_frames().max(1)
    }
}

pub fn build_targets(sampled: &SampledClip, ann: &ClipAnnotation) -> Result<TargetPair> {
    let n = sampled.frame_indices.len();
    if ann.has_state_change {
        let slot = sampled
            .pseudo_pnr_slot
            .filter(|&s| s < n)
            .ok_or_else(|| Error::Consistency(ann.clip_id.clone()))?;
        Ok(TargetPair::hard(true, Some(slot), n))
    } else {
        Ok(TargetPair::hard(false, None, n))
    }
}

/// `(1 − eps) · target + eps / K`, evaluated as `t + eps · (1/K − t)`.
pub fn smooth(target: &[f64], eps: f64) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&eps) {
        return Err(Error::Domain(format!("smoothing eps must lie in [0, 1), got {eps}")));
    }
    if target.is_empty() {
        return Err(Error::Domain("empty target vector".into()));
    }
    if eps == 0.0 {
        return Ok(target.to_vec());
    }
    let uniform = 1.0 / target.len() as f64;
    Ok(target.iter().map(|t| t + eps * (uniform - t)).collect())
}

fn convex(a: &[f64], b: &[f64], lambda: f64) -> Vec<f64> {
    a.iter()
        .zip(b)
        .map(|(x, y)| lambda * x + (1.0 - lambda) * y)
        .collect()
}

fn check_batch(batch: &[Sample]) -> Result<()> {
    if batch.len() < 2 {
        return Err(Error::Batch(format!(
            "mixing needs at least 2 samples, got {}",
            batch.len()
        )));
    }
    let (len, nt) = (batch[0].features.len(), batch[0].targets.temporal.len());
    for s in batch {
        if s.features.len() != len || s.targets.temporal.len() != nt || s.targets.oscc.len() != 2 {
            return Err(Error::Batch(format!(
                "sample `{}` does not match the batch shape",
                s.clip_id
            )));
        }
    }
    Ok(())
}

/// Mixup of `a` toward `b` with weight `lambda` on `a`.
pub fn mixup_pair(a: &Sample, b: &Sample, lambda: f64) -> Sample {
    if lambda == 1.0 {
        return a.clone();
    }
    Sample {
        clip_id: a.clip_id.clone(),
        features: convex(&a.features, &b.features, lambda),
        targets: a.targets.mix(&b.targets, lambda),
    }
}

/// Replaces frames `start..start + len` of `a` with those of `b`; targets are
/// mixed with `λ' = 1 − len / N`.
pub fn cutmix_pair(a: &Sample, b: &Sample, start: usize, len: usize) -> Sample {
    let n = a.n_frames();
    if len == 0 {
        return a.clone();
    }
    let dim = a.dim();
    let mut features = a.features.clone();
    features[start * dim..(start + len) * dim]
        .copy_from_slice(&b.features[start * dim..(start + len) * dim]);
    let lambda = 1.0 - len as f64 / n as f64;
    Sample {
        clip_id: a.clip_id.clone(),
        features,
        targets: a.targets.mix(&b.targets, lambda),
    }
}

fn beta_draw(alpha: f64, rng: &mut crate::Rng) -> Result<f64> {
    if alpha == 0.0 {
        return Ok(1.0);
    }
    let beta = Beta::new(alpha, alpha).map_err(|e| Error::Config(format!("beta({alpha}): {e}")))?;
    Ok(beta.sample(rng))
}

fn partners(n: usize, rng: &mut crate::Rng) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    perm
}

/// Mixes each sample with a partner from a random permutation,
/// `λ ~ Beta(alpha, alpha)` drawn per sample.
pub fn mixup(batch: &[Sample], alpha: f64, rng: &mut crate::Rng) -> Result<Vec<Sample>> {
    check_batch(batch)?;
    let perm = partners(batch.len(), rng);
    let mut out = Vec::with_capacity(batch.len());
    for (i, &j) in perm.iter().enumerate() {
        let lambda = beta_draw(alpha, rng)?;
        out.push(if i == j {
            batch[i].clone()
        } else {
            mixup_pair(&batch[i], &batch[j], lambda)
        });
    }
    Ok(out)
}

/// Temporal cutmix: a contiguous block of `round((1 − λ) · N)` frames is taken
/// from the partner sample.
pub fn cutmix_temporal(batch: &[Sample], alpha: f64, rng: &mut crate::Rng) -> Result<Vec<Sample>> {
    check_batch(batch)?;
    let perm = partners(batch.len(), rng);
    let n = batch[0].n_frames();
    let mut out = Vec::with_capacity(batch.len());
    for (i, &j) in perm.iter().enumerate() {
        let lambda = beta_draw(alpha, rng)?;
        let len = (((1.0 - lambda) * n as f64).round() as usize).min(n);
        let start = rng.random_range(0..=n - len);
        out.push(if i == j {
            batch[i].clone()
        } else {
            cutmix_pair(&batch[i], &batch[j], start, len)
        });
    }
    Ok(out)
}

/// Applies the batch-level augmentation recipe: mixup or cutmix (switching
/// with `switch_prob` when both are enabled), then label smoothing.
pub fn augment_batch(batch: Vec<Sample>, cfg: &MixConfig, rng: &mut crate::Rng) -> Result<Vec<Sample>> {
    let use_mixup = cfg.mixup_alpha > 0.0;
    let use_cutmix = cfg.cutmix_alpha > 0.0;
    let mixed = if batch.len() < 2 || !(use_mixup || use_cutmix) {
        batch
    } else {
        let cut = match (use_mixup, use_cutmix) {
            (true, true) => rng.random::<f64>() < cfg.switch_prob,
            (false, true) => true,
            _ => false,
        };
        if cut {
            cutmix_temporal(&batch, cfg.cutmix_alpha, rng)?
        } else {
            mixup(&batch, cfg.mixup_alpha, rng)?
        }
    };
    mixed
        .into_iter()
        .map(|mut s| {
            s.targets = s.targets.smoothed(cfg.smoothing_eps)?;
            Ok(s)
        })
        .collect()
}
