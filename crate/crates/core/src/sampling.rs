//! Trimming, frame sampling, pseudo-PNR assignment and the analysis of the
//! time shift that sparse frame sampling introduces.
//!
//! A training clip is first trimmed to a window whose duration is uniform on
//! `[5, 8]` seconds; `n` frames are then sampled from the window and the
//! sampled frame nearest the annotated PNR becomes the hard temporal label.
//! Because the label is a sampled frame rather than the PNR itself, every
//! label carries a shift of up to half the sampling gap.

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::annotations::ClipAnnotation;
use crate::error::{Error, Result};

pub const DEFAULT_N_FRAMES: usize = 16;
pub const MIN_TRIM_SECONDS: f64 = 5.0;
pub const MAX_TRIM_SECONDS: f64 = 8.0;

/// Trials per independently seeded Monte-Carlo chunk. Fixed so results do not
/// depend on the number of worker threads.
const MC_CHUNK: u64 = 1 << 14;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrimmedRange {
    pub start_frame: u32,
    pub length_frames: u32,
}

impl TrimmedRange {
    pub fn full(num_frames: u32) -> Self {
        Self {
            start_frame: 0,
            length_frames: num_frames,
        }
    }

    pub fn end(&self) -> u32 {
        self.start_frame + self.length_frames
    }

    pub fn contains(&self, frame: u32) -> bool {
        frame >= self.start_frame && frame < self.end()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampledClip {
    pub clip_id: String,
    pub frame_indices: Vec<u32>,
    pub trimmed: TrimmedRange,
    pub pseudo_pnr_slot: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerKind {
    #[serde(rename = "even")]
    EvenlySpaced,
    #[serde(rename = "stratified")]
    StratifiedRandom,
    #[serde(rename = "random")]
    UniformRandom,
}

impl SamplerKind {
    pub const ALL: [SamplerKind; 3] = [
        SamplerKind::EvenlySpaced,
        SamplerKind::StratifiedRandom,
        SamplerKind::UniformRandom,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SamplerKind::EvenlySpaced => "even",
            SamplerKind::StratifiedRandom => "stratified",
            SamplerKind::UniformRandom => "random",
        }
    }
}

impl fmt::Display for SamplerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SamplerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "even" => Ok(SamplerKind::EvenlySpaced),
            "stratified" => Ok(SamplerKind::StratifiedRandom),
            "random" => Ok(SamplerKind::UniformRandom),
            other => Err(Error::Config(format!(
                "unknown sampler `{other}`, expected even, stratified or random"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShiftStats {
    pub mean_s: f64,
    pub std_s: f64,
    pub max_s: f64,
    pub trials: u64,
}

/// Trim length in frames for a window of `duration_s` seconds.
pub fn trim_length(duration_s: f64, fps: u32) -> u32 {
    (duration_s * f64::from(fps)).round() as u32
}

/// Draws a trimmed window: duration uniform on `[5, 8]` s, start uniform.
pub fn trim_clip(ann: &ClipAnnotation, rng: &mut crate::Rng) -> Result<TrimmedRange> {
    let duration = rng.random_range(MIN_TRIM_SECONDS..=MAX_TRIM_SECONDS);
    trim_clip_with_duration(ann, duration, rng)
}

/// Trims to a given duration. Positive clips get the window shifted by the
/// minimal amount needed to contain the PNR.
pub fn trim_clip_with_duration(
    ann: &ClipAnnotation,
    duration_s: f64,
    rng: &mut crate::Rng,
) -> Result<TrimmedRange> {
    let min_frames = trim_length(MIN_TRIM_SECONDS, ann.fps);
    if ann.num_frames < min_frames {
        return Err(Error::Untrimmable {
            clip_id: ann.clip_id.clone(),
            num_frames: ann.num_frames,
            min_frames,
        });
    }
    let length = trim_length(duration_s, ann.fps).clamp(1, ann.num_frames);
    let mut start = rng.random_range(0..=ann.num_frames - length);
    if let Some(pnr) = ann.pnr_frame.filter(|_| ann.has_state_change) {
        if pnr < start {
            start = pnr;
        } else if pnr >= start + length {
            start = pnr + 1 - length;
        }
    }
    Ok(TrimmedRange {
        start_frame: start,
        length_frames: length,
    })
}

/// Samples `n` strictly increasing frame indices inside the window.
pub fn sample_frames(
    trimmed: TrimmedRange,
    n: usize,
    kind: SamplerKind,
    rng: &mut crate::Rng,
) -> Result<Vec<u32>> {
    let len = trimmed.length_frames as usize;
    if n == 0 || n > len {
        return Err(Error::Sampling {
            n,
            window: trimmed.length_frames,
        });
    }
    let start = trimmed.start_frame;
    let out = match kind {
        SamplerKind::EvenlySpaced => (0..n)
            .map(|i| start + ((2 * i + 1) * len / (2 * n)) as u32)
            .collect(),
        SamplerKind::StratifiedRandom => (0..n)
            .map(|i| {
                let lo = i * len / n;
                let hi = (i + 1) * len / n;
                start + rng.random_range(lo..hi) as u32
            })
            .collect(),
        SamplerKind::UniformRandom => {
            let mut v: Vec<u32> = index::sample(rng, len, n)
                .into_iter()
                .map(|i| start + i as u32)
                .collect();
            v.sort_unstable();
            v
        }
    };
    Ok(out)
}

/// Slot of the sampled frame closest to `pnr_frame`; ties go to the earlier slot.
pub fn assign_pseudo_pnr(frame_indices: &[u32], pnr_frame: u32) -> usize {
    let mut best = 0;
    let mut best_dist = u32::MAX;
    for (slot, &f) in frame_indices.iter().enumerate() {
        let d = f.abs_diff(pnr_frame);
        if d < best_dist {
            best = slot;
            best_dist = d;
        }
    }
    best
}

/// Trims, samples and assigns the pseudo-PNR slot for one training clip.
pub fn sample_clip(
    ann: &ClipAnnotation,
    n: usize,
    kind: SamplerKind,
    rng: &mut crate::Rng,
) -> Result<SampledClip> {
    let trimmed = trim_clip(ann, rng)?;
    sample_clip_in(ann, trimmed, n, kind, rng)
}

/// Deterministic evaluation sampling: whole clip, evenly spaced frames.
pub fn eval_clip(ann: &ClipAnnotation, n: usize) -> Result<SampledClip> {
    // The even sampler never draws from the rng.
    let mut rng = crate::rng_for(0, 0);
    sample_clip_in(
        ann,
        TrimmedRange::full(ann.num_frames),
        n,
        SamplerKind::EvenlySpaced,
        &mut rng,
    )
}

fn sample_clip_in(
    ann: &ClipAnnotation,
    trimmed: TrimmedRange,
    n: usize,
    kind: SamplerKind,
    rng: &mut crate::Rng,
) -> Result<SampledClip> {
    let frame_indices = sample_frames(trimmed, n, kind, rng)?;
    let pseudo_pnr_slot = match (ann.has_state_change, ann.pnr_frame) {
        (true, Some(pnr)) => Some(assign_pseudo_pnr(&frame_indices, pnr)),
        _ => None,
    };
    Ok(SampledClip {
        clip_id: ann.clip_id.clone(),
        frame_indices,
        trimmed,
        pseudo_pnr_slot,
    })
}

/// `E[S] / (n · fps · 2)` with `E[S] = (s_min + s_max) / 2`: the expected
/// half sampling gap, in seconds. This is the worst-case distance from a PNR to
/// the nearest evenly spaced sample, averaged over trim lengths.
pub fn half_gap_expected_shift(n: usize, fps: f64, s_min: f64, s_max: f64) -> Result<f64> {
    if n == 0 {
        return Err(Error::Domain("n must be positive".into()));
    }
    if !fps.is_finite() || fps <= 0.0 {
        return Err(Error::Domain(format!("fps must be positive, got {fps}")));
    }
    if !s_min.is_finite() || s_min <= 0.0 || !s_max.is_finite() || s_max < s_min {
        return Err(Error::Domain(format!(
            "need 0 < s_min <= s_max, got s_min={s_min}, s_max={s_max}"
        )));
    }
    let mean_s = 0.5 * (s_min + s_max);
    Ok(mean_s / (n as f64 * fps * 2.0))
}

/// Trim law used by a Monte-Carlo shift experiment.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TrimSpec {
    /// Duration uniform on `[5, 8]` s within a clip of `num_frames`.
    Uniform { num_frames: u32 },
    /// Every window has exactly this many frames.
    Fixed { length_frames: u32 },
}

impl TrimSpec {
    pub fn bounds(&self, fps: u32) -> (u32, u32) {
        match *self {
            TrimSpec::Uniform { num_frames } => (
                trim_length(MIN_TRIM_SECONDS, fps).min(num_frames),
                trim_length(MAX_TRIM_SECONDS, fps).min(num_frames),
            ),
            TrimSpec::Fixed { length_frames } => (length_frames, length_frames),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShiftExperiment {
    pub sampler: SamplerKind,
    pub n: usize,
    pub fps: u32,
    pub trim: TrimSpec,
    pub trials: u64,
    pub seed: u64,
}

impl ShiftExperiment {
    pub fn new(sampler: SamplerKind, n: usize, fps: u32, trials: u64, seed: u64) -> Self {
        Self {
            sampler,
            n,
            fps,
            trim: TrimSpec::Uniform {
                num_frames: trim_length(MAX_TRIM_SECONDS, fps),
            },
            trials,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Domain("trials must be at least 1".into()));
        }
        if self.fps == 0 {
            return Err(Error::Domain("fps must be positive".into()));
        }
        let (lo, _) = self.trim.bounds(self.fps);
        if self.n == 0 || self.n > lo as usize {
            return Err(Error::Sampling {
                n: self.n,
                window: lo,
            });
        }
        Ok(())
    }

    /// Closed-form half-gap value for this experiment's trim law.
    pub fn half_gap_bound(&self) -> Result<f64> {
        let (lo, hi) = self.trim.bounds(self.fps);
        half_gap_expected_shift(self.n, f64::from(self.fps), f64::from(lo), f64::from(hi))
    }
}

#[derive(Default, Clone, Copy)]
struct ShiftAccum {
    sum: u64,
    sum_sq: u128,
    max: u64,
    count: u64,
}

impl ShiftAccum {
    fn merge(self, o: ShiftAccum) -> ShiftAccum {
        ShiftAccum {
            sum: self.sum + o.sum,
            sum_sq: self.sum_sq + o.sum_sq,
            max: self.max.max(o.max),
            count: self.count + o.count,
        }
    }
}

fn shift_trial(exp: &ShiftExperiment, rng: &mut crate::Rng) -> Result<u64> {
    let trimmed = match exp.trim {
        TrimSpec::Uniform { num_frames } => {
            let ann = ClipAnnotation {
                clip_id: String::new(),
                fps: exp.fps,
                num_frames,
                has_state_change: false,
                pnr_frame: None,
            };
            trim_clip(&ann, rng)?
        }
        TrimSpec::Fixed { length_frames } => TrimmedRange {
            start_frame: 0,
            length_frames,
        },
    };
    let pnr = trimmed.start_frame + rng.random_range(0..trimmed.length_frames);
    let frames = sample_frames(trimmed, exp.n, exp.sampler, rng)?;
    let slot = assign_pseudo_pnr(&frames, pnr);
    Ok(u64::from(frames[slot].abs_diff(pnr)))
}

/// Monte-Carlo estimate of the distance (seconds) between a uniformly placed
/// PNR and its nearest sampled frame.
///
/// Trials are split into fixed-size chunks, each with its own ChaCha stream
/// derived from `(seed, chunk)`. Distances are integer frame counts, so the
/// reduction is exact and independent of thread scheduling.
pub fn monte_carlo_shift(exp: &ShiftExperiment) -> Result<ShiftStats> {
    exp.validate()?;
    let chunks = exp.trials.div_ceil(MC_CHUNK);
    let acc = (0..chunks)
        .into_par_iter()
        .map(|c| -> Result<ShiftAccum> {
            let mut rng = crate::rng_for(exp.seed, c);
            let lo = c * MC_CHUNK;
            let hi = (lo + MC_CHUNK).min(exp.trials);
            let mut acc = ShiftAccum::default();
            for _ in lo..hi {
                let d = shift_trial(exp, &mut rng)?;
                acc.sum += d;
                acc.sum_sq += u128::from(d * d);
                acc.max = acc.max.max(d);
                acc.count += 1;
            }
            Ok(acc)
        })
        .try_reduce(ShiftAccum::default, |a, b| Ok(a.merge(b)))?;
    let fps = f64::from(exp.fps);
    let n = acc.count as f64;
    let mean = acc.sum as f64 / n;
    let var = (acc.sum_sq as f64 / n - mean * mean).max(0.0);
    Ok(ShiftStats {
        mean_s: mean / fps,
        std_s: var.sqrt() / fps,
        max_s: acc.max as f64 / fps,
        trials: acc.count,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng_for;

    fn neg(num_frames: u32) -> ClipAnnotation {
        ClipAnnotation {
            num_frames,
            ..ClipAnnotation::negative("n")
        }
    }

    #[test]
    fn five_second_trim_is_150_frames() {
        let mut rng = rng_for(1, 0);
        let t = trim_clip_with_duration(&neg(240), 5.0, &mut rng).unwrap();
        assert_eq!(t.length_frames, 150);
        assert!(t.end() <= 240);
    }

    #[test]
    fn eight_second_trim_is_whole_clip() {
        for seed in 0..20 {
            let mut rng = rng_for(seed, 0);
            let t = trim_clip_with_duration(&neg(240), 8.0, &mut rng).unwrap();
            assert_eq!(t, TrimmedRange::full(240));
        }
    }

    #[test]
    fn short_clip_is_untrimmable() {
        let mut rng = rng_for(1, 0);
        assert!(matches!(
            trim_clip(&neg(149), &mut rng),
            Err(Error::Untrimmable { min_frames: 150, .. })
        ));
        // between the minimum and the maximum the window is clamped to the clip
        let t = trim_clip_with_duration(&neg(200), 8.0, &mut rng).unwrap();
        assert_eq!(t, TrimmedRange::full(200));
    }

    #[test]
    fn trim_contains_pnr() {
        for pnr in [0, 1, 50, 119, 200, 239] {
            let ann = ClipAnnotation::positive("p", pnr);
            for seed in 0..200 {
                let mut rng = rng_for(seed, 3);
                let t = trim_clip(&ann, &mut rng).unwrap();
                assert!(t.contains(pnr), "{t:?} pnr {pnr}");
                assert!(t.end() <= 240);
                assert!((150..=240).contains(&t.length_frames));
            }
        }
    }

    #[test]
    fn even_sampler_closed_form() {
        let mut rng = rng_for(0, 0);
        let t = TrimmedRange {
            start_frame: 0,
            length_frames: 160,
        };
        let got = sample_frames(t, 16, SamplerKind::EvenlySpaced, &mut rng).unwrap();
        let want: Vec<u32> = (0..16).map(|i| 5 + 10 * i).collect();
        assert_eq!(got, want);
    }

    #[test]
    fn n_equal_to_window_takes_every_frame() {
        let t = TrimmedRange {
            start_frame: 30,
            length_frames: 20,
        };
        for kind in SamplerKind::ALL {
            let mut rng = rng_for(9, 0);
            let got = sample_frames(t, 20, kind, &mut rng).unwrap();
            assert_eq!(got, (30..50).collect::<Vec<_>>(), "{kind}");
        }
    }

    #[test]
    fn too_many_frames_is_an_error() {
        let mut rng = rng_for(0, 0);
        let t = TrimmedRange {
            start_frame: 0,
            length_frames: 10,
        };
        assert!(matches!(
            sample_frames(t, 11, SamplerKind::UniformRandom, &mut rng),
            Err(Error::Sampling { n: 11, window: 10 })
        ));
    }

    #[test]
    fn stratified_one_index_per_segment() {
        let t = TrimmedRange {
            start_frame: 7,
            length_frames: 197,
        };
        for seed in 0..1000 {
            let mut rng = rng_for(seed, 0);
            let got = sample_frames(t, 16, SamplerKind::StratifiedRandom, &mut rng).unwrap();
            for (i, &f) in got.iter().enumerate() {
                let lo = 7 + (i * 197 / 16) as u32;
                let hi = 7 + ((i + 1) * 197 / 16) as u32;
                assert!(f >= lo && f < hi, "seed {seed} slot {i}: {f} not in [{lo}, {hi})");
            }
        }
    }

    #[test]
    fn pseudo_pnr_examples() {
        assert_eq!(assign_pseudo_pnr(&[0, 10, 20], 12), 1);
        assert_eq!(assign_pseudo_pnr(&[0, 10, 20], 15), 1);
        assert_eq!(assign_pseudo_pnr(&[0, 10, 20], 20), 2);
        assert_eq!(assign_pseudo_pnr(&[0, 10, 20], 1000), 2);
        assert_eq!(assign_pseudo_pnr(&[5], 0), 0);
    }

    #[test]
    fn half_gap_examples() {
        assert_eq!(half_gap_expected_shift(16, 30.0, 150.0, 240.0).unwrap(), 0.203125);
        let one_gap = half_gap_expected_shift(16, 30.0, 16.0, 16.0).unwrap();
        assert!((one_gap - 1.0 / 60.0).abs() < 1e-15);
        let fixed = half_gap_expected_shift(16, 30.0, 160.0, 160.0).unwrap();
        assert!((fixed - 160.0 / 960.0).abs() < 1e-15);
    }

    #[test]
    fn half_gap_domain_errors() {
        assert!(half_gap_expected_shift(0, 30.0, 150.0, 240.0).is_err());
        assert!(half_gap_expected_shift(16, 0.0, 150.0, 240.0).is_err());
        assert!(half_gap_expected_shift(16, -30.0, 150.0, 240.0).is_err());
        assert!(half_gap_expected_shift(16, 30.0, 240.0, 150.0).is_err());
        assert!(half_gap_expected_shift(16, 30.0, 0.0, 150.0).is_err());
    }

    #[test]
    fn exhaustive_sampling_has_zero_shift() {
        for kind in SamplerKind::ALL {
            let exp = ShiftExperiment {
                trim: TrimSpec::Fixed { length_frames: 16 },
                ..ShiftExperiment::new(kind, 16, 30, 5000, 2)
            };
            let s = monte_carlo_shift(&exp).unwrap();
            assert_eq!(s.mean_s, 0.0);
            assert_eq!(s.max_s, 0.0);
        }
    }

    #[test]
    fn monte_carlo_is_reproducible_and_chunk_exact() {
        let exp = ShiftExperiment::new(SamplerKind::StratifiedRandom, 16, 30, 50_000, 7);
        let a = monte_carlo_shift(&exp).unwrap();
        let b = monte_carlo_shift(&exp).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.trials, 50_000);
        assert!(a.mean_s <= a.max_s);
    }

    #[test]
    fn monte_carlo_rejects_zero_trials() {
        let exp = ShiftExperiment::new(SamplerKind::EvenlySpaced, 16, 30, 0, 7);
        assert!(monte_carlo_shift(&exp).is_err());
    }
}
