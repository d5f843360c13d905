//! Multi-view inference, metrics and baseline predictors.

use serde::{Deserialize, Serialize};

use crate::annotations::{ClipAnnotation, DatasetManifest, FeatureStore};
use crate::error::{Error, Result};
use crate::labels::OSCC_CHANGE;
use crate::model::{forward_eval, softmax, Logits, ModelParams};
use crate::sampling;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub clip_id: String,
    pub oscc_prob_change: f64,
    /// Absent when the temporal head predicts the "no state change" class.
    pub pnr_time_s: Option<f64>,
}

impl Prediction {
    pub fn predicts_change(&self) -> bool {
        self.oscc_prob_change > 0.5
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub method: String,
    pub oscc_accuracy: Option<f64>,
    pub abs_temporal_error_mean_s: Option<f64>,
    pub n_clips: usize,
    pub n_state_change_clips: usize,
    /// Clips where both ground truth and prediction carry a PNR time.
    pub n_temporal_pairs: usize,
    /// Ground truth has a PNR, prediction does not.
    pub n_missed_pnr: usize,
    /// Prediction has a PNR, ground truth does not.
    pub n_spurious_pnr: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub baselines: Vec<MetricsReport>,
}

/// Entrywise mean of raw logits across views.
pub fn aggregate_views(views: &[Logits]) -> Result<Logits> {
    let first = views
        .first()
        .ok_or_else(|| Error::Shape("at least one view is required".into()))?;
    let (ko, kt) = (first.oscc.len(), first.temporal.len());
    let mut oscc = vec![0.0; ko];
    let mut temporal = vec![0.0; kt];
    for v in views {
        if v.oscc.len() != ko || v.temporal.len() != kt {
            return Err(Error::Shape(format!(
                "view logits ({}, {}) differ from ({ko}, {kt})",
                v.oscc.len(),
                v.temporal.len()
            )));
        }
        for (a, b) in oscc.iter_mut().zip(&v.oscc) {
            *a += b;
        }
        for (a, b) in temporal.iter_mut().zip(&v.temporal) {
            *a += b;
        }
    }
    let inv = 1.0 / views.len() as f64;
    oscc.iter_mut().for_each(|v| *v *= inv);
    temporal.iter_mut().for_each(|v| *v *= inv);
    Ok(Logits { oscc, temporal })
}

/// First index of the maximum.
fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Turns aggregated logits into a prediction on the given sampling grid.
pub fn decode(clip_id: &str, logits: &Logits, frame_indices: &[u32], fps: f64) -> Result<Prediction> {
    if logits.temporal.len() != frame_indices.len() + 1 {
        return Err(Error::Shape(format!(
            "{} temporal classes for a grid of {} frames",
            logits.temporal.len(),
            frame_indices.len()
        )));
    }
    let prob = softmax(&logits.oscc)[OSCC_CHANGE];
    let cls = argmax(&logits.temporal);
    let pnr_time_s = frame_indices.get(cls).map(|&f| f64::from(f) / fps);
    Ok(Prediction {
        clip_id: clip_id.to_string(),
        oscc_prob_change: prob,
        pnr_time_s,
    })
}

/// Eval-mode forward on each view, raw-logit averaging and decoding.
pub fn predict_views(
    params: &ModelParams,
    clip_id: &str,
    views: &[Vec<f64>],
    frame_indices: &[u32],
    fps: f64,
) -> Result<Prediction> {
    let logits = views
        .iter()
        .map(|v| forward_eval(params, v))
        .collect::<Result<Vec<_>>>()?;
    decode(clip_id, &aggregate_views(&logits)?, frame_indices, fps)
}

/// Predicts one clip from its first `views` feature views using the
/// deterministic evaluation grid (whole clip, evenly spaced).
pub fn predict_clip(
    params: &ModelParams,
    ann: &ClipAnnotation,
    store: &FeatureStore,
    views: usize,
) -> Result<Prediction> {
    let n = params.config.n_frames;
    let grid = sampling::eval_clip(ann, n)?;
    let views = views.clamp(1, store.views());
    let inputs = (0..views)
        .map(|v| store.gather(&ann.clip_id, v, &grid.frame_indices))
        .collect::<Result<Vec<_>>>()?;
    predict_views(params, &ann.clip_id, &inputs, &grid.frame_indices, f64::from(ann.fps))
}

pub fn predict_manifest(
    params: &ModelParams,
    manifest: &DatasetManifest,
    store: &FeatureStore,
    views: usize,
) -> Result<Vec<Prediction>> {
    manifest
        .clips
        .iter()
        .map(|c| predict_clip(params, c, store, views))
        .collect()
}

pub fn abs_temporal_error(pred_time_s: f64, gt_frame: u32, fps: f64) -> f64 {
    (pred_time_s - f64::from(gt_frame) / fps).abs()
}

/// Scores predictions against labels. Temporal error averages only clips where
/// both sides carry a PNR; one-sided cases are counted separately.
pub fn score(method: &str, manifest: &DatasetManifest, preds: &[Prediction]) -> Result<MetricsReport> {
    if preds.len() != manifest.clips.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} clips",
            preds.len(),
            manifest.clips.len()
        )));
    }
    let mut report = MetricsReport {
        method: method.to_string(),
        n_clips: manifest.clips.len(),
        ..MetricsReport::default()
    };
    let mut correct = 0usize;
    let mut err_sum = 0.0;
    for (clip, pred) in manifest.clips.iter().zip(preds) {
        if clip.clip_id != pred.clip_id {
            return Err(Error::Shape(format!(
                "prediction for `{}` does not line up with clip `{}`",
                pred.clip_id, clip.clip_id
            )));
        }
        if clip.has_state_change {
            report.n_state_change_clips += 1;
        }
        if pred.predicts_change() == clip.has_state_change {
            correct += 1;
        }
        match (clip.pnr_frame, pred.pnr_time_s) {
            (Some(gt), Some(t)) => {
                err_sum += abs_temporal_error(t, gt, f64::from(clip.fps));
                report.n_temporal_pairs += 1;
            }
            (Some(_), None) => report.n_missed_pnr += 1,
            (None, Some(_)) => report.n_spurious_pnr += 1,
            (None, None) => {}
        }
    }
    if report.n_clips > 0 {
        report.oscc_accuracy = Some(correct as f64 / report.n_clips as f64);
    }
    if report.n_temporal_pairs > 0 {
        report.abs_temporal_error_mean_s = Some(err_sum / report.n_temporal_pairs as f64);
    }
    Ok(report)
}

/// Predicts "change" for every clip; accuracy equals the positive fraction.
pub fn baseline_always_positive(manifest: &DatasetManifest) -> MetricsReport {
    let n = manifest.clips.len();
    let pos = manifest.clips.iter().filter(|c| c.has_state_change).count();
    MetricsReport {
        method: "always_positive".into(),
        oscc_accuracy: (n > 0).then(|| pos as f64 / n as f64),
        n_clips: n,
        n_state_change_clips: pos,
        ..MetricsReport::default()
    }
}

/// Predicts the PNR at `fraction · duration` for every state-change clip.
pub fn baseline_fixed_fraction(manifest: &DatasetManifest, fraction: f64) -> Result<MetricsReport> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::Domain(format!("fraction must lie in [0, 1], got {fraction}")));
    }
    let mut report = MetricsReport {
        method: if fraction == 0.5 {
            "always_center".into()
        } else {
            format!("fixed_fraction_{fraction}")
        },
        n_clips: manifest.clips.len(),
        ..MetricsReport::default()
    };
    let mut err_sum = 0.0;
    for clip in &manifest.clips {
        if let (true, Some(gt)) = (clip.has_state_change, clip.pnr_frame) {
            report.n_state_change_clips += 1;
            report.n_temporal_pairs += 1;
            err_sum += abs_temporal_error(fraction * clip.duration_s(), gt, f64::from(clip.fps));
        }
    }
    if report.n_temporal_pairs > 0 {
        report.abs_temporal_error_mean_s = Some(err_sum / report.n_temporal_pairs as f64);
    }
    Ok(report)
}

/// Always-positive, always-center and fixed-0.45 baselines on one manifest.
pub fn standard_baselines(manifest: &DatasetManifest) -> Vec<MetricsReport> {
    vec![
        baseline_always_positive(manifest),
        baseline_fixed_fraction(manifest, 0.5).expect("0.5 is in range"),
        baseline_fixed_fraction(manifest, 0.45).expect("0.45 is in range"),
    ]
}

/// Full model evaluation: predictions plus metrics with baselines attached.
pub fn evaluate(
    params: &ModelParams,
    manifest: &DatasetManifest,
    store: &FeatureStore,
    views: usize,
) -> Result<(Vec<Prediction>, MetricsReport)> {
    let preds = predict_manifest(params, manifest, store, views)?;
    let mut report = score("model", manifest, &preds)?;
    report.baselines = standard_baselines(manifest);
    Ok((preds, report))
}

/// Per-clip CSV: id, label, predicted probability, times and error.
pub fn per_clip_csv(manifest: &DatasetManifest, preds: &[Prediction]) -> String {
    let fmt_opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
    let mut out = String::from("clip_id,has_state_change,oscc_prob_change,pred_pnr_s,gt_pnr_s,abs_error_s\n");
    for (clip, pred) in manifest.clips.iter().zip(preds) {
        let gt = clip.pnr_time_s();
        let err = match (clip.pnr_frame, pred.pnr_time_s) {
            (Some(f), Some(t)) => Some(abs_temporal_error(t, f, f64::from(clip.fps))),
            _ => None,
        };
        out.push_str(&format!(
            "{},{},{:.6},{},{},{}\n",
            clip.clip_id,
            clip.has_state_change,
            pred.oscc_prob_change,
            fmt_opt(pred.pnr_time_s),
            fmt_opt(gt),
            fmt_opt(err)
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotations::{ClipAnnotation, Split};

    fn logits(o: &[f64], t: &[f64]) -> Logits {
        Logits {
            oscc: o.to_vec(),
            temporal: t.to_vec(),
        }
    }

    fn manifest(clips: Vec<ClipAnnotation>) -> DatasetManifest {
        DatasetManifest {
            split: Split::Val,
            feature_dim: 4,
            views_per_clip: 3,
            clips,
        }
    }

    #[test]
    fn aggregate_examples() {
        let v = logits(&[0.1, -2.0], &[1.0, 2.0, 3.0]);
        let agg = aggregate_views(&[v.clone(), v.clone(), v.clone()]).unwrap();
        for (a, b) in agg.oscc.iter().chain(&agg.temporal).zip(v.oscc.iter().chain(&v.temporal)) {
            assert!((a - b).abs() < 1e-15);
        }
        let a = logits(&[1.0, 3.0], &[0.0]);
        let b = logits(&[3.0, 1.0], &[0.0]);
        assert_eq!(aggregate_views(&[a.clone(), b.clone()]).unwrap().oscc, vec![2.0, 2.0]);
        assert_eq!(
            aggregate_views(&[a.clone(), b.clone()]).unwrap(),
            aggregate_views(&[b, a]).unwrap()
        );
    }

    #[test]
    fn aggregate_rejects_mismatch_and_empty() {
        assert!(aggregate_views(&[]).is_err());
        let a = logits(&[1.0, 3.0], &[0.0]);
        let b = logits(&[1.0, 3.0], &[0.0, 1.0]);
        assert!(matches!(aggregate_views(&[a, b]), Err(Error::Shape(_))));
    }

    #[test]
    fn decode_no_change_class_has_no_time() {
        let grid: Vec<u32> = (0..16).map(|i| 7 + 15 * i).collect();
        let mut t = vec![0.0; 17];
        t[16] = 5.0;
        let p = decode("a", &logits(&[0.0, 0.0], &t), &grid, 30.0).unwrap();
        assert_eq!(p.pnr_time_s, None);
        assert_eq!(p.oscc_prob_change, 0.5);
    }

    #[test]
    fn decode_slot_zero_on_full_grid() {
        let ann = ClipAnnotation::negative("a");
        let grid = sampling::eval_clip(&ann, 16).unwrap();
        assert_eq!(grid.frame_indices[0], 7);
        let mut t = vec![0.0; 17];
        t[0] = 1.0;
        let p = decode("a", &logits(&[0.0, 1.0], &t), &grid.frame_indices, 30.0).unwrap();
        assert_eq!(p.pnr_time_s, Some(7.0 / 30.0));
    }

    #[test]
    fn temporal_error_examples() {
        assert_eq!(abs_temporal_error(2.0, 60, 30.0), 0.0);
        assert_eq!(abs_temporal_error(3.0, 60, 30.0), 1.0);
        let (a, b) = (1.5, 2.5);
        assert_eq!(
            abs_temporal_error(a, (b * 30.0) as u32, 30.0),
            abs_temporal_error(b, (a * 30.0) as u32, 30.0)
        );
    }

    #[test]
    fn always_positive_degenerate_manifests() {
        let all_pos = manifest(vec![ClipAnnotation::positive("a", 3), ClipAnnotation::positive("b", 9)]);
        assert_eq!(baseline_always_positive(&all_pos).oscc_accuracy, Some(1.0));
        let all_neg = manifest(vec![ClipAnnotation::negative("a"), ClipAnnotation::negative("b")]);
        assert_eq!(baseline_always_positive(&all_neg).oscc_accuracy, Some(0.0));
    }

    #[test]
    fn fixed_fraction_oracle_prior_has_zero_error() {
        // 0.45 · 240 = 108
        let m = manifest(vec![ClipAnnotation::positive("a", 108), ClipAnnotation::positive("b", 108)]);
        let r = baseline_fixed_fraction(&m, 0.45).unwrap();
        assert!(r.abs_temporal_error_mean_s.unwrap().abs() < 1e-12);
        assert!(baseline_fixed_fraction(&m, 1.2).is_err());
        assert!(baseline_fixed_fraction(&m, -0.1).is_err());
    }

    #[test]
    fn score_counts_one_sided_pnr() {
        let m = manifest(vec![
            ClipAnnotation::positive("a", 60),
            ClipAnnotation::positive("b", 60),
            ClipAnnotation::negative("c"),
            ClipAnnotation::negative("d"),
        ]);
        let p = |id: &str, prob: f64, t: Option<f64>| Prediction {
            clip_id: id.into(),
            oscc_prob_change: prob,
            pnr_time_s: t,
        };
        let preds = vec![
            p("a", 0.9, Some(3.0)),
            p("b", 0.2, None),
            p("c", 0.1, Some(1.0)),
            p("d", 0.4, None),
        ];
        let r = score("m", &m, &preds).unwrap();
        assert_eq!(r.oscc_accuracy, Some(0.75));
        assert_eq!(r.abs_temporal_error_mean_s, Some(1.0));
        assert_eq!((r.n_temporal_pairs, r.n_missed_pnr, r.n_spurious_pnr), (1, 1, 1));
    }
}
