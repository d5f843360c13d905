//! Multi-objective fine-tuning loop with per-epoch validation and
//! best-checkpoint selection.

use std::fs;
use std::path::{Path, PathBuf};

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::annotations::{DatasetManifest, FeatureStore};
use crate::error::{Error, Result};
use crate::eval;
use crate::labels::{augment_batch, build_targets, MixConfig, Sample};
use crate::model::{self, LossBreakdown, Mode, ModelConfig, ModelParams};
use crate::optim::{adamw_step, lr_at, AdamWState, OptimConfig};
use crate::sampling::{self, SamplerKind};

/// Recipe entries kept for reference only; they describe pixel-level
/// processing that this harness does not perform.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RecordedSettings {
    pub optimizer: String,
    pub lr_schedule: String,
    pub patch_size: [u32; 2],
    pub tubelet_size: u32,
    pub input_size: [u32; 2],
    pub augmentation: String,
}

impl Default for RecordedSettings {
    fn default() -> Self {
        Self {
            optimizer: "adamw".into(),
            lr_schedule: "cosine".into(),
            patch_size: [16, 16],
            tubelet_size: 2,
            input_size: [224, 224],
            augmentation: "RandAugment(9, 0.5)".into(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMetric {
    OsccAccuracy,
    TemporalError,
    /// `accuracy − temporal_error / clip_duration`.
    Combined,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub seed: u64,
    pub epochs: usize,
    pub n_frames: usize,
    /// `(λ1, λ2)` weighting the OSCC and temporal losses.
    pub loss_weights: (f64, f64),
    pub sampler: SamplerKind,
    pub eval_every: usize,
    pub eval_views: usize,
    pub selection_metric: SelectionMetric,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint_dir: Option<PathBuf>,
    pub optimizer: OptimConfig,
    pub mix: MixConfig,
    pub model: ModelConfig,
    pub recorded: RecordedSettings,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            epochs: 100,
            n_frames: 16,
            loss_weights: (1.0, 1.0),
            sampler: SamplerKind::StratifiedRandom,
            eval_every: 1,
            eval_views: 3,
            selection_metric: SelectionMetric::Combined,
            checkpoint_dir: None,
            optimizer: OptimConfig::default(),
            mix: MixConfig::default(),
            model: ModelConfig::default(),
            recorded: RecordedSettings::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let (l1, l2) = self.loss_weights;
        if !l1.is_finite() || !l2.is_finite() {
            return Err(Error::Config("loss weights must be finite".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.eval_every == 0 || self.eval_views == 0 {
            return Err(Error::Config("eval_every and eval_views must be at least 1".into()));
        }
        if self.n_frames != self.model.n_frames {
            return Err(Error::Config(format!(
                "n_frames {} disagrees with model.n_frames {}",
                self.n_frames, self.model.n_frames
            )));
        }
        self.optimizer.validate()?;
        self.mix.validate()?;
        self.model.validate()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: TrainConfig = serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: LossBreakdown,
    pub val_oscc_accuracy: Option<f64>,
    pub val_temporal_error_s: Option<f64>,
    pub val_combined: Option<f64>,
    /// Learning rate of the last step of the epoch.
    pub lr: f64,
    pub steps: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub selection_metric: SelectionMetric,
}

impl TrainHistory {
    pub fn best(&self) -> &EpochRecord {
        &self.records[self.best_epoch]
    }

    /// One JSON object per epoch.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }
}

pub struct TrainOutcome {
    pub history: TrainHistory,
    pub best_params: ModelParams,
    pub final_params: ModelParams,
}

fn metric_value(r: &EpochRecord, metric: SelectionMetric) -> Option<f64> {
    match metric {
        SelectionMetric::OsccAccuracy => r.val_oscc_accuracy,
        SelectionMetric::TemporalError => r.val_temporal_error_s,
        SelectionMetric::Combined => r.val_combined,
    }
}

/// Index of the best evaluated record: argmax for accuracy-like metrics,
/// argmin for the temporal error, earliest on ties.
pub fn select_best(records: &[EpochRecord], metric: SelectionMetric) -> Option<usize> {
    let lower_is_better = metric == SelectionMetric::TemporalError;
    let mut best: Option<(usize, f64)> = None;
    for (i, r) in records.iter().enumerate() {
        let Some(v) = metric_value(r, metric) else { continue };
        let better = match best {
            None => true,
            Some((_, b)) if lower_is_better => v < b,
            Some((_, b)) => v > b,
        };
        if better {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

/// `accuracy − error / duration`, with the error term capped at 1 and taken
/// as 1 when no clip pairs a predicted and an annotated PNR.
pub fn combined_score(accuracy: f64, temporal_error_s: Option<f64>, duration_s: f64) -> f64 {
    let penalty = temporal_error_s.map_or(1.0, |e| (e / duration_s).min(1.0));
    accuracy - penalty
}

fn mean_duration(manifest: &DatasetManifest) -> f64 {
    if manifest.clips.is_empty() {
        return 1.0;
    }
    manifest.clips.iter().map(|c| c.duration_s()).sum::<f64>() / manifest.clips.len() as f64
}

fn build_batch(
    manifest: &DatasetManifest,
    store: &FeatureStore,
    order: &[usize],
    cfg: &TrainConfig,
    rng: &mut crate::Rng,
) -> Result<Vec<Sample>> {
    let views = store.views();
    order
        .iter()
        .map(|&i| {
            let ann = &manifest.clips[i];
            let view = rng.random_range(0..views);
            let sampled = sampling::sample_clip(ann, cfg.n_frames, cfg.sampler, rng)?;
            let features = store.gather(&ann.clip_id, view, &sampled.frame_indices)?;
            Ok(Sample {
                clip_id: ann.clip_id.clone(),
                features,
                targets: build_targets(&sampled, ann)?,
            })
        })
        .collect()
}

/// Validation metrics in eval mode with the deterministic grid.
pub fn validate_epoch(
    params: &ModelParams,
    manifest: &DatasetManifest,
    store: &FeatureStore,
    views: usize,
) -> Result<eval::MetricsReport> {
    let preds = eval::predict_manifest(params, manifest, store, views)?;
    eval::score("model", manifest, &preds)
}

pub fn train(
    train_manifest: &DatasetManifest,
    val_manifest: &DatasetManifest,
    train_store: &FeatureStore,
    val_store: &FeatureStore,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    train_store.check_covers(train_manifest)?;
    val_store.check_covers(val_manifest)?;
    if train_manifest.clips.is_empty() {
        return Err(Error::Manifest("training split has no clips".into()));
    }
    if train_store.dim() != cfg.model.feature_dim || val_store.dim() != cfg.model.feature_dim {
        return Err(Error::Config(format!(
            "model.feature_dim {} does not match data feature dim {}",
            cfg.model.feature_dim,
            train_store.dim()
        )));
    }

    let mut params = ModelParams::init(&cfg.model, cfg.seed)?;
    let mut state = AdamWState::new(&params);
    let mut rng = crate::rng_for(cfg.seed, 1);
    let (lambda1, lambda2) = cfg.loss_weights;
    let bs = cfg.optimizer.batch_size;
    let n_train = train_manifest.clips.len();
    let steps_per_epoch = n_train.div_ceil(bs);
    let duration = mean_duration(val_manifest);

    let mut records = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, ModelParams)> = None;
    let mut step: u64 = 0;
    let mut order: Vec<usize> = (0..n_train).collect();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut sum_oscc, mut sum_tl) = (0.0, 0.0);
        let mut lr = 0.0;
        for (k, chunk) in order.chunks(bs).enumerate() {
            let wrap = |e: Error| Error::Training {
                epoch,
                step: k,
                source: Box::new(e),
            };
            let batch = build_batch(train_manifest, train_store, chunk, cfg, &mut rng).map_err(wrap)?;
            let batch = augment_batch(batch, &cfg.mix, &mut rng).map_err(wrap)?;
            let (loss, grads) =
                model::loss_and_grad(&params, &batch, lambda1, lambda2, Mode::Train, &mut rng)
                    .map_err(wrap)?;
            lr = lr_at(step, steps_per_epoch, &cfg.optimizer);
            adamw_step(&mut params, &grads, &mut state, lr, &cfg.optimizer).map_err(wrap)?;
            sum_oscc += loss.l_oscc;
            sum_tl += loss.l_tl;
            step += 1;
        }
        let denom = steps_per_epoch as f64;
        let train_loss = LossBreakdown::new(sum_oscc / denom, sum_tl / denom, lambda1, lambda2);

        let evaluate = (epoch + 1) % cfg.eval_every == 0 || epoch + 1 == cfg.epochs;
        let mut record = EpochRecord {
            epoch,
            train_loss,
            val_oscc_accuracy: None,
            val_temporal_error_s: None,
            val_combined: None,
            lr,
            steps: step,
        };
        if evaluate && !val_manifest.clips.is_empty() {
            let report = validate_epoch(&params, val_manifest, val_store, cfg.eval_views)?;
            let acc = report.oscc_accuracy.unwrap_or(0.0);
            record.val_oscc_accuracy = report.oscc_accuracy;
            record.val_temporal_error_s = report.abs_temporal_error_mean_s;
            record.val_combined = Some(combined_score(acc, report.abs_temporal_error_mean_s, duration));
        }
        info!(
            "epoch {epoch}: loss {:.4} (oscc {:.4}, tl {:.4}) val acc {:?} val err {:?} lr {:.3e}",
            record.train_loss.total,
            record.train_loss.l_oscc,
            record.train_loss.l_tl,
            record.val_oscc_accuracy,
            record.val_temporal_error_s,
            record.lr
        );
        records.push(record);
        let improved = match (&best, select_best(&records, cfg.selection_metric)) {
            (_, None) => false,
            (None, Some(_)) => true,
            (Some((b, _)), Some(i)) => i != *b,
        };
        if improved {
            debug!("new best checkpoint at epoch {epoch}");
            best = Some((epoch, params.clone()));
        }
    }

    let (best_epoch, best_params) = best.unwrap_or_else(|| (records.len() - 1, params.clone()));
    let history = TrainHistory {
        records,
        best_epoch,
        selection_metric: cfg.selection_metric,
    };
    let outcome = TrainOutcome {
        history,
        best_params,
        final_params: params,
    };
    if let Some(dir) = &cfg.checkpoint_dir {
        write_outputs(&outcome, cfg, dir)?;
    }
    Ok(outcome)
}

/// Writes `config.json`, `history.jsonl`, `summary.json` and `best.ckpt`.
pub fn write_outputs(outcome: &TrainOutcome, cfg: &TrainConfig, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut resolved = cfg.clone();
    resolved.checkpoint_dir = None;
    fs::write(dir.join("config.json"), resolved.to_json()?)?;
    fs::write(dir.join("history.jsonl"), outcome.history.to_jsonl()?)?;
    let summary = serde_json::json!({
        "best_epoch": outcome.history.best_epoch,
        "selection_metric": outcome.history.selection_metric,
        "best": outcome.history.best(),
    });
    let mut text = serde_json::to_string_pretty(&summary)?;
    text.push('\n');
    fs::write(dir.join("summary.json"), text)?;
    model::save_checkpoint(&outcome.best_params, dir.join("best.ckpt"))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(epoch: usize, acc: Option<f64>, err: Option<f64>) -> EpochRecord {
        EpochRecord {
            epoch,
            train_loss: LossBreakdown::new(0.0, 0.0, 1.0, 1.0),
            val_oscc_accuracy: acc,
            val_temporal_error_s: err,
            val_combined: acc.map(|a| combined_score(a, err, 8.0)),
            lr: 0.0,
            steps: 0,
        }
    }

    #[test]
    fn single_record_is_best() {
        let r = vec![rec(0, Some(0.5), Some(1.0))];
        for m in [
            SelectionMetric::OsccAccuracy,
            SelectionMetric::TemporalError,
            SelectionMetric::Combined,
        ] {
            assert_eq!(select_best(&r, m), Some(0));
        }
    }

    #[test]
    fn accuracy_ties_go_to_earlier_epoch() {
        let r: Vec<_> = [0.7, 0.9, 0.9]
            .iter()
            .enumerate()
            .map(|(i, &a)| rec(i, Some(a), None))
            .collect();
        assert_eq!(select_best(&r, SelectionMetric::OsccAccuracy), Some(1));
    }

    #[test]
    fn temporal_error_is_minimized() {
        let r: Vec<_> = [0.8, 0.5, 0.6]
            .iter()
            .enumerate()
            .map(|(i, &e)| rec(i, Some(0.5), Some(e)))
            .collect();
        assert_eq!(select_best(&r, SelectionMetric::TemporalError), Some(1));
    }

    #[test]
    fn unevaluated_records_are_skipped() {
        let r = vec![rec(0, None, None), rec(1, Some(0.6), Some(1.0))];
        assert_eq!(select_best(&r, SelectionMetric::Combined), Some(1));
        assert_eq!(select_best(&r[..1], SelectionMetric::Combined), None);
    }

    #[test]
    fn combined_score_normalizes_error() {
        assert_eq!(combined_score(0.9, Some(0.8), 8.0), 0.8);
        assert_eq!(combined_score(0.9, None, 8.0), 0.9 - 1.0);
    }

    #[test]
    fn config_defaults_follow_recipe_and_round_trip() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.loss_weights, (1.0, 1.0));
        assert_eq!(cfg.epochs, 100);
        assert_eq!(cfg.optimizer.base_lr, 5e-4);
        assert_eq!(cfg.mix.mixup_alpha, 0.8);
        assert_eq!(cfg.model.drop_path_rate, 0.1);
        let back = TrainConfig::from_json(&cfg.to_json().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn config_rejects_unknown_keys_and_bad_values() {
        assert!(TrainConfig::from_json(r#"{"bogus": 1}"#).is_err());
        assert!(TrainConfig::from_json(r#"{"epochs": 0}"#).is_err());
        assert!(TrainConfig::from_json(r#"{"n_frames": 8}"#).is_err());
        let partial = TrainConfig::from_json(r#"{"epochs": 3, "optimizer": {"batch_size": 8}}"#).unwrap();
        assert_eq!(partial.optimizer.batch_size, 8);
        assert_eq!(partial.optimizer.weight_decay, 0.05);
    }
}
