//! Acceptance suite. Runs every criterion in order, prints one PASS/FAIL line
//! per criterion and exits non-zero if any criterion fails.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use ego_pnr::annotations::{generate_annotations, generate_synthetic, PnrPrior, Split, SynthConfig};
use ego_pnr::eval::{baseline_fixed_fraction, evaluate};
use ego_pnr::labels::{build_targets, cutmix_pair, mixup_pair, smooth, Sample, TargetPair};
use ego_pnr::model::{loss_and_grad, loss_and_grad_with_scales, loss_with_scales, ModelConfig, ModelParams, Mode};
use ego_pnr::optim::{adamw_update, layer_lr_scale, lr_at, scaled_base_lr, OptimConfig};
use ego_pnr::sampling::{
    half_gap_expected_shift, monte_carlo_shift, sample_clip, SamplerKind, ShiftExperiment, TrimSpec,
};
use ego_pnr::train::{train, TrainConfig};
use rand::Rng as _;

struct Outcome {
    pass: bool,
    detail: String,
}

type Criterion = (&'static str, fn() -> Outcome);

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn c1_half_gap() -> Outcome {
    let v = half_gap_expected_shift(16, 30.0, 150.0, 240.0).unwrap();
    outcome((v - 0.203125).abs() < 1e-12, format!("half-gap shift = {v} s (expected 0.203125)"))
}

/// Mean distance from a PNR uniform over `0..s` to the nearest evenly spaced
/// sample, by exhaustive scan.
fn even_oracle_frames(s: u32, n: u32) -> f64 {
    let idx: Vec<u32> = (0..n).map(|i| (2 * i + 1) * s / (2 * n)).collect();
    let total: u32 = (0..s)
        .map(|p| idx.iter().map(|&f| f.abs_diff(p)).min().unwrap())
        .sum();
    f64::from(total) / f64::from(s)
}

fn c2_monte_carlo_vs_closed_form() -> Outcome {
    let oracle_s = even_oracle_frames(160, 16) / 30.0;
    let exp = ShiftExperiment {
        trim: TrimSpec::Fixed { length_frames: 160 },
        ..ShiftExperiment::new(SamplerKind::EvenlySpaced, 16, 30, 1_000_000, 7)
    };
    let stats = monte_carlo_shift(&exp).unwrap();
    let pass = (oracle_s - 2.5 / 30.0).abs() < 1e-15 && (stats.mean_s - oracle_s).abs() <= 0.001;
    outcome(
        pass,
        format!("MC mean {:.6} s vs exhaustive oracle {:.6} s (tol 0.001)", stats.mean_s, oracle_s),
    )
}

fn c3_bound_property() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for kind in SamplerKind::ALL {
        let exp = ShiftExperiment::new(kind, 16, 30, 100_000, 11);
        let stats = monte_carlo_shift(&exp).unwrap();
        let bound = exp.half_gap_bound().unwrap();
        pass &= stats.mean_s <= bound;
        parts.push(format!("{} {:.4}", kind.as_str(), stats.mean_s));
    }
    outcome(pass, format!("MC means [{}] all <= 0.203125 s", parts.join(", ")))
}

fn random_target(k: usize, rng: &mut ego_pnr::Rng) -> Vec<f64> {
    let raw: Vec<f64> = (0..k).map(|_| rng.random::<f64>() + 0.01).collect();
    let sum: f64 = raw.iter().sum();
    raw.iter().map(|v| v / sum).collect()
}

fn random_batch(cfg: &ModelConfig, b: usize, rng: &mut ego_pnr::Rng) -> Vec<Sample> {
    (0..b)
        .map(|i| Sample {
            clip_id: format!("s{i}"),
            features: (0..cfg.n_frames * cfg.feature_dim)
                .map(|_| rng.random::<f64>() * 4.0 - 2.0)
                .collect(),
            targets: TargetPair {
                oscc: random_target(2, rng),
                temporal: random_target(cfg.temporal_classes(), rng),
            },
        })
        .collect()
}

fn max_grad_rel_error(lambda: (f64, f64)) -> f64 {
    let cfg = ModelConfig {
        feature_dim: 8,
        hidden_dim: 8,
        depth: 2,
        drop_path_rate: 0.1,
        n_frames: 16,
    };
    let params = ModelParams::init(&cfg, 3).unwrap();
    let mut rng = ego_pnr::rng_for(3, 9);
    let batch = random_batch(&cfg, 4, &mut rng);
    let keep = 1.0 / 0.9;
    let scales = vec![vec![keep, keep], vec![0.0, keep], vec![keep, 0.0], vec![keep, keep]];
    let (_, grads) = loss_and_grad_with_scales(&params, &batch, lambda.0, lambda.1, &scales).unwrap();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let grad_tensors = grads.tensors();
    for (t, g) in grad_tensors.iter().enumerate() {
        for j in 0..g.data.len() {
            let eval_at = |delta: f64| {
                let mut p = params.clone();
                p.tensors_mut()[t].data[j] += delta;
                loss_with_scales(&p, &batch, lambda.0, lambda.1, &scales).unwrap().total
            };
            let numeric = (eval_at(h) - eval_at(-h)) / (2.0 * h);
            let analytic = g.data[j];
            let denom = (analytic.abs() + numeric.abs()).max(1e-6);
            worst = worst.max((analytic - numeric).abs() / denom);
        }
    }
    worst
}

fn c4_gradients() -> Outcome {
    let a = max_grad_rel_error((1.0, 1.0));
    let b = max_grad_rel_error((1.0, 0.0));
    outcome(
        a < 1e-4 && b < 1e-4,
        format!("max relative error {a:.2e} at (1,1), {b:.2e} at (1,0) (limit 1e-4)"),
    )
}

fn c5_loss_identity() -> Outcome {
    let cfg = ModelConfig {
        feature_dim: 6,
        hidden_dim: 12,
        depth: 2,
        drop_path_rate: 0.1,
        n_frames: 8,
    };
    let params = ModelParams::init(&cfg, 5).unwrap();
    let mut rng = ego_pnr::rng_for(5, 1);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let l1 = rng.random::<f64>() * 3.0;
        let l2 = rng.random::<f64>() * 3.0;
        let b = rng.random_range(1..=6);
        let batch = random_batch(&cfg, b, &mut rng);
        let (loss, _) = loss_and_grad(&params, &batch, l1, l2, Mode::Train, &mut rng).unwrap();
        worst = worst.max((loss.total - (l1 * loss.l_oscc + l2 * loss.l_tl)).abs());
    }
    outcome(worst < 1e-12, format!("max |total - (l1*L_oscc + l2*L_tl)| = {worst:.2e} over 100 draws"))
}

fn c6_recipe() -> Outcome {
    let cfg = OptimConfig::default();
    let spe = 10;
    let warm = (cfg.warmup_epochs * spe) as u64;
    let total = (cfg.total_epochs * spe) as u64;
    let peak = scaled_base_lr(&cfg);
    let checks = [
        ("lr_at(0)", lr_at(0, spe, &cfg), 1e-6),
        ("warmup boundary", lr_at(warm, spe, &cfg), 5e-4 * 32.0 / 256.0),
        ("peak at bs 32", peak, 6.25e-5),
        ("cosine midpoint", lr_at(warm + (total - warm) / 2, spe, &cfg), peak / 2.0),
        ("block 0 of depth 4", layer_lr_scale(0, 4, 0.75), 0.75f64.powi(4)),
    ];
    let bad: Vec<_> = checks
        .iter()
        .filter(|(_, got, want)| (got - want).abs() >= 1e-12)
        .map(|(name, got, want)| format!("{name}: {got} != {want}"))
        .collect();
    let detail = if bad.is_empty() {
        "warmup start, peak, cosine midpoint and layer scale exact to 1e-12".to_string()
    } else {
        bad.join("; ")
    };
    outcome(bad.is_empty(), detail)
}

fn c7_adamw() -> Outcome {
    let mut p = [1.0];
    let (mut m, mut v) = ([0.0], [0.0]);
    adamw_update(&mut p, &[1.0], &mut m, &mut v, 1, 0.1, 0.0, (0.9, 0.999), 1e-8);
    outcome((p[0] - 0.9).abs() < 1e-6, format!("first step gives {:.9} (expected 0.9)", p[0]))
}

fn c8_end_to_end() -> Outcome {
    let base = SynthConfig {
        p_pos: 0.477,
        snr: 8.0,
        prior: PnrPrior::beta_at(0.45),
        ..SynthConfig::default()
    };
    let (tm, ts) = generate_synthetic(
        &SynthConfig {
            clips: 500,
            split: Split::Train,
            id_prefix: "train-".into(),
            ..base.clone()
        },
        101,
    )
    .unwrap();
    let (vm, vs) = generate_synthetic(
        &SynthConfig {
            clips: 200,
            split: Split::Val,
            id_prefix: "val-".into(),
            ..base
        },
        102,
    )
    .unwrap();
    let mut cfg = TrainConfig {
        epochs: 30,
        ..TrainConfig::default()
    };
    cfg.optimizer.total_epochs = 30;
    let started = Instant::now();
    let out = match train(&tm, &vm, &ts, &vs, &cfg) {
        Ok(o) => o,
        Err(e) => return outcome(false, format!("training failed: {e}")),
    };
    let elapsed = started.elapsed().as_secs_f64();
    let (_, report) = evaluate(&out.best_params, &vm, &vs, cfg.eval_views).unwrap();
    let center = baseline_fixed_fraction(&vm, 0.5).unwrap();
    let acc = report.oscc_accuracy.unwrap_or(0.0);
    let center_err = center.abs_temporal_error_mean_s.unwrap();
    let err = report.abs_temporal_error_mean_s.unwrap_or(f64::INFINITY);
    let pass = acc >= 0.90 && err <= 0.5 * center_err && elapsed < 300.0;
    outcome(
        pass,
        format!(
            "val accuracy {acc:.3} (>= 0.90), temporal error {err:.3} s vs 0.5 x center {:.3} s, \
             {} of {} positives localized, {elapsed:.0} s",
            0.5 * center_err,
            report.n_temporal_pairs,
            report.n_state_change_clips
        ),
    )
}

fn c9_baselines() -> Outcome {
    let uniform = generate_annotations(
        &SynthConfig {
            clips: 1_000_000,
            p_pos: 1.0,
            ..SynthConfig::default()
        },
        21,
    )
    .unwrap();
    let center = baseline_fixed_fraction(&uniform, 0.5)
        .unwrap()
        .abs_temporal_error_mean_s
        .unwrap();
    let peaked = generate_annotations(
        &SynthConfig {
            clips: 100_000,
            p_pos: 1.0,
            prior: PnrPrior::beta_at(0.45),
            ..SynthConfig::default()
        },
        22,
    )
    .unwrap();
    let at_045 = baseline_fixed_fraction(&peaked, 0.45)
        .unwrap()
        .abs_temporal_error_mean_s
        .unwrap();
    let at_050 = baseline_fixed_fraction(&peaked, 0.5)
        .unwrap()
        .abs_temporal_error_mean_s
        .unwrap();
    outcome(
        (center - 2.0).abs() <= 0.01 && at_045 < at_050,
        format!("uniform center error {center:.4} s (2.0 +- 0.01); peaked prior: 0.45 -> {at_045:.3} s < 0.5 -> {at_050:.3} s"),
    )
}

fn run_cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_ego-pnr"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(String::from_utf8_lossy(&out.stderr).into_owned())
    }
}

fn same_files(a: &Path, b: &Path, names: &[&str]) -> Result<(), String> {
    for name in names {
        let x = std::fs::read(a.join(name)).map_err(|e| format!("{name}: {e}"))?;
        let y = std::fs::read(b.join(name)).map_err(|e| format!("{name}: {e}"))?;
        if x != y {
            return Err(format!("{name} differs between runs"));
        }
    }
    Ok(())
}

fn c10_determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let d = |p: &str| dir.path().join(p).to_string_lossy().into_owned();
    let config = TrainConfig {
        epochs: 3,
        ..TrainConfig::default()
    };
    let mut config = config;
    config.optimizer.total_epochs = 3;
    config.optimizer.warmup_epochs = 1;
    config.model.hidden_dim = 32;
    std::fs::write(d("train.json"), config.to_json().unwrap()).unwrap();
    let result = (|| -> Result<(), String> {
        run_cli(&[
            "gen", "--clips", "64", "--val-clips", "32", "--prior", "beta@0.45", "--seed", "4", "--out", &d("data"),
        ])?;
        for run in ["a", "b"] {
            run_cli(&["train", "--config", &d("train.json"), "--data", &d("data"), "--out", &d(run)])?;
            run_cli(&[
                "analyze-sampling", "--sampler", "stratified", "--trials", "200000", "--seed", "9", "--out",
                &d(&format!("{run}/shift.json")),
            ])?;
        }
        same_files(
            &dir.path().join("a"),
            &dir.path().join("b"),
            &["config.json", "history.jsonl", "summary.json", "best.ckpt", "shift.json"],
        )
    })();
    match result {
        Ok(()) => outcome(true, "train and analyze-sampling reruns are byte-identical"),
        Err(e) => outcome(false, e),
    }
}

fn c11_label_algebra() -> Outcome {
    let exact = smooth(&[1.0, 0.0], 0.1).unwrap() == vec![0.95, 0.05];
    let mut rng = ego_pnr::rng_for(8, 0);
    let ann_pos = ego_pnr::annotations::ClipAnnotation::positive("p", 100);
    let ann_neg = ego_pnr::annotations::ClipAnnotation::negative("n");
    let n = 16;
    let make = |ann: &ego_pnr::annotations::ClipAnnotation, rng: &mut ego_pnr::Rng| {
        let sc = sample_clip(ann, n, SamplerKind::StratifiedRandom, rng).unwrap();
        Sample {
            clip_id: ann.clip_id.clone(),
            features: vec![0.0; n],
            targets: build_targets(&sc, ann).unwrap(),
        }
    };
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let mut s = make(if rng.random() { &ann_pos } else { &ann_neg }, &mut rng);
        for _ in 0..rng.random_range(1..=4) {
            let other = make(if rng.random() { &ann_pos } else { &ann_neg }, &mut rng);
            s = match rng.random_range(0..3) {
                0 => mixup_pair(&s, &other, rng.random()),
                1 => {
                    let len = rng.random_range(0..=n);
                    let start = rng.random_range(0..=n - len);
                    cutmix_pair(&s, &other, start, len)
                }
                _ => Sample {
                    targets: s.targets.smoothed(rng.random::<f64>()).unwrap(),
                    ..s
                },
            };
        }
        for v in [&s.targets.oscc, &s.targets.temporal] {
            worst = worst.max((v.iter().sum::<f64>() - 1.0).abs());
        }
    }
    outcome(
        exact && worst < 1e-9,
        format!("smooth([1,0], 0.1) exact: {exact}; max |sum - 1| = {worst:.1e} over 10^4 compositions"),
    )
}

fn main() {
    let criteria: [Criterion; 11] = [
        ("half-gap shift formula", c1_half_gap),
        ("Monte-Carlo vs closed form", c2_monte_carlo_vs_closed_form),
        ("half-gap bound property", c3_bound_property),
        ("gradient suite", c4_gradients),
        ("weighted loss identity", c5_loss_identity),
        ("recipe conformance", c6_recipe),
        ("AdamW first step", c7_adamw),
        ("end-to-end learning", c8_end_to_end),
        ("baseline oracle", c9_baselines),
        ("determinism", c10_determinism),
        ("label algebra", c11_label_algebra),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let o = run();
        if !o.pass {
            failed += 1;
        }
        println!(
            "criterion {:>2} {:<28} {}  {} [{:.1} s]",
            i + 1,
            name,
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            started.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {} passed, {} failed", criteria.len() - failed, failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
