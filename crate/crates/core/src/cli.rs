//! `ego-pnr` command-line interface.
//!
//! Data directories hold one `<split>.json` manifest and one `<split>.egf`
//! feature file per split.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use log::info;
use serde_json::json;

use crate::annotations::{
    self, generate_synthetic, DatasetManifest, FeatureStore, PnrPrior, Split, SynthConfig,
};
use crate::error::{Error, Result};
use crate::eval;
use crate::model;
use crate::sampling::{self, SamplerKind, ShiftExperiment, TrimSpec};
use crate::train::{self, TrainConfig};

#[derive(Debug, Parser)]
#[command(name = "ego-pnr", version, about = "State-change classification and PNR localization harness")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SamplerArg {
    Even,
    Stratified,
    Random,
}

impl From<SamplerArg> for SamplerKind {
    fn from(s: SamplerArg) -> Self {
        match s {
            SamplerArg::Even => SamplerKind::EvenlySpaced,
            SamplerArg::Stratified => SamplerKind::StratifiedRandom,
            SamplerArg::Random => SamplerKind::UniformRandom,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum BaselineMode {
    /// Predict "state change" for every clip.
    Positive,
    /// Predict the PNR at the clip center.
    Center,
    /// Predict the PNR at `--fraction` of the clip duration.
    Fixed,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset (train and val splits, optional test split).
    Gen {
        /// Number of training clips.
        #[arg(long, default_value_t = 100)]
        clips: usize,
        /// Number of validation clips.
        #[arg(long, default_value_t = 0)]
        val_clips: usize,
        /// Number of test clips.
        #[arg(long, default_value_t = 0)]
        test_clips: usize,
        /// Fraction of clips with a state change.
        #[arg(long, default_value_t = 0.477)]
        p_pos: f64,
        /// PNR prior: `uniform`, `beta@F` or `beta@F:K`.
        #[arg(long, default_value = "uniform")]
        prior: String,
        /// Bump magnitude over unit-variance noise.
        #[arg(long, default_value_t = 8.0)]
        snr: f64,
        /// Feature dimension per frame.
        #[arg(long, default_value_t = 16)]
        dim: usize,
        /// Views (crops) per clip.
        #[arg(long, default_value_t = 3)]
        views: usize,
        /// Half-width of the PNR feature bump, in frames.
        #[arg(long, default_value_t = 8)]
        bump_half_width: u32,
        /// Random seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Analytic and Monte-Carlo analysis of the sampling-induced PNR shift.
    AnalyzeSampling {
        /// Frame sampler.
        #[arg(long, value_enum, default_value = "even")]
        sampler: SamplerArg,
        /// Frames sampled per clip.
        #[arg(long, default_value_t = 16)]
        n: usize,
        /// Frames per second.
        #[arg(long, default_value_t = 30)]
        fps: u32,
        /// Monte-Carlo trials.
        #[arg(long, default_value_t = 1_000_000)]
        trials: u64,
        /// Random seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Use a fixed window length (frames) instead of the 5-8 s trim law.
        #[arg(long)]
        fixed_length: Option<u32>,
        /// Output JSON file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fine-tune the multi-task model.
    Train {
        /// Training config JSON; defaults are used when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Data directory with train.json/.egf and val.json/.egf.
        #[arg(long, required_unless_present = "dump_config")]
        data: Option<PathBuf>,
        /// Output directory for history, summary and checkpoint.
        #[arg(long, required_unless_present = "dump_config")]
        out: Option<PathBuf>,
        /// Override the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Print the default config template and exit.
        #[arg(long)]
        dump_config: bool,
    },
    /// Evaluate a checkpoint with multi-view logit averaging.
    Eval {
        /// Checkpoint file.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Data directory.
        #[arg(long)]
        data: PathBuf,
        /// Split to evaluate.
        #[arg(long, default_value = "val")]
        split: String,
        /// Views averaged per clip.
        #[arg(long, default_value_t = 3)]
        views: usize,
        /// Output metrics JSON.
        #[arg(long)]
        out: PathBuf,
        /// Optional per-clip CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Score a label-free baseline predictor.
    Baseline {
        /// Baseline kind.
        #[arg(long, value_enum, default_value = "center")]
        mode: BaselineMode,
        /// Fraction of the duration for `--mode fixed`.
        #[arg(long)]
        fraction: Option<f64>,
        /// Data directory.
        #[arg(long)]
        data: PathBuf,
        /// Split to score.
        #[arg(long, default_value = "val")]
        split: String,
        /// Output metrics JSON.
        #[arg(long)]
        out: PathBuf,
    },
}

pub fn manifest_path(dir: &Path, split: Split) -> PathBuf {
    dir.join(format!("{split}.json"))
}

pub fn features_path(dir: &Path, split: Split) -> PathBuf {
    dir.join(format!("{split}.egf"))
}

pub fn load_split(dir: &Path, split: Split) -> Result<(DatasetManifest, FeatureStore)> {
    let manifest = annotations::read_manifest(manifest_path(dir, split))?;
    let store = annotations::read_features(features_path(dir, split))?;
    store.check_covers(&manifest)?;
    Ok((manifest, store))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, s)?;
    Ok(())
}

fn run_gen(cmd: &Command) -> Result<()> {
    let Command::Gen {
        clips,
        val_clips,
        test_clips,
        p_pos,
        prior,
        snr,
        dim,
        views,
        bump_half_width,
        seed,
        out,
    } = cmd
    else {
        unreachable!()
    };
    let prior: PnrPrior = prior.parse()?;
    fs::create_dir_all(out)?;
    let splits = [
        (Split::Train, *clips),
        (Split::Val, *val_clips),
        (Split::Test, *test_clips),
    ];
    for (k, (split, count)) in splits.into_iter().enumerate() {
        if count == 0 && split != Split::Train {
            continue;
        }
        let cfg = SynthConfig {
            split,
            clips: count,
            p_pos: *p_pos,
            prior,
            feature_dim: *dim,
            snr: *snr,
            views: *views,
            bump_half_width: *bump_half_width,
            id_prefix: format!("{split}-"),
            ..SynthConfig::default()
        };
        let split_seed = seed.wrapping_add((k as u64) << 32);
        let (manifest, store) = generate_synthetic(&cfg, split_seed)?;
        annotations::write_manifest(&manifest, manifest_path(out, split))?;
        annotations::write_features(&store, features_path(out, split))?;
        info!("wrote {count} {split} clips to {}", out.display());
    }
    Ok(())
}

fn run_analyze(cmd: &Command) -> Result<()> {
    let Command::AnalyzeSampling {
        sampler,
        n,
        fps,
        trials,
        seed,
        fixed_length,
        out,
    } = cmd
    else {
        unreachable!()
    };
    let mut exp = ShiftExperiment::new((*sampler).into(), *n, *fps, *trials, *seed);
    if let Some(len) = fixed_length {
        exp.trim = TrimSpec::Fixed { length_frames: *len };
    }
    let stats = sampling::monte_carlo_shift(&exp)?;
    let report = json!({
        "sampler": exp.sampler,
        "n": exp.n,
        "fps": exp.fps,
        "trials": exp.trials,
        "seed": exp.seed,
        "trim": exp.trim,
        "stats": stats,
        "analytic_half_gap_s": exp.half_gap_bound()?,
    });
    match out {
        Some(path) => write_json(path, &report),
        None => {
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(())
        }
    }
}

fn run_train(cmd: &Command) -> Result<()> {
    let Command::Train {
        config,
        data,
        out,
        seed,
        dump_config,
    } = cmd
    else {
        unreachable!()
    };
    if *dump_config {
        print!("{}", TrainConfig::default().to_json()?);
        return Ok(());
    }
    let (data, out) = (data.as_ref().unwrap(), out.as_ref().unwrap());
    let mut cfg = match config {
        Some(path) => TrainConfig::from_json(&fs::read_to_string(path)?)?,
        None => TrainConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = *s;
    }
    cfg.checkpoint_dir = Some(out.clone());
    let (train_m, train_s) = load_split(data, Split::Train)?;
    let (val_m, val_s) = load_split(data, Split::Val)?;
    let outcome = train::train(&train_m, &val_m, &train_s, &val_s, &cfg)?;
    let best = outcome.history.best();
    info!(
        "best epoch {}: val acc {:?}, val temporal error {:?}",
        best.epoch, best.val_oscc_accuracy, best.val_temporal_error_s
    );
    Ok(())
}

fn run_eval(cmd: &Command) -> Result<()> {
    let Command::Eval {
        checkpoint,
        data,
        split,
        views,
        out,
        csv,
    } = cmd
    else {
        unreachable!()
    };
    let split: Split = split.parse()?;
    let params = model::load_checkpoint(checkpoint)?;
    let (manifest, store) = load_split(data, split)?;
    let preds = eval::predict_manifest(&params, &manifest, &store, *views)?;
    // Test manifests are scored as prediction dumps only.
    let body = if split == Split::Test {
        json!({ "split": split, "predictions": preds })
    } else {
        let mut report = eval::score("model", &manifest, &preds)?;
        report.baselines = eval::standard_baselines(&manifest);
        json!({ "split": split, "views": views, "metrics": report })
    };
    write_json(out, &body)?;
    if let Some(csv) = csv {
        fs::write(csv, eval::per_clip_csv(&manifest, &preds))?;
    }
    Ok(())
}

fn run_baseline(cmd: &Command) -> Result<()> {
    let Command::Baseline {
        mode,
        fraction,
        data,
        split,
        out,
    } = cmd
    else {
        unreachable!()
    };
    let split: Split = split.parse()?;
    let manifest = annotations::read_manifest(manifest_path(data, split))?;
    let report = match mode {
        BaselineMode::Positive => eval::baseline_always_positive(&manifest),
        BaselineMode::Center => eval::baseline_fixed_fraction(&manifest, fraction.unwrap_or(0.5))?,
        BaselineMode::Fixed => {
            let f = fraction.ok_or_else(|| Error::Config("--mode fixed requires --fraction".into()))?;
            eval::baseline_fixed_fraction(&manifest, f)?
        }
    };
    write_json(out, &report)
}

pub fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        c @ Command::Gen { .. } => run_gen(c),
        c @ Command::AnalyzeSampling { .. } => run_analyze(c),
        c @ Command::Train { .. } => run_train(c),
        c @ Command::Eval { .. } => run_eval(c),
        c @ Command::Baseline { .. } => run_baseline(c),
    }
}

fn init_logging() {
    let env = env_logger::Env::new().filter_or("EGO_LOG", "error");
    let _ = env_logger::Builder::from_env(env).format_timestamp(None).try_init();
}

/// Runs the CLI: `0` on success, `2` on usage errors, `1` on runtime errors.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    init_logging();
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
