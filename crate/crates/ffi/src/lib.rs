//! C ABI over `ego_pnr`.
//!
//! Every fallible function returns an [`EgoStatus`] and writes results through
//! out-pointers. On failure the message is kept per thread and can be read
//! with [`ego_last_error`]. Handles are opaque and must be released with their
//! matching `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use ego_pnr::annotations::{self, DatasetManifest, FeatureStore};
use ego_pnr::eval;
use ego_pnr::model::{self, ModelParams};
use ego_pnr::optim::{self, OptimConfig};
use ego_pnr::sampling::{self, SamplerKind, ShiftExperiment, TrimSpec, TrimmedRange};
use ego_pnr::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EgoStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    Format = 5,
    Sampling = 6,
    Shape = 7,
    Numeric = 8,
    Panic = 9,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EgoSampler {
    Even = 0,
    Stratified = 1,
    Random = 2,
}

impl From<EgoSampler> for SamplerKind {
    fn from(s: EgoSampler) -> Self {
        match s {
            EgoSampler::Even => SamplerKind::EvenlySpaced,
            EgoSampler::Stratified => SamplerKind::StratifiedRandom,
            EgoSampler::Random => SamplerKind::UniformRandom,
        }
    }
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EgoShiftStats {
    pub mean_s: f64,
    pub std_s: f64,
    pub max_s: f64,
    pub trials: u64,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EgoPrediction {
    pub oscc_prob_change: f64,
    /// False when the temporal head picks the "no state change" class.
    pub has_pnr: bool,
    /// Seconds from clip start; 0 when `has_pnr` is false.
    pub pnr_time_s: f64,
}

/// Parsed dataset manifest.
pub struct EgoManifest(DatasetManifest);

/// Per-clip feature tensors.
pub struct EgoFeatures(FeatureStore);

/// Model parameters loaded from a checkpoint.
pub struct EgoModel(ModelParams);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(err: &Error) -> EgoStatus {
    match err {
        Error::Io(_) => EgoStatus::Io,
        Error::Parse { .. } | Error::Json(_) | Error::Manifest(_) => EgoStatus::Parse,
        Error::Format(_) | Error::Checkpoint(_) | Error::MissingFeatures(_) => EgoStatus::Format,
        Error::Sampling { .. } | Error::Untrimmable { .. } => EgoStatus::Sampling,
        Error::Shape(_) | Error::Batch(_) => EgoStatus::Shape,
        Error::NonFinite { .. } | Error::Training { .. } => EgoStatus::Numeric,
        _ => EgoStatus::InvalidArgument,
    }
}

/// Runs `f`, converting errors and panics into a status plus message.
fn guard(f: impl FnOnce() -> Result<(), (EgoStatus, String)>) -> EgoStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => EgoStatus::Ok,
        Ok(Err((status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(_) => {
            set_last_error("internal panic");
            EgoStatus::Panic
        }
    }
}

fn lib<T>(r: ego_pnr::Result<T>) -> Result<T, (EgoStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null(what: &str) -> (EgoStatus, String) {
    (EgoStatus::NullPointer, format!("`{what}` is null"))
}

fn invalid(msg: impl Into<String>) -> (EgoStatus, String) {
    (EgoStatus::InvalidArgument, msg.into())
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, (EgoStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("`{what}` is not valid UTF-8")))
}

unsafe fn out_ref<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, (EgoStatus, String)> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, (EgoStatus, String)> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], (EgoStatus, String)> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

/// Message of the last failed call on this thread, or an empty string. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ego_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ego_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Half-gap shift `((s_min + s_max) / 2) / (n · fps · 2)` in seconds.
///
/// # Safety
/// `out` must be null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ego_half_gap_expected_shift(
    n: usize,
    fps: f64,
    s_min: f64,
    s_max: f64,
    out: *mut f64,
) -> EgoStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = lib(sampling::half_gap_expected_shift(n, fps, s_min, s_max))?;
        Ok(())
    })
}

/// Monte-Carlo estimate of the sampled-frame distance to the PNR.
/// `fixed_length == 0` uses the 5-8 s trim law, otherwise every window has
/// exactly `fixed_length` frames.
///
/// # Safety
/// `out` must be null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ego_monte_carlo_shift(
    sampler: EgoSampler,
    n: usize,
    fps: u32,
    trials: u64,
    seed: u64,
    fixed_length: u32,
    out: *mut EgoShiftStats,
) -> EgoStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let mut exp = ShiftExperiment::new(sampler.into(), n, fps, trials, seed);
        if fixed_length > 0 {
            exp.trim = TrimSpec::Fixed {
                length_frames: fixed_length,
            };
        }
        let s = lib(sampling::monte_carlo_shift(&exp))?;
        *out = EgoShiftStats {
            mean_s: s.mean_s,
            std_s: s.std_s,
            max_s: s.max_s,
            trials: s.trials,
        };
        Ok(())
    })
}

/// Writes `n` sorted frame indices from the window `[start, start + length)`.
///
/// # Safety
/// `out` must be null or valid for `n` writes.
#[no_mangle]
pub unsafe extern "C" fn ego_sample_frames(
    start_frame: u32,
    length_frames: u32,
    n: usize,
    sampler: EgoSampler,
    seed: u64,
    out: *mut u32,
) -> EgoStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let window = TrimmedRange {
            start_frame,
            length_frames,
        };
        let mut rng = ego_pnr::rng_for(seed, 0);
        let idx = lib(sampling::sample_frames(window, n, sampler.into(), &mut rng))?;
        ptr::copy_nonoverlapping(idx.as_ptr(), out, idx.len());
        Ok(())
    })
}

/// Slot whose frame is closest to `pnr_frame`; ties go to the earlier slot.
///
/// # Safety
/// `frame_indices` must be valid for `len` reads, `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ego_assign_pseudo_pnr(
    frame_indices: *const u32,
    len: usize,
    pnr_frame: u32,
    out: *mut usize,
) -> EgoStatus {
    guard(|| {
        let idx = slice_arg(frame_indices, len, "frame_indices")?;
        let out = out_ref(out, "out")?;
        if idx.is_empty() {
            return Err(invalid("frame_indices is empty"));
        }
        *out = sampling::assign_pseudo_pnr(idx, pnr_frame);
        Ok(())
    })
}

/// `base_lr · batch_size / 256`.
#[no_mangle]
pub extern "C" fn ego_scaled_base_lr(base_lr: f64, batch_size: usize) -> f64 {
    optim::scaled_base_lr(&OptimConfig {
        base_lr,
        batch_size,
        ..OptimConfig::default()
    })
}

/// Parses a manifest from a JSON string.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ego_manifest_parse(json: *const c_char, out: *mut *mut EgoManifest) -> EgoStatus {
    guard(|| {
        let text = str_arg(json, "json")?;
        let out = out_ref(out, "out")?;
        let m = lib(annotations::parse_manifest(text))?;
        *out = Box::into_raw(Box::new(EgoManifest(m)));
        Ok(())
    })
}

/// Reads a manifest file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ego_manifest_read(path: *const c_char, out: *mut *mut EgoManifest) -> EgoStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let out = out_ref(out, "out")?;
        let m = lib(annotations::read_manifest(path))?;
        *out = Box::into_raw(Box::new(EgoManifest(m)));
        Ok(())
    })
}

/// # Safety
/// `manifest` must come from this library; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ego_manifest_clip_count(manifest: *const EgoManifest, out: *mut usize) -> EgoStatus {
    guard(|| {
        let m = handle(manifest, "manifest")?;
        *out_ref(out, "out")? = m.0.clips.len();
        Ok(())
    })
}

/// Fraction of clips with a state change.
///
/// # Safety
/// `manifest` must come from this library; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ego_manifest_positive_fraction(manifest: *const EgoManifest, out: *mut f64) -> EgoStatus {
    guard(|| {
        let m = handle(manifest, "manifest")?;
        *out_ref(out, "out")? = m.0.positive_fraction();
        Ok(())
    })
}

/// # Safety
/// `manifest` must be null or come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn ego_manifest_free(manifest: *mut EgoManifest) {
    if !manifest.is_null() {
        drop(Box::from_raw(manifest));
    }
}

/// Reads a binary feature file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ego_features_read(path: *const c_char, out: *mut *mut EgoFeatures) -> EgoStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let out = out_ref(out, "out")?;
        let f = lib(annotations::read_features(path))?;
        *out = Box::into_raw(Box::new(EgoFeatures(f)));
        Ok(())
    })
}

/// Writes clip count, views, frames per view and feature dimension.
///
/// # Safety
/// `features` must come from this library; outputs valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ego_features_shape(
    features: *const EgoFeatures,
    clips: *mut usize,
    views: *mut usize,
    frames: *mut usize,
    dim: *mut usize,
) -> EgoStatus {
    guard(|| {
        let f = &handle(features, "features")?.0;
        *out_ref(clips, "clips")? = f.len();
        *out_ref(views, "views")? = f.views();
        *out_ref(frames, "frames")? = f.frames();
        *out_ref(dim, "dim")? = f.dim();
        Ok(())
    })
}

/// # Safety
/// `features` must be null or come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn ego_features_free(features: *mut EgoFeatures) {
    if !features.is_null() {
        drop(Box::from_raw(features));
    }
}

/// Loads a model checkpoint.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ego_model_load(path: *const c_char, out: *mut *mut EgoModel) -> EgoStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let out = out_ref(out, "out")?;
        let p = lib(model::load_checkpoint(path))?;
        *out = Box::into_raw(Box::new(EgoModel(p)));
        Ok(())
    })
}

/// Writes the number of input frames and the per-frame feature dimension.
///
/// # Safety
/// `model` must come from this library; outputs valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ego_model_input_shape(
    model: *const EgoModel,
    n_frames: *mut usize,
    feature_dim: *mut usize,
) -> EgoStatus {
    guard(|| {
        let m = &handle(model, "model")?.0;
        *out_ref(n_frames, "n_frames")? = m.config.n_frames;
        *out_ref(feature_dim, "feature_dim")? = m.config.feature_dim;
        Ok(())
    })
}

/// Predicts from pre-gathered inputs: `views` tensors of
/// `n_frames × feature_dim` floats laid out contiguously, sampled at
/// `frame_indices` (length `n_frames`) of a clip recorded at `fps`.
///
/// # Safety
/// `features` must be valid for `views · n_frames · feature_dim` reads,
/// `frame_indices` for `n_frames` reads and `out` for writes.
#[no_mangle]
pub unsafe extern "C" fn ego_model_predict(
    model: *const EgoModel,
    features: *const f32,
    views: usize,
    frame_indices: *const u32,
    fps: f64,
    out: *mut EgoPrediction,
) -> EgoStatus {
    guard(|| {
        let m = &handle(model, "model")?.0;
        let (n, f) = (m.config.n_frames, m.config.feature_dim);
        if views == 0 {
            return Err(invalid("views must be at least 1"));
        }
        let values = slice_arg(features, views * n * f, "features")?;
        let idx = slice_arg(frame_indices, n, "frame_indices")?;
        let out = out_ref(out, "out")?;
        let inputs: Vec<Vec<f64>> = values
            .chunks(n * f)
            .map(|c| c.iter().map(|&v| f64::from(v)).collect())
            .collect();
        let p = lib(eval::predict_views(m, "<ffi>", &inputs, idx, fps))?;
        *out = to_c(&p);
        Ok(())
    })
}

/// Predicts clip `clip_index` of `manifest` from `features`, averaging the
/// first `views` views on the whole-clip evaluation grid.
///
/// # Safety
/// Handles must come from this library; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ego_model_predict_clip(
    model: *const EgoModel,
    manifest: *const EgoManifest,
    features: *const EgoFeatures,
    clip_index: usize,
    views: usize,
    out: *mut EgoPrediction,
) -> EgoStatus {
    guard(|| {
        let m = &handle(model, "model")?.0;
        let man = &handle(manifest, "manifest")?.0;
        let store = &handle(features, "features")?.0;
        let out = out_ref(out, "out")?;
        let ann = man
            .clips
            .get(clip_index)
            .ok_or_else(|| invalid(format!("clip index {clip_index} out of range ({})", man.clips.len())))?;
        let p = lib(eval::predict_clip(m, ann, store, views))?;
        *out = to_c(&p);
        Ok(())
    })
}

fn to_c(p: &eval::Prediction) -> EgoPrediction {
    EgoPrediction {
        oscc_prob_change: p.oscc_prob_change,
        has_pnr: p.pnr_time_s.is_some(),
        pnr_time_s: p.pnr_time_s.unwrap_or(0.0),
    }
}

/// # Safety
/// `model` must be null or come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn ego_model_free(model: *mut EgoModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}
