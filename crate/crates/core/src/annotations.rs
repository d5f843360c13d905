//! Clip manifests, binary feature files and the synthetic clip generator.
//!
//! A manifest is a JSON document listing clip annotations for one split. The
//! per-frame features that stand in for decoded video live in a separate
//! little-endian binary file (`EGF1`), one `[views × frames × dim]` tensor per
//! clip.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::Rng as _;
use rand_distr::{Beta, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_FPS: u32 = 30;
/// 8 s at 30 fps.
pub const DEFAULT_NUM_FRAMES: u32 = 240;
pub const DEFAULT_VIEWS: u32 = 3;

const FEATURE_MAGIC: &[u8; 4] = b"EGF1";
const FEATURE_VERSION: u32 = 1;
const FEATURE_HEADER_LEN: usize = 24;

fn default_fps() -> u32 {
    DEFAULT_FPS
}

fn default_num_frames() -> u32 {
    DEFAULT_NUM_FRAMES
}

fn default_views() -> u32 {
    DEFAULT_VIEWS
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClipAnnotation {
    pub clip_id: String,
    #[serde(default = "default_fps")]
    pub fps: u32,
    #[serde(default = "default_num_frames")]
    pub num_frames: u32,
    pub has_state_change: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pnr_frame: Option<u32>,
}

impl ClipAnnotation {
    pub fn negative(clip_id: impl Into<String>) -> Self {
        Self {
            clip_id: clip_id.into(),
            fps: DEFAULT_FPS,
            num_frames: DEFAULT_NUM_FRAMES,
            has_state_change: false,
            pnr_frame: None,
        }
    }

    pub fn positive(clip_id: impl Into<String>, pnr_frame: u32) -> Self {
        Self {
            clip_id: clip_id.into(),
            fps: DEFAULT_FPS,
            num_frames: DEFAULT_NUM_FRAMES,
            has_state_change: true,
            pnr_frame: Some(pnr_frame),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |reason: String| {
            Err(Error::Validation {
                clip_id: self.clip_id.clone(),
                reason,
            })
        };
        if self.clip_id.is_empty() {
            return fail("empty clip_id".into());
        }
        if self.fps == 0 {
            return fail("fps must be positive".into());
        }
        if self.num_frames == 0 {
            return fail("num_frames must be positive".into());
        }
        match (self.has_state_change, self.pnr_frame) {
            (true, None) => fail("has_state_change is true but pnr_frame is missing".into()),
            (false, Some(_)) => fail("pnr_frame given for a clip without state change".into()),
            (true, Some(f)) if f >= self.num_frames => fail(format!(
                "pnr_frame {f} out of range [0, {})",
                self.num_frames
            )),
            _ => Ok(()),
        }
    }

    pub fn duration_s(&self) -> f64 {
        f64::from(self.num_frames) / f64::from(self.fps)
    }

    pub fn pnr_time_s(&self) -> Option<f64> {
        self.pnr_frame.map(|f| f64::from(f) / f64::from(self.fps))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub split: Split,
    pub feature_dim: u32,
    #[serde(default = "default_views")]
    pub views_per_clip: u32,
    pub clips: Vec<ClipAnnotation>,
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        if self.views_per_clip == 0 {
            return Err(Error::Manifest("views_per_clip must be at least 1".into()));
        }
        if self.feature_dim == 0 {
            return Err(Error::Manifest("feature_dim must be at least 1".into()));
        }
        let mut seen = HashSet::with_capacity(self.clips.len());
        for clip in &self.clips {
            clip.validate()?;
            if !seen.insert(clip.clip_id.as_str()) {
                return Err(Error::Validation {
                    clip_id: clip.clip_id.clone(),
                    reason: "duplicate clip_id".into(),
                });
            }
        }
        Ok(())
    }

    pub fn positive_fraction(&self) -> f64 {
        if self.clips.is_empty() {
            return 0.0;
        }
        let pos = self.clips.iter().filter(|c| c.has_state_change).count();
        pos as f64 / self.clips.len() as f64
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}

/// Parses and validates a manifest from its JSON text.
pub fn parse_manifest(text: &str) -> Result<DatasetManifest> {
    let manifest: DatasetManifest = serde_json::from_str(text).map_err(|e| Error::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    manifest.validate()?;
    Ok(manifest)
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    parse_manifest(&fs::read_to_string(path)?)
}

pub fn write_manifest(manifest: &DatasetManifest, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, manifest.to_json()?)?;
    Ok(())
}

/// Per-clip feature tensors, `[views × frames × dim]`, stored as `f32`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureStore {
    views: usize,
    frames: usize,
    dim: usize,
    clips: BTreeMap<String, Vec<f32>>,
}

impl FeatureStore {
    pub fn new(views: usize, frames: usize, dim: usize) -> Self {
        Self {
            views,
            frames,
            dim,
            clips: BTreeMap::new(),
        }
    }

    pub fn views(&self) -> usize {
        self.views
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }

    fn clip_len(&self) -> usize {
        self.views * self.frames * self.dim
    }

    pub fn insert(&mut self, clip_id: impl Into<String>, values: Vec<f32>) -> Result<()> {
        let clip_id = clip_id.into();
        if values.len() != self.clip_len() {
            return Err(Error::Shape(format!(
                "clip `{clip_id}` has {} values, expected {}×{}×{} = {}",
                values.len(),
                self.views,
                self.frames,
                self.dim,
                self.clip_len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "feature value".into(),
                clip_id,
            });
        }
        self.clips.insert(clip_id, values);
        Ok(())
    }

    pub fn get(&self, clip_id: &str) -> Option<&[f32]> {
        self.clips.get(clip_id).map(Vec::as_slice)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.clips.keys().map(String::as_str)
    }

    /// Feature vector of one frame of one view.
    pub fn frame(&self, clip_id: &str, view: usize, frame: usize) -> Option<&[f32]> {
        if view >= self.views || frame >= self.frames {
            return None;
        }
        let data = self.clips.get(clip_id)?;
        let off = (view * self.frames + frame) * self.dim;
        Some(&data[off..off + self.dim])
    }

    /// Gathers `[frame_indices.len() × dim]` features of one view as `f64`.
    pub fn gather(&self, clip_id: &str, view: usize, frame_indices: &[u32]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(frame_indices.len() * self.dim);
        for &f in frame_indices {
            let row = self
                .frame(clip_id, view, f as usize)
                .ok_or_else(|| Error::MissingFeatures(clip_id.to_string()))?;
            out.extend(row.iter().map(|&v| f64::from(v)));
        }
        Ok(out)
    }

    /// Checks that every manifest clip has a tensor with the declared shape.
    pub fn check_covers(&self, manifest: &DatasetManifest) -> Result<()> {
        if self.dim != manifest.feature_dim as usize {
            return Err(Error::Shape(format!(
                "feature dim {} does not match manifest feature_dim {}",
                self.dim, manifest.feature_dim
            )));
        }
        if self.views != manifest.views_per_clip as usize {
            return Err(Error::Shape(format!(
                "feature file has {} views, manifest declares {}",
                self.views, manifest.views_per_clip
            )));
        }
        for clip in &manifest.clips {
            if !self.clips.contains_key(&clip.clip_id) {
                return Err(Error::MissingFeatures(clip.clip_id.clone()));
            }
            if clip.num_frames as usize != self.frames {
                return Err(Error::Shape(format!(
                    "clip `{}` declares {} frames, feature file stores {}",
                    clip.clip_id, clip.num_frames, self.frames
                )));
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let to_u32 = |v: usize, what: &str| {
            u32::try_from(v).map_err(|_| Error::Format(format!("{what} {v} exceeds u32")))
        };
        let mut out = Vec::with_capacity(
            FEATURE_HEADER_LEN + self.clips.len() * (self.clip_len() * 4 + 16),
        );
        out.extend_from_slice(FEATURE_MAGIC);
        out.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
        out.extend_from_slice(&to_u32(self.clips.len(), "clip count")?.to_le_bytes());
        out.extend_from_slice(&to_u32(self.views, "views")?.to_le_bytes());
        out.extend_from_slice(&to_u32(self.frames, "frames")?.to_le_bytes());
        out.extend_from_slice(&to_u32(self.dim, "dim")?.to_le_bytes());
        for (id, values) in &self.clips {
            let id_len = u16::try_from(id.len())
                .map_err(|_| Error::Format(format!("clip id `{id}` longer than 65535 bytes")))?;
            out.extend_from_slice(&id_len.to_le_bytes());
            out.extend_from_slice(id.as_bytes());
            for v in values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        if bytes.len() < FEATURE_HEADER_LEN {
            return Err(Error::Format(format!(
                "header truncated: expected {FEATURE_HEADER_LEN} bytes, found {}",
                bytes.len()
            )));
        }
        if cur.take(4, "magic")? != FEATURE_MAGIC {
            return Err(Error::Format("bad magic, expected `EGF1`".into()));
        }
        let version = cur.u32("version")?;
        if version != FEATURE_VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let count = cur.u32("clip count")? as usize;
        let views = cur.u32("views")? as usize;
        let frames = cur.u32("frames")? as usize;
        let dim = cur.u32("dim")? as usize;
        let mut store = FeatureStore::new(views, frames, dim);
        let payload = store.clip_len() * 4;
        for _ in 0..count {
            let id_len = u16::from_le_bytes(cur.take(2, "clip id length")?.try_into().unwrap());
            let id = std::str::from_utf8(cur.take(id_len as usize, "clip id")?)
                .map_err(|_| Error::Format("clip id is not valid utf-8".into()))?
                .to_string();
            let raw = cur.take(payload, &format!("payload of clip `{id}`"))?;
            let values = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect::<Vec<_>>();
            if store.clips.contains_key(&id) {
                return Err(Error::Format(format!("duplicate clip id `{id}`")));
            }
            store.insert(id, values).map_err(|e| match e {
                Error::NonFinite { clip_id, .. } => {
                    Error::Format(format!("non-finite value in clip `{clip_id}`"))
                }
                other => other,
            })?;
        }
        if cur.pos != bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes after last clip",
                bytes.len() - cur.pos
            )));
        }
        Ok(store)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let remaining = self.bytes.len() - self.pos;
        if remaining < n {
            return Err(Error::Format(format!(
                "truncated {what}: expected {n} bytes, found {remaining}"
            )));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn write_features(store: &FeatureStore, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, store.to_bytes()?)?;
    Ok(())
}

pub fn read_features(path: impl AsRef<Path>) -> Result<FeatureStore> {
    FeatureStore::from_bytes(&fs::read(path)?)
}

/// Prior over the PNR position, expressed as a fraction of clip duration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum PnrPrior {
    Uniform,
    /// Beta distribution with mean `fraction` and `alpha + beta = concentration`.
    Beta { fraction: f64, concentration: f64 },
}

impl PnrPrior {
    pub const DEFAULT_CONCENTRATION: f64 = 20.0;

    pub fn beta_at(fraction: f64) -> Self {
        PnrPrior::Beta {
            fraction,
            concentration: Self::DEFAULT_CONCENTRATION,
        }
    }

    fn validate(&self) -> Result<()> {
        if let PnrPrior::Beta {
            fraction,
            concentration,
        } = *self
        {
            if !(fraction > 0.0 && fraction < 1.0) {
                return Err(Error::Config(format!(
                    "beta prior fraction must lie in (0, 1), got {fraction}"
                )));
            }
            if !(concentration > 0.0 && concentration.is_finite()) {
                return Err(Error::Config(format!(
                    "beta prior concentration must be positive, got {concentration}"
                )));
            }
        }
        Ok(())
    }
}

impl fmt::Display for PnrPrior {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PnrPrior::Uniform => f.write_str("uniform"),
            PnrPrior::Beta {
                fraction,
                concentration,
            } if *concentration == Self::DEFAULT_CONCENTRATION => write!(f, "beta@{fraction}"),
            PnrPrior::Beta {
                fraction,
                concentration,
            } => write!(f, "beta@{fraction}:{concentration}"),
        }
    }
}

/// Accepts `uniform`, `beta@F` or `beta@F:K` (K = concentration).
impl FromStr for PnrPrior {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "uniform" {
            return Ok(PnrPrior::Uniform);
        }
        let bad = || Error::Config(format!("invalid prior `{s}`, expected `uniform` or `beta@F`"));
        let rest = s.strip_prefix("beta@").ok_or_else(bad)?;
        let (frac, conc) = match rest.split_once(':') {
            Some((a, b)) => (a, Some(b)),
            None => (rest, None),
        };
        let fraction: f64 = frac.parse().map_err(|_| bad())?;
        let concentration = match conc {
            Some(c) => c.parse().map_err(|_| bad())?,
            None => Self::DEFAULT_CONCENTRATION,
        };
        let prior = PnrPrior::Beta {
            fraction,
            concentration,
        };
        prior.validate()?;
        Ok(prior)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub split: Split,
    pub clips: usize,
    pub p_pos: f64,
    pub prior: PnrPrior,
    pub feature_dim: usize,
    pub snr: f64,
    pub views: usize,
    pub fps: u32,
    pub num_frames: u32,
    /// Half-width, in frames, of the additive feature bump around the PNR.
    pub bump_half_width: u32,
    pub id_prefix: String,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            split: Split::Train,
            clips: 100,
            p_pos: 0.477,
            prior: PnrPrior::Uniform,
            feature_dim: 16,
            snr: 8.0,
            views: DEFAULT_VIEWS as usize,
            fps: DEFAULT_FPS,
            num_frames: DEFAULT_NUM_FRAMES,
            bump_half_width: 8,
            id_prefix: "c".into(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p_pos) {
            return Err(Error::Config(format!("p_pos must lie in [0, 1], got {}", self.p_pos)));
        }
        if !(self.snr >= 0.0 && self.snr.is_finite()) {
            return Err(Error::Config(format!("snr must be a non-negative number, got {}", self.snr)));
        }
        if self.feature_dim == 0 {
            return Err(Error::Config("feature_dim must be at least 1".into()));
        }
        if self.views == 0 {
            return Err(Error::Config("views must be at least 1".into()));
        }
        if self.fps == 0 || self.num_frames == 0 {
            return Err(Error::Config("fps and num_frames must be positive".into()));
        }
        self.prior.validate()
    }
}

/// Bump profile: 1 at the PNR, falling linearly to 1/2 at the window edge.
pub fn bump_weight(distance: u32, half_width: u32) -> f64 {
    if distance > half_width {
        0.0
    } else if half_width == 0 {
        1.0
    } else {
        1.0 - 0.5 * f64::from(distance) / f64::from(half_width)
    }
}

/// Labels of a synthetic split without features. Matches the manifest
/// returned by [`generate_synthetic`] for the same `(cfg, seed)`.
pub fn generate_annotations(cfg: &SynthConfig, seed: u64) -> Result<DatasetManifest> {
    cfg.validate()?;
    let mut label_rng = crate::rng_for(seed, 0);
    let beta = match cfg.prior {
        PnrPrior::Uniform => None,
        PnrPrior::Beta {
            fraction,
            concentration,
        } => Some(
            Beta::new(fraction * concentration, (1.0 - fraction) * concentration)
                .map_err(|e| Error::Config(format!("beta prior: {e}")))?,
        ),
    };
    let width = cfg.clips.max(1).to_string().len().max(5);
    let mut clips = Vec::with_capacity(cfg.clips);
    for i in 0..cfg.clips {
        let positive = label_rng.random::<f64>() < cfg.p_pos;
        let pnr_frame = if positive {
            let u = match &beta {
                None => label_rng.random::<f64>(),
                Some(b) => b.sample(&mut label_rng),
            };
            let f = (u * f64::from(cfg.num_frames)).floor() as u32;
            Some(f.min(cfg.num_frames - 1))
        } else {
            None
        };
        clips.push(ClipAnnotation {
            clip_id: format!("{}{:0width$}", cfg.id_prefix, i, width = width),
            fps: cfg.fps,
            num_frames: cfg.num_frames,
            has_state_change: positive,
            pnr_frame,
        });
    }
    Ok(DatasetManifest {
        split: cfg.split,
        feature_dim: cfg.feature_dim as u32,
        views_per_clip: cfg.views as u32,
        clips,
    })
}

/// Generates a labelled synthetic split. Pure function of `(cfg, seed)`.
///
/// Positive clips add `snr · bump_weight(|f − pnr|)` to every feature channel
/// of frames near the PNR, identically in every view; views differ only in
/// their unit-variance Gaussian noise. Negative clips are pure noise.
pub fn generate_synthetic(cfg: &SynthConfig, seed: u64) -> Result<(DatasetManifest, FeatureStore)> {
    let manifest = generate_annotations(cfg, seed)?;
    let mut noise_rng = crate::rng_for(seed, 1);
    let frames = cfg.num_frames as usize;
    let mut store = FeatureStore::new(cfg.views, frames, cfg.feature_dim);
    for clip in &manifest.clips {
        let mut values = Vec::with_capacity(cfg.views * frames * cfg.feature_dim);
        for _view in 0..cfg.views {
            for f in 0..frames as u32 {
                let shift = clip
                    .pnr_frame
                    .map(|p| cfg.snr * bump_weight(f.abs_diff(p), cfg.bump_half_width))
                    .unwrap_or(0.0);
                for _ in 0..cfg.feature_dim {
                    let noise: f64 = StandardNormal.sample(&mut noise_rng);
                    values.push((noise + shift) as f32);
                }
            }
        }
        store.insert(clip.clip_id.clone(), values)?;
    }
    Ok((manifest, store))
}
