//! Multi-task clip classifier with hand-written backpropagation.
//!
//! Every sampled frame goes through the same trunk: an input projection plus
//! a fixed sinusoidal slot encoding, then `depth` residual blocks
//! `e ← e + s · fc2(gelu(fc1(e)))` where `s` is the drop-path scale of the
//! block for this clip. Frame embeddings are mean-pooled and fed to two linear
//! heads: OSCC (2 classes) and temporal localization (`n_frames + 1` classes).
//!
//! All arithmetic is `f64`; gradients are exact for a given drop-path draw.

use std::fs;
use std::path::Path;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::Sample;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub feature_dim: usize,
    pub hidden_dim: usize,
    pub depth: usize,
    pub drop_path_rate: f64,
    pub n_frames: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            feature_dim: 16,
            hidden_dim: 256,
            depth: 2,
            drop_path_rate: 0.1,
            n_frames: 16,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 || self.hidden_dim == 0 || self.depth == 0 || self.n_frames == 0 {
            return Err(Error::Config(
                "feature_dim, hidden_dim, depth and n_frames must all be at least 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.drop_path_rate) {
            return Err(Error::Config(format!(
                "drop_path_rate must lie in [0, 1), got {}",
                self.drop_path_rate
            )));
        }
        Ok(())
    }

    pub fn temporal_classes(&self) -> usize {
        self.n_frames + 1
    }
}

/// Dense layer `y = x · W + b` with `W` stored row-major as `[in × out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weight: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    fn init(in_dim: usize, out_dim: usize, rng: &mut crate::Rng) -> Self {
        let normal = Normal::new(0.0, 1.0 / (in_dim as f64).sqrt()).expect("positive std");
        Self {
            in_dim,
            out_dim,
            weight: (0..in_dim * out_dim).map(|_| normal.sample(rng)).collect(),
            bias: vec![0.0; out_dim],
        }
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.bias);
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let row = &self.weight[i * self.out_dim..(i + 1) * self.out_dim];
            for (o, w) in out.iter_mut().zip(row) {
                *o += xi * w;
            }
        }
    }

    /// Accumulates `dW += xᵀ g`, `db += g` into `grad` and `dx += W g` into `dx`.
    fn backward(&self, x: &[f64], g: &[f64], grad: &mut Linear, dx: Option<&mut [f64]>) {
        for (b, gi) in grad.bias.iter_mut().zip(g) {
            *b += gi;
        }
        for (i, &xi) in x.iter().enumerate() {
            let row = &mut grad.weight[i * self.out_dim..(i + 1) * self.out_dim];
            for (w, gj) in row.iter_mut().zip(g) {
                *w += xi * gj;
            }
        }
        if let Some(dx) = dx {
            for (i, d) in dx.iter_mut().enumerate() {
                let row = &self.weight[i * self.out_dim..(i + 1) * self.out_dim];
                *d += row.iter().zip(g).map(|(w, gj)| w * gj).sum::<f64>();
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    pub fc1: Linear,
    pub fc2: Linear,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub embed: Linear,
    pub blocks: Vec<Block>,
    pub oscc_head: Linear,
    pub temporal_head: Linear,
}

/// Borrowed view of one parameter tensor, in declaration order.
pub struct ParamTensor<'a> {
    pub name: String,
    /// Layer index for layer-wise lr decay: embedding and block 0 → 0,
    /// block `l` → `l`, heads → `depth`.
    pub layer: usize,
    pub shape: Vec<usize>,
    pub data: &'a [f64],
}

pub struct ParamTensorMut<'a> {
    pub name: String,
    pub layer: usize,
    pub data: &'a mut Vec<f64>,
}

impl ModelParams {
    /// Weights `N(0, 1/fan_in)`, biases zero. Deterministic in `seed`.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = crate::rng_for(seed, 0);
        let h = config.hidden_dim;
        let embed = Linear::init(config.feature_dim, h, &mut rng);
        let blocks = (0..config.depth)
            .map(|_| Block {
                fc1: Linear::init(h, h, &mut rng),
                fc2: Linear::init(h, h, &mut rng),
            })
            .collect();
        let oscc_head = Linear::init(h, 2, &mut rng);
        let temporal_head = Linear::init(h, config.temporal_classes(), &mut rng);
        Ok(Self {
            config: config.clone(),
            embed,
            blocks,
            oscc_head,
            temporal_head,
        })
    }

    pub fn zeros(config: &ModelConfig) -> Self {
        let h = config.hidden_dim;
        Self {
            config: config.clone(),
            embed: Linear::zeros(config.feature_dim, h),
            blocks: (0..config.depth)
                .map(|_| Block {
                    fc1: Linear::zeros(h, h),
                    fc2: Linear::zeros(h, h),
                })
                .collect(),
            oscc_head: Linear::zeros(h, 2),
            temporal_head: Linear::zeros(h, config.temporal_classes()),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.config)
    }

    fn linears(&self) -> Vec<(String, usize, &Linear)> {
        let mut out = vec![("embed".to_string(), 0, &self.embed)];
        for (l, b) in self.blocks.iter().enumerate() {
            out.push((format!("blocks.{l}.fc1"), l, &b.fc1));
            out.push((format!("blocks.{l}.fc2"), l, &b.fc2));
        }
        let depth = self.config.depth;
        out.push(("oscc_head".into(), depth, &self.oscc_head));
        out.push(("temporal_head".into(), depth, &self.temporal_head));
        out
    }

    pub fn tensors(&self) -> Vec<ParamTensor<'_>> {
        let mut out = Vec::new();
        for (name, layer, lin) in self.linears() {
            out.push(ParamTensor {
                name: format!("{name}.weight"),
                layer,
                shape: vec![lin.in_dim, lin.out_dim],
                data: &lin.weight,
            });
            out.push(ParamTensor {
                name: format!("{name}.bias"),
                layer,
                shape: vec![lin.out_dim],
                data: &lin.bias,
            });
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<ParamTensorMut<'_>> {
        let depth = self.config.depth;
        let mut lins: Vec<(String, usize, &mut Linear)> = vec![("embed".into(), 0, &mut self.embed)];
        for (l, b) in self.blocks.iter_mut().enumerate() {
            lins.push((format!("blocks.{l}.fc1"), l, &mut b.fc1));
            lins.push((format!("blocks.{l}.fc2"), l, &mut b.fc2));
        }
        lins.push(("oscc_head".into(), depth, &mut self.oscc_head));
        lins.push(("temporal_head".into(), depth, &mut self.temporal_head));
        let mut out = Vec::new();
        for (name, layer, lin) in lins {
            out.push(ParamTensorMut {
                name: format!("{name}.weight"),
                layer,
                data: &mut lin.weight,
            });
            out.push(ParamTensorMut {
                name: format!("{name}.bias"),
                layer,
                data: &mut lin.bias,
            });
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    /// Order-sensitive FNV-1a hash of the raw parameter bits.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for t in self.tensors() {
            for v in t.data {
                for b in v.to_bits().to_le_bytes() {
                    h ^= u64::from(b);
                    h = h.wrapping_mul(0x0100_0000_01b3);
                }
            }
        }
        h
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Logits {
    pub oscc: Vec<f64>,
    pub temporal: Vec<f64>,
}

/// Activations kept for the backward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    /// `e⁰ … e^depth`, each `[n_frames × hidden]`.
    streams: Vec<Vec<f64>>,
    /// fc1 outputs before the activation, per block.
    pre_act: Vec<Vec<f64>>,
    /// gelu outputs, per block.
    act: Vec<Vec<f64>>,
    scales: Vec<f64>,
    pooled: Vec<f64>,
}

impl ForwardCache {
    pub fn drop_path_scales(&self) -> &[f64] {
        &self.scales
    }

    pub fn pooled(&self) -> &[f64] {
        &self.pooled
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn gelu(a: f64) -> f64 {
    0.5 * a * (1.0 + (GELU_C * (a + GELU_A * a * a * a)).tanh())
}

fn gelu_grad(a: f64) -> f64 {
    let t = (GELU_C * (a + GELU_A * a * a * a)).tanh();
    0.5 * (1.0 + t) + 0.5 * a * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * a * a)
}

/// Fixed per-channel gain of frame slot `slot` out of `n_slots`:
/// `1 + cos(π k (2·slot + 1) / (2·n_slots))` with `k = channel mod n_slots`.
/// The embedding is multiplied by it, so a frame's position survives mean
/// pooling as a linear direction.
pub fn slot_gain(slot: usize, n_slots: usize, dim: usize) -> Vec<f64> {
    let n = n_slots.max(1) as f64;
    (0..dim)
        .map(|c| {
            let k = (c % n_slots.max(1)) as f64;
            1.0 + (std::f64::consts::PI * k * (2 * slot + 1) as f64 / (2.0 * n)).cos()
        })
        .collect()
}

/// Draws one drop-path scale per block: `0` with probability `rate`,
/// `1 / (1 − rate)` otherwise. Eval mode always returns `1`.
pub fn draw_drop_path(config: &ModelConfig, mode: Mode, rng: &mut crate::Rng) -> Vec<f64> {
    match mode {
        Mode::Eval => vec![1.0; config.depth],
        Mode::Train => {
            let rate = config.drop_path_rate;
            let keep = 1.0 / (1.0 - rate);
            (0..config.depth)
                .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
                .collect()
        }
    }
}

pub fn forward(
    params: &ModelParams,
    features: &[f64],
    mode: Mode,
    rng: &mut crate::Rng,
) -> Result<(Logits, ForwardCache)> {
    let scales = draw_drop_path(&params.config, mode, rng);
    forward_with_scales(params, features, &scales)
}

pub fn forward_eval(params: &ModelParams, features: &[f64]) -> Result<Logits> {
    let scales = vec![1.0; params.config.depth];
    forward_with_scales(params, features, &scales).map(|(l, _)| l)
}

/// Forward pass with explicit per-block drop-path scales.
pub fn forward_with_scales(
    params: &ModelParams,
    features: &[f64],
    scales: &[f64],
) -> Result<(Logits, ForwardCache)> {
    let cfg = &params.config;
    let (n, f, h) = (cfg.n_frames, cfg.feature_dim, cfg.hidden_dim);
    if features.len() != n * f {
        return Err(Error::Shape(format!(
            "expected {n}×{f} = {} feature values, got {}",
            n * f,
            features.len()
        )));
    }
    if scales.len() != cfg.depth {
        return Err(Error::Shape(format!(
            "expected {} drop-path scales, got {}",
            cfg.depth,
            scales.len()
        )));
    }

    let mut e = vec![0.0; n * h];
    for i in 0..n {
        let row = &mut e[i * h..(i + 1) * h];
        params.embed.apply(&features[i * f..(i + 1) * f], row);
        for (v, g) in row.iter_mut().zip(slot_gain(i, n, h)) {
            *v *= g;
        }
    }
    let mut streams = Vec::with_capacity(cfg.depth + 1);
    let mut pre_act = Vec::with_capacity(cfg.depth);
    let mut act = Vec::with_capacity(cfg.depth);
    let mut branch = vec![0.0; h];
    for (block, &s) in params.blocks.iter().zip(scales) {
        let mut a = vec![0.0; n * h];
        let mut u = vec![0.0; n * h];
        let mut next = e.clone();
        if s != 0.0 {
            for i in 0..n {
                let rows = i * h..(i + 1) * h;
                block.fc1.apply(&e[rows.clone()], &mut a[rows.clone()]);
                for (ui, ai) in u[rows.clone()].iter_mut().zip(&a[rows.clone()]) {
                    *ui = gelu(*ai);
                }
                block.fc2.apply(&u[rows.clone()], &mut branch);
                for (x, r) in next[rows].iter_mut().zip(&branch) {
                    *x += s * r;
                }
            }
        }
        streams.push(e);
        pre_act.push(a);
        act.push(u);
        e = next;
    }
    let mut pooled = vec![0.0; h];
    for i in 0..n {
        for (p, v) in pooled.iter_mut().zip(&e[i * h..(i + 1) * h]) {
            *p += v;
        }
    }
    let inv_n = 1.0 / n as f64;
    pooled.iter_mut().for_each(|p| *p *= inv_n);
    streams.push(e);

    let mut oscc = vec![0.0; 2];
    params.oscc_head.apply(&pooled, &mut oscc);
    let mut temporal = vec![0.0; cfg.temporal_classes()];
    params.temporal_head.apply(&pooled, &mut temporal);
    Ok((
        Logits { oscc, temporal },
        ForwardCache {
            streams,
            pre_act,
            act,
            scales: scales.to_vec(),
            pooled,
        },
    ))
}

/// Accumulates parameter gradients given the gradients of both heads' logits.
fn backward(
    params: &ModelParams,
    features: &[f64],
    cache: &ForwardCache,
    d_oscc: &[f64],
    d_temporal: &[f64],
    grads: &mut ModelParams,
) {
    let cfg = &params.config;
    let (n, f, h) = (cfg.n_frames, cfg.feature_dim, cfg.hidden_dim);
    let mut d_pooled = vec![0.0; h];
    params
        .oscc_head
        .backward(&cache.pooled, d_oscc, &mut grads.oscc_head, Some(&mut d_pooled));
    params.temporal_head.backward(
        &cache.pooled,
        d_temporal,
        &mut grads.temporal_head,
        Some(&mut d_pooled),
    );
    let inv_n = 1.0 / n as f64;
    let mut de: Vec<f64> = (0..n).flat_map(|_| d_pooled.iter().map(|g| g * inv_n)).collect();

    let mut dr = vec![0.0; h];
    let mut du = vec![0.0; h];
    for l in (0..cfg.depth).rev() {
        let s = cache.scales[l];
        if s == 0.0 {
            continue;
        }
        let block = &params.blocks[l];
        let gblock = &mut grads.blocks[l];
        for i in 0..n {
            let rows = i * h..(i + 1) * h;
            for (r, d) in dr.iter_mut().zip(&de[rows.clone()]) {
                *r = s * d;
            }
            du.iter_mut().for_each(|v| *v = 0.0);
            block
                .fc2
                .backward(&cache.act[l][rows.clone()], &dr, &mut gblock.fc2, Some(&mut du));
            for (d, a) in du.iter_mut().zip(&cache.pre_act[l][rows.clone()]) {
                *d *= gelu_grad(*a);
            }
            block.fc1.backward(
                &cache.streams[l][rows.clone()],
                &du,
                &mut gblock.fc1,
                Some(&mut de[rows]),
            );
        }
    }
    for i in 0..n {
        let rows = i * h..(i + 1) * h;
        for (d, g) in de[rows.clone()].iter_mut().zip(slot_gain(i, n, h)) {
            *d *= g;
        }
        params.embed.backward(
            &features[i * f..(i + 1) * f],
            &de[rows],
            &mut grads.embed,
            None,
        );
    }
}

/// Numerically stable log-softmax.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    log_softmax(logits).into_iter().map(f64::exp).collect()
}

/// Soft-target cross-entropy `−Σ t · log softmax(z)` and its gradient
/// `softmax(z) · Σt − t` with respect to `z`.
pub fn soft_cross_entropy(logits: &[f64], target: &[f64]) -> (f64, Vec<f64>) {
    let logp = log_softmax(logits);
    let loss = -logp.iter().zip(target).map(|(lp, t)| t * lp).sum::<f64>();
    let mass: f64 = target.iter().sum();
    let grad = logp
        .iter()
        .zip(target)
        .map(|(lp, t)| lp.exp() * mass - t)
        .collect();
    (loss, grad)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub l_oscc: f64,
    pub l_tl: f64,
    pub lambda1: f64,
    pub lambda2: f64,
}

impl LossBreakdown {
    pub fn new(l_oscc: f64, l_tl: f64, lambda1: f64, lambda2: f64) -> Self {
        Self {
            total: lambda1 * l_oscc + lambda2 * l_tl,
            l_oscc,
            l_tl,
            lambda1,
            lambda2,
        }
    }
}

fn check_batch(params: &ModelParams, batch: &[Sample]) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::Batch("empty batch".into()));
    }
    let classes = params.config.temporal_classes();
    for s in batch {
        if s.targets.oscc.len() != 2 || s.targets.temporal.len() != classes {
            return Err(Error::Shape(format!(
                "targets of `{}` do not match the model heads (2, {classes})",
                s.clip_id
            )));
        }
    }
    Ok(())
}

/// Weighted multi-task loss and its exact gradient for fixed drop-path scales
/// (`scales[b]` belongs to `batch[b]`).
pub fn loss_and_grad_with_scales(
    params: &ModelParams,
    batch: &[Sample],
    lambda1: f64,
    lambda2: f64,
    scales: &[Vec<f64>],
) -> Result<(LossBreakdown, ModelParams)> {
    check_batch(params, batch)?;
    if scales.len() != batch.len() {
        return Err(Error::Shape("one drop-path scale set per sample required".into()));
    }
    let inv_b = 1.0 / batch.len() as f64;
    let mut grads = params.zeros_like();
    let (mut l_oscc, mut l_tl) = (0.0, 0.0);
    for (sample, s) in batch.iter().zip(scales) {
        let (logits, cache) = forward_with_scales(params, &sample.features, s)?;
        let (lo, go) = soft_cross_entropy(&logits.oscc, &sample.targets.oscc);
        let (lt, gt) = soft_cross_entropy(&logits.temporal, &sample.targets.temporal);
        if !lo.is_finite() || !lt.is_finite() {
            return Err(Error::NonFinite {
                what: "loss".into(),
                clip_id: sample.clip_id.clone(),
            });
        }
        l_oscc += lo;
        l_tl += lt;
        let go: Vec<f64> = go.iter().map(|g| g * lambda1 * inv_b).collect();
        let gt: Vec<f64> = gt.iter().map(|g| g * lambda2 * inv_b).collect();
        backward(params, &sample.features, &cache, &go, &gt, &mut grads);
    }
    Ok((
        LossBreakdown::new(l_oscc * inv_b, l_tl * inv_b, lambda1, lambda2),
        grads,
    ))
}

pub fn loss_and_grad(
    params: &ModelParams,
    batch: &[Sample],
    lambda1: f64,
    lambda2: f64,
    mode: Mode,
    rng: &mut crate::Rng,
) -> Result<(LossBreakdown, ModelParams)> {
    let scales: Vec<Vec<f64>> = batch
        .iter()
        .map(|_| draw_drop_path(&params.config, mode, rng))
        .collect();
    loss_and_grad_with_scales(params, batch, lambda1, lambda2, &scales)
}

/// Loss only, for fixed drop-path scales.
pub fn loss_with_scales(
    params: &ModelParams,
    batch: &[Sample],
    lambda1: f64,
    lambda2: f64,
    scales: &[Vec<f64>],
) -> Result<LossBreakdown> {
    check_batch(params, batch)?;
    let inv_b = 1.0 / batch.len() as f64;
    let (mut l_oscc, mut l_tl) = (0.0, 0.0);
    for (sample, s) in batch.iter().zip(scales) {
        let (logits, _) = forward_with_scales(params, &sample.features, s)?;
        l_oscc += soft_cross_entropy(&logits.oscc, &sample.targets.oscc).0;
        l_tl += soft_cross_entropy(&logits.temporal, &sample.targets.temporal).0;
    }
    Ok(LossBreakdown::new(l_oscc * inv_b, l_tl * inv_b, lambda1, lambda2))
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"EGCK";
const CHECKPOINT_VERSION: u32 = 1;

/// Checkpoint layout (little-endian): `EGCK`, u32 version, u32 feature_dim,
/// u32 hidden_dim, u32 depth, u32 n_frames, f64 drop_path_rate, u32 tensor
/// count, then per tensor: u32 ndim, u32 dims, f64 values.
pub fn checkpoint_bytes(params: &ModelParams) -> Vec<u8> {
    let c = &params.config;
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for v in [c.feature_dim, c.hidden_dim, c.depth, c.n_frames] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.extend_from_slice(&c.drop_path_rate.to_le_bytes());
    let tensors = params.tensors();
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
        for d in &t.shape {
            out.extend_from_slice(&(*d as u32).to_le_bytes());
        }
        for v in t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn params_from_checkpoint(bytes: &[u8]) -> Result<ModelParams> {
    let mut pos = 0usize;
    let mut take = |n: usize, what: &str| -> Result<&[u8]> {
        if bytes.len() - pos < n {
            return Err(Error::Checkpoint(format!(
                "truncated {what}: expected {n} bytes, found {}",
                bytes.len() - pos
            )));
        }
        let s = &bytes[pos..pos + n];
        pos += n;
        Ok(s)
    };
    if take(4, "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic, expected `EGCK`".into()));
    }
    let u32_at = |b: &[u8]| u32::from_le_bytes(b.try_into().unwrap());
    let version = u32_at(take(4, "version")?);
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let mut dims = [0usize; 4];
    for d in dims.iter_mut() {
        *d = u32_at(take(4, "config")?) as usize;
    }
    let rate = f64::from_le_bytes(take(8, "config")?.try_into().unwrap());
    let config = ModelConfig {
        feature_dim: dims[0],
        hidden_dim: dims[1],
        depth: dims[2],
        n_frames: dims[3],
        drop_path_rate: rate,
    };
    config
        .validate()
        .map_err(|e| Error::Checkpoint(format!("invalid model config: {e}")))?;
    let mut params = ModelParams::zeros(&config);
    let expected: Vec<Vec<usize>> = params.tensors().into_iter().map(|t| t.shape).collect();
    let count = u32_at(take(4, "tensor count")?) as usize;
    if count != expected.len() {
        return Err(Error::Checkpoint(format!(
            "expected {} tensors, found {count}",
            expected.len()
        )));
    }
    for (t, want) in params.tensors_mut().into_iter().zip(expected) {
        let ndim = u32_at(take(4, "tensor rank")?) as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(u32_at(take(4, "tensor shape")?) as usize);
        }
        if shape != want {
            return Err(Error::Checkpoint(format!(
                "tensor `{}` has shape {shape:?}, expected {want:?}",
                t.name
            )));
        }
        let raw = take(t.data.len() * 8, &format!("values of `{}`", t.name))?;
        for (v, c) in t.data.iter_mut().zip(raw.chunks_exact(8)) {
            *v = f64::from_le_bytes(c.try_into().unwrap());
        }
    }
    if pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes",
            bytes.len() - pos
        )));
    }
    Ok(params)
}

pub fn save_checkpoint(params: &ModelParams, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, checkpoint_bytes(params))?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelParams> {
    params_from_checkpoint(&fs::read(path)?)
}
