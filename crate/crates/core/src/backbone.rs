//! Small encoder-decoder segmentation network whose normalization layers
//! accept per-sample modulation.
//!
//! Topology for `depth = D` resolution levels:
//!
//! ```text
//! enc_l      conv3x3 -> norm -> relu, then 2x2 average pool   (l = 0..D-2)
//! bottom_a   conv3x3 -> norm -> relu                          (level D-1)
//! bottom_b   conv3x3 -> norm -> relu
//! dec_l      conv3x3 -> norm -> relu at level l+1, nearest 2x upsample,
//!            plus the enc_l skip                              (l = D-2..0)
//! refine     conv3x3 -> norm -> relu at full resolution (optional)
//! head       conv1x1 -> logits
//! ```

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::modulator::{LayerModulation, ModulationSet};
use crate::nn::{self, Adam, Conv2d, ConvGrads, Tensor};
use crate::volume::{Image, SegmentationMask};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    /// Per-channel statistics; batch statistics while training, running
    /// statistics at inference.
    Batch,
    /// Per-sample statistics over all channels and pixels, per-channel affine.
    Layer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchConfig {
    pub height: usize,
    pub width: usize,
    pub in_channels: usize,
    pub num_classes: usize,
    pub base_width: usize,
    /// Channel count is `base_width * 2^level`, capped here.
    pub max_width: usize,
    pub depth: usize,
    pub refine: bool,
    pub norm: NormKind,
    pub eps: f64,
    pub momentum: f64,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            in_channels: 1,
            num_classes: 4,
            base_width: 8,
            max_width: 16,
            depth: 3,
            refine: true,
            norm: NormKind::Batch,
            eps: 1e-5,
            momentum: 0.1,
        }
    }
}

impl ArchConfig {
    fn level_width(&self, level: usize) -> usize {
        (self.base_width << level.min(16)).min(self.max_width.max(self.base_width))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormEntry {
    pub layer_id: String,
    pub channels: usize,
}

/// Normalization layers in topological (encoder to decoder) order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormRegistry {
    entries: Vec<NormEntry>,
}

impl NormRegistry {
    pub fn new(entries: Vec<NormEntry>) -> Result<Self> {
        let mut seen = HashSet::new();
        for e in &entries {
            if !seen.insert(e.layer_id.as_str()) {
                return Err(Error::Config(format!("duplicate layer id '{}'", e.layer_id)));
            }
            if e.channels == 0 {
                return Err(Error::Config(format!("layer '{}' has no channels", e.layer_id)));
            }
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[NormEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total_channels(&self) -> usize {
        self.entries.iter().map(|e| e.channels).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormLayer {
    pub layer_id: String,
    pub kind: NormKind,
    pub channels: usize,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub eps: f64,
    /// Frozen affine scale.
    pub scale: Vec<f64>,
    /// Frozen affine shift.
    pub shift: Vec<f64>,
}

impl NormLayer {
    fn new(layer_id: String, kind: NormKind, channels: usize, eps: f64) -> Self {
        Self {
            layer_id,
            kind,
            channels,
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            eps,
            scale: vec![1.0; channels],
            shift: vec![0.0; channels],
        }
    }

    pub fn running_std(&self) -> Vec<f64> {
        self.running_var
            .iter()
            .map(|v| (v + self.eps).sqrt())
            .collect()
    }
}

/// All parameters and buffers of the segmentation network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneWeights {
    pub convs: Vec<Conv2d>,
    pub norms: Vec<NormLayer>,
    pub head: Conv2d,
    pub frozen: bool,
}

impl BackboneWeights {
    /// SHA-256 over every parameter and running statistic, bit-exact.
    pub fn checksum(&self) -> String {
        let mut hasher = Sha256::new();
        let mut feed = |xs: &[f64]| {
            for x in xs {
                hasher.update(x.to_bits().to_le_bytes());
            }
        };
        for c in self.convs.iter().chain(std::iter::once(&self.head)) {
            feed(&c.weight);
            feed(&c.bias);
        }
        for n in &self.norms {
            feed(&n.running_mean);
            feed(&n.running_var);
            feed(&n.scale);
            feed(&n.shift);
        }
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    fn trainable_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for c in self.convs.iter_mut() {
            out.push(&mut c.weight);
            out.push(&mut c.bias);
        }
        for n in self.norms.iter_mut() {
            out.push(&mut n.scale);
            out.push(&mut n.shift);
        }
        out.push(&mut self.head.weight);
        out.push(&mut self.head.bias);
        out
    }

    /// Trainable parameters flattened in a fixed order (no running statistics).
    pub fn trainable_values(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for c in &self.convs {
            out.extend_from_slice(&c.weight);
            out.extend_from_slice(&c.bias);
        }
        for n in &self.norms {
            out.extend_from_slice(&n.scale);
            out.extend_from_slice(&n.shift);
        }
        out.extend_from_slice(&self.head.weight);
        out.extend_from_slice(&self.head.bias);
        out
    }
}

#[derive(Debug, Clone)]
struct BlockSpec {
    in_ch: usize,
    out_ch: usize,
}

/// Network topology; weights live in [`BackboneWeights`].
#[derive(Debug, Clone)]
pub struct Backbone {
    arch: ArchConfig,
    blocks: Vec<BlockSpec>,
    registry: NormRegistry,
}

/// Softmax prediction for one image, pixel-major (`d x C`).
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMap {
    height: usize,
    width: usize,
    classes: usize,
    logits: Vec<f64>,
    probs: Vec<f64>,
    log_probs: Vec<f64>,
}

impl ProbMap {
    /// Row-wise log-softmax of pixel-major logits.
    pub fn from_logits(height: usize, width: usize, classes: usize, logits: Vec<f64>) -> Result<Self> {
        if classes < 2 {
            return Err(Error::Config("a probability map needs at least 2 classes".into()));
        }
        if logits.len() != height * width * classes {
            return Err(Error::Shape(format!(
                "{} logits for {height}x{width}x{classes}",
                logits.len()
            )));
        }
        let mut probs = vec![0.0; logits.len()];
        let mut log_probs = vec![0.0; logits.len()];
        for ((row, p), lp) in logits
            .chunks_exact(classes)
            .zip(probs.chunks_exact_mut(classes))
            .zip(log_probs.chunks_exact_mut(classes))
        {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if !max.is_finite() {
                return Err(Error::Validation("non-finite logits".into()));
            }
            let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
            let lse = max + sum.ln();
            for c in 0..classes {
                lp[c] = row[c] - lse;
                p[c] = lp[c].exp();
            }
        }
        Ok(Self {
            height,
            width,
            classes,
            logits,
            probs,
            log_probs,
        })
    }

    /// Wraps an explicit probability table; rows must lie on the simplex.
    /// Logits are set to `ln p` (negative infinity for zero entries).
    pub fn from_probs(height: usize, width: usize, classes: usize, probs: Vec<f64>) -> Result<Self> {
        if classes < 2 {
            return Err(Error::Config("a probability map needs at least 2 classes".into()));
        }
        if probs.len() != height * width * classes {
            return Err(Error::Shape(format!(
                "{} probabilities for {height}x{width}x{classes}",
                probs.len()
            )));
        }
        for row in probs.chunks_exact(classes) {
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::Argument("probabilities must lie in [0, 1]".into()));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-6 {
                return Err(Error::Argument(format!("probability row sums to {s}")));
            }
        }
        let log_probs: Vec<f64> = probs.iter().map(|p| p.ln()).collect();
        Ok(Self {
            height,
            width,
            classes,
            logits: log_probs.clone(),
            probs,
            log_probs,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn num_pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn num_classes(&self) -> usize {
        self.classes
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn log_probs(&self) -> &[f64] {
        &self.log_probs
    }

    pub fn row(&self, pixel: usize) -> &[f64] {
        &self.probs[pixel * self.classes..(pixel + 1) * self.classes]
    }

    /// Row-wise argmax with the lowest class index winning ties.
    pub fn argmax(&self) -> SegmentationMask {
        let labels = argmax_rows(&self.probs, self.classes);
        SegmentationMask::new(self.height, self.width, self.classes, labels)
            .expect("argmax labels are in range")
    }
}

pub fn argmax_rows(table: &[f64], classes: usize) -> Vec<u32> {
    table
        .chunks_exact(classes)
        .map(|row| {
            let mut best = 0;
            for c in 1..classes {
                if row[c] > row[best] {
                    best = c;
                }
            }
            best as u32
        })
        .collect()
}

/// Normalized and modulated activations of one layer, for inspection.
#[derive(Debug, Clone)]
pub struct LayerTrace {
    pub layer_id: String,
    /// Output of the frozen normalization, before modulation.
    pub normalized: Vec<f64>,
    /// After modulation, before the activation.
    pub modulated: Vec<f64>,
}

#[derive(Debug, Clone)]
struct BlockCache {
    input: Tensor,
    xhat: Tensor,
    xbar: Tensor,
    z: Tensor,
    /// Per channel (batch norm) or per sample (layer norm).
    inv_std: Vec<f64>,
    batch_mean: Vec<f64>,
    batch_var: Vec<f64>,
}

#[derive(Debug, Clone)]
pub(crate) struct ForwardCache {
    blocks: Vec<BlockCache>,
    head_input: Tensor,
    train: bool,
}

/// Gradients of the trainable backbone parameters.
#[derive(Debug, Clone)]
pub(crate) struct BackboneGrads {
    convs: Vec<ConvGrads>,
    norm_scale: Vec<Vec<f64>>,
    norm_shift: Vec<Vec<f64>>,
    head: ConvGrads,
}

impl BackboneGrads {
    fn zeros(weights: &BackboneWeights) -> Self {
        Self {
            convs: weights.convs.iter().map(ConvGrads::zeros_like).collect(),
            norm_scale: weights.norms.iter().map(|n| vec![0.0; n.channels]).collect(),
            norm_shift: weights.norms.iter().map(|n| vec![0.0; n.channels]).collect(),
            head: ConvGrads::zeros_like(&weights.head),
        }
    }

    fn groups(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for c in &self.convs {
            out.push(&c.weight);
            out.push(&c.bias);
        }
        for (s, b) in self.norm_scale.iter().zip(&self.norm_shift) {
            out.push(s);
            out.push(b);
        }
        out.push(&self.head.weight);
        out.push(&self.head.bias);
        out
    }
}

pub(crate) struct BackwardOutput {
    pub params: Option<BackboneGrads>,
    /// Per-sample gradients w.r.t. the applied (gamma, beta).
    pub modulation: Option<Vec<ModulationSet>>,
}

/// Builds the topology and its normalization registry.
pub fn build_backbone(arch: &ArchConfig) -> Result<(Backbone, NormRegistry)> {
    let backbone = Backbone::new(arch.clone())?;
    let registry = backbone.registry.clone();
    Ok((backbone, registry))
}

impl Backbone {
    pub fn new(arch: ArchConfig) -> Result<Self> {
        if arch.num_classes < 2 {
            return Err(Error::Config(format!(
                "segmentation needs at least 2 classes, got {}",
                arch.num_classes
            )));
        }
        if arch.depth == 0 || arch.base_width == 0 || arch.in_channels == 0 {
            return Err(Error::Config("depth, base_width and in_channels must be positive".into()));
        }
        if arch.height == 0 || arch.width == 0 {
            return Err(Error::Config("input dimensions must be positive".into()));
        }
        let factor = 1usize
            .checked_shl(arch.depth as u32 - 1)
            .filter(|f| *f <= arch.height && *f <= arch.width)
            .ok_or_else(|| {
                Error::Config(format!(
                    "depth {} collapses a {}x{} input below 1x1",
                    arch.depth, arch.height, arch.width
                ))
            })?;
        if arch.height % factor != 0 || arch.width % factor != 0 {
            return Err(Error::Config(format!(
                "input {}x{} is not divisible by 2^{}",
                arch.height,
                arch.width,
                arch.depth - 1
            )));
        }
        if !(arch.eps > 0.0) || !(0.0..=1.0).contains(&arch.momentum) {
            return Err(Error::Config("eps must be > 0 and momentum in [0, 1]".into()));
        }

        let d = arch.depth;
        let mut blocks = Vec::new();
        let mut entries = Vec::new();
        let mut push = |id: String, in_ch: usize, out_ch: usize| {
            entries.push(NormEntry {
                layer_id: id,
                channels: out_ch,
            });
            blocks.push(BlockSpec { in_ch, out_ch });
        };
        let mut ch = arch.in_channels;
        for l in 0..d - 1 {
            push(format!("enc{l}"), ch, arch.level_width(l));
            ch = arch.level_width(l);
        }
        push("bottom_a".into(), ch, arch.level_width(d - 1));
        push(
            "bottom_b".into(),
            arch.level_width(d - 1),
            arch.level_width(d - 1),
        );
        for l in (0..d - 1).rev() {
            push(format!("dec{l}"), arch.level_width(l + 1), arch.level_width(l));
        }
        if arch.refine {
            push("refine".into(), arch.level_width(0), arch.level_width(0));
        }
        let registry = NormRegistry::new(entries)?;
        Ok(Self {
            arch,
            blocks,
            registry,
        })
    }

    pub fn arch(&self) -> &ArchConfig {
        &self.arch
    }

    pub fn registry(&self) -> &NormRegistry {
        &self.registry
    }

    pub fn init_weights(&self, seed: u64) -> BackboneWeights {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let convs = self
            .blocks
            .iter()
            .map(|b| Conv2d::init(b.in_ch, b.out_ch, 3, &mut rng))
            .collect();
        let norms = self
            .registry
            .entries()
            .iter()
            .map(|e| NormLayer::new(e.layer_id.clone(), self.arch.norm, e.channels, self.arch.eps))
            .collect();
        let head = Conv2d::init(self.arch.level_width(0), self.arch.num_classes, 1, &mut rng);
        BackboneWeights {
            convs,
            norms,
            head,
            frozen: false,
        }
    }

    /// Checks that `weights` was produced for this topology.
    pub fn check_weights(&self, weights: &BackboneWeights) -> Result<()> {
        let ok = weights.convs.len() == self.blocks.len()
            && weights.norms.len() == self.registry.len()
            && weights.convs.iter().zip(&self.blocks).all(|(c, b)| {
                c.in_ch == b.in_ch
                    && c.out_ch == b.out_ch
                    && c.weight.len() == b.in_ch * b.out_ch * c.kernel * c.kernel
            })
            && weights
                .norms
                .iter()
                .zip(self.registry.entries())
                .all(|(n, e)| n.layer_id == e.layer_id && n.channels == e.channels)
            && weights.head.out_ch == self.arch.num_classes
            && weights.head.in_ch == self.arch.level_width(0);
        if ok {
            Ok(())
        } else {
            Err(Error::Shape("weights do not match backbone topology".into()))
        }
    }

    fn check_images(&self, images: &[&Image]) -> Result<()> {
        if images.is_empty() {
            return Err(Error::Argument("no input images".into()));
        }
        if self.arch.in_channels != 1 {
            return Err(Error::Config("image inputs require in_channels = 1".into()));
        }
        for img in images {
            if img.dims() != (self.arch.height, self.arch.width) {
                return Err(Error::Shape(format!(
                    "input {:?} does not match architecture {}x{}",
                    img.dims(),
                    self.arch.height,
                    self.arch.width
                )));
            }
        }
        Ok(())
    }

    fn stack(&self, images: &[&Image]) -> Tensor {
        let (h, w) = (self.arch.height, self.arch.width);
        let mut data = Vec::with_capacity(images.len() * h * w);
        for img in images {
            data.extend_from_slice(img.data());
        }
        Tensor::from_vec(images.len(), 1, h, w, data)
    }

    /// Evaluation-mode prediction for a single image.
    pub fn forward(
        &self,
        weights: &BackboneWeights,
        image: &Image,
        modulation: Option<&ModulationSet>,
    ) -> Result<ProbMap> {
        let mods = modulation.map(std::slice::from_ref);
        Ok(self
            .forward_batch(weights, &[image], mods)?
            .pop()
            .expect("one output per input"))
    }

    /// Evaluation-mode prediction; `modulations`, when given, holds one set per image.
    pub fn forward_batch(
        &self,
        weights: &BackboneWeights,
        images: &[&Image],
        modulations: Option<&[ModulationSet]>,
    ) -> Result<Vec<ProbMap>> {
        let (logits, _) = self.run(weights, images, modulations, false)?;
        self.to_probmaps(&logits)
    }

    /// Activations of every normalization layer for one image (evaluation mode).
    pub fn trace(
        &self,
        weights: &BackboneWeights,
        image: &Image,
        modulation: Option<&ModulationSet>,
    ) -> Result<Vec<LayerTrace>> {
        let mods = modulation.map(std::slice::from_ref);
        let (_, cache) = self.run(weights, &[image], mods, false)?;
        Ok(cache
            .blocks
            .into_iter()
            .zip(self.registry.entries())
            .map(|(b, e)| LayerTrace {
                layer_id: e.layer_id.clone(),
                normalized: b.xbar.data,
                modulated: b.z.data,
            })
            .collect())
    }

    pub(crate) fn to_probmaps(&self, logits: &Tensor) -> Result<Vec<ProbMap>> {
        let (h, w, c) = (logits.h, logits.w, logits.c);
        let plane = h * w;
        (0..logits.n)
            .map(|n| {
                let sample = logits.sample(n);
                let mut pix = vec![0.0; plane * c];
                for k in 0..c {
                    for p in 0..plane {
                        pix[p * c + k] = sample[k * plane + p];
                    }
                }
                ProbMap::from_logits(h, w, c, pix)
            })
            .collect()
    }

    /// Packs pixel-major `d x C` gradients of several maps into an NCHW tensor.
    pub(crate) fn pack_logit_grads(&self, grads: &[Vec<f64>]) -> Tensor {
        let (h, w, c) = (self.arch.height, self.arch.width, self.arch.num_classes);
        let plane = h * w;
        let mut t = Tensor::zeros(grads.len(), c, h, w);
        for (n, g) in grads.iter().enumerate() {
            let dst = t.sample_mut(n);
            for p in 0..plane {
                for k in 0..c {
                    dst[k * plane + p] = g[p * c + k];
                }
            }
        }
        t
    }

    pub(crate) fn run(
        &self,
        weights: &BackboneWeights,
        images: &[&Image],
        modulations: Option<&[ModulationSet]>,
        train: bool,
    ) -> Result<(Tensor, ForwardCache)> {
        self.check_images(images)?;
        self.check_weights(weights)?;
        if let Some(mods) = modulations {
            if mods.len() != images.len() {
                return Err(Error::Modulation(format!(
                    "{} modulation sets for {} images",
                    mods.len(),
                    images.len()
                )));
            }
            for m in mods {
                m.validate(&self.registry)?;
            }
        }
        let input = self.stack(images);
        Ok(self.run_tensor(weights, input, modulations, train))
    }

    fn run_tensor(
        &self,
        weights: &BackboneWeights,
        input: Tensor,
        modulations: Option<&[ModulationSet]>,
        train: bool,
    ) -> (Tensor, ForwardCache) {
        let d = self.arch.depth;
        let mut caches = Vec::with_capacity(self.blocks.len());
        let mut skips = Vec::with_capacity(d - 1);
        let mut x = input;
        let mut idx = 0;
        for _ in 0..d - 1 {
            let (out, cache) = self.block_forward(idx, weights, x, modulations, train);
            caches.push(cache);
            x = nn::avg_pool2(&out);
            skips.push(out);
            idx += 1;
        }
        for _ in 0..2 {
            let (out, cache) = self.block_forward(idx, weights, x, modulations, train);
            caches.push(cache);
            x = out;
            idx += 1;
        }
        for l in (0..d - 1).rev() {
            let (out, cache) = self.block_forward(idx, weights, x, modulations, train);
            caches.push(cache);
            let mut up = nn::upsample2(&out);
            up.add_assign(&skips[l]);
            x = up;
            idx += 1;
        }
        if self.arch.refine {
            let (out, cache) = self.block_forward(idx, weights, x, modulations, train);
            caches.push(cache);
            x = out;
        }
        let logits = weights.head.forward(&x);
        (
            logits,
            ForwardCache {
                blocks: caches,
                head_input: x,
                train,
            },
        )
    }

    fn block_forward(
        &self,
        idx: usize,
        weights: &BackboneWeights,
        input: Tensor,
        modulations: Option<&[ModulationSet]>,
        train: bool,
    ) -> (Tensor, BlockCache) {
        let conv_out = weights.convs[idx].forward(&input);
        let norm = &weights.norms[idx];
        let (n, c, plane) = (conv_out.n, conv_out.c, conv_out.plane());
        let mut xhat = conv_out;
        let inv_std: Vec<f64>;
        let mut batch_mean = Vec::new();
        let mut batch_var = Vec::new();
        match norm.kind {
            NormKind::Batch => {
                let (mean, var) = if train {
                    let m = (n * plane) as f64;
                    let mut mean = vec![0.0; c];
                    let mut var = vec![0.0; c];
                    for ch in 0..c {
                        let mu = (0..n)
                            .map(|s| xhat.channel(s, ch).iter().sum::<f64>())
                            .sum::<f64>()
                            / m;
                        let v = (0..n)
                            .map(|s| xhat.channel(s, ch).iter().map(|x| (x - mu) * (x - mu)).sum::<f64>())
                            .sum::<f64>()
                            / m;
                        mean[ch] = mu;
                        var[ch] = v;
                    }
                    batch_mean = mean.clone();
                    batch_var = var.clone();
                    (mean, var)
                } else {
                    (norm.running_mean.clone(), norm.running_var.clone())
                };
                inv_std = var.iter().map(|v| 1.0 / (v + norm.eps).sqrt()).collect::<Vec<_>>();
                for s in 0..n {
                    for ch in 0..c {
                        let (mu, inv) = (mean[ch], inv_std[ch]);
                        xhat.channel_mut(s, ch).iter_mut().for_each(|x| *x = (*x - mu) * inv);
                    }
                }
            }
            NormKind::Layer => {
                let mut per_sample = vec![0.0; n];
                let m = (c * plane) as f64;
                for s in 0..n {
                    let sample = xhat.sample_mut(s);
                    let mu = sample.iter().sum::<f64>() / m;
                    let v = sample.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / m;
                    let inv = 1.0 / (v + norm.eps).sqrt();
                    sample.iter_mut().for_each(|x| *x = (*x - mu) * inv);
                    per_sample[s] = inv;
                }
                inv_std = per_sample;
            }
        }
        let mut xbar = xhat.clone();
        for s in 0..n {
            for ch in 0..c {
                let (a, b) = (norm.scale[ch], norm.shift[ch]);
                xbar.channel_mut(s, ch).iter_mut().for_each(|x| *x = a * *x + b);
            }
        }
        let mut z = xbar.clone();
        if let Some(mods) = modulations {
            for (s, set) in mods.iter().enumerate() {
                let layer = &set.layers[idx];
                for ch in 0..c {
                    let (scale, shift) = (layer.gamma[ch].exp(), layer.beta[ch]);
                    z.channel_mut(s, ch)
                        .iter_mut()
                        .for_each(|x| *x = scale * *x + shift);
                }
            }
        }
        let mut out = z.clone();
        out.data.iter_mut().for_each(|v| *v = v.max(0.0));
        (
            out,
            BlockCache {
                input,
                xhat,
                xbar,
                z,
                inv_std,
                batch_mean,
                batch_var,
            },
        )
    }

    /// Backpropagates `grad_logits` through a recorded forward pass.
    pub(crate) fn backward(
        &self,
        weights: &BackboneWeights,
        cache: &ForwardCache,
        grad_logits: &Tensor,
        modulations: Option<&[ModulationSet]>,
        want_params: bool,
        want_modulation: bool,
    ) -> BackwardOutput {
        let d = self.arch.depth;
        let n = grad_logits.n;
        let mut params = want_params.then(|| BackboneGrads::zeros(weights));
        let mut mod_grads: Option<Vec<ModulationSet>> = want_modulation
            .then(|| (0..n).map(|_| ModulationSet::identity(&self.registry)).collect());

        let mut g = weights
            .head
            .backward(
                &cache.head_input,
                grad_logits,
                params.as_mut().map(|p| &mut p.head),
                true,
            )
            .expect("input gradient requested");

        let mut idx = self.blocks.len();
        if self.arch.refine {
            idx -= 1;
            g = self
                .block_backward(idx, weights, cache, g, modulations, &mut params, &mut mod_grads, true)
                .expect("input gradient requested");
        }
        let mut skip_grads: Vec<Option<Tensor>> = vec![None; d.saturating_sub(1)];
        for l in 0..d - 1 {
            idx -= 1;
            skip_grads[l] = Some(g.clone());
            let up = nn::upsample2_backward(&g);
            g = self
                .block_backward(idx, weights, cache, up, modulations, &mut params, &mut mod_grads, true)
                .expect("input gradient requested");
        }
        for _ in 0..2 {
            idx -= 1;
            match self.block_backward(
                idx,
                weights,
                cache,
                g,
                modulations,
                &mut params,
                &mut mod_grads,
                idx > 0,
            ) {
                Some(next) => g = next,
                None => {
                    return BackwardOutput {
                        params,
                        modulation: mod_grads,
                    }
                }
            }
        }
        for l in (0..d - 1).rev() {
            idx -= 1;
            let mut gp = nn::avg_pool2_backward(&g);
            gp.add_assign(skip_grads[l].as_ref().expect("skip gradient recorded"));
            match self.block_backward(
                idx,
                weights,
                cache,
                gp,
                modulations,
                &mut params,
                &mut mod_grads,
                idx > 0,
            ) {
                Some(next) => g = next,
                None => break,
            }
        }
        BackwardOutput {
            params,
            modulation: mod_grads,
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn block_backward(
        &self,
        idx: usize,
        weights: &BackboneWeights,
        cache: &ForwardCache,
        grad_out: Tensor,
        modulations: Option<&[ModulationSet]>,
        params: &mut Option<BackboneGrads>,
        mod_grads: &mut Option<Vec<ModulationSet>>,
        want_input: bool,
    ) -> Option<Tensor> {
        let bc = &cache.blocks[idx];
        let norm = &weights.norms[idx];
        let (n, c, plane) = (bc.z.n, bc.z.c, bc.z.plane());

        // relu
        let mut g = grad_out;
        for (gv, zv) in g.data.iter_mut().zip(&bc.z.data) {
            if *zv <= 0.0 {
                *gv = 0.0;
            }
        }

        // modulation: z = exp(gamma) * xbar + beta
        if let Some(mods) = modulations {
            for s in 0..n {
                let layer: &LayerModulation = &mods[s].layers[idx];
                for ch in 0..c {
                    let scale = layer.gamma[ch].exp();
                    let gz = g.channel(s, ch);
                    if let Some(mg) = mod_grads.as_mut() {
                        let xb = bc.xbar.channel(s, ch);
                        let dot: f64 = gz.iter().zip(xb).map(|(a, b)| a * b).sum();
                        let sum: f64 = gz.iter().sum();
                        mg[s].layers[idx].gamma[ch] = scale * dot;
                        mg[s].layers[idx].beta[ch] = sum;
                    }
                    g.channel_mut(s, ch).iter_mut().for_each(|v| *v *= scale);
                }
            }
        } else if let Some(mg) = mod_grads.as_mut() {
            for s in 0..n {
                for ch in 0..c {
                    let gz = g.channel(s, ch);
                    let xb = bc.xbar.channel(s, ch);
                    mg[s].layers[idx].gamma[ch] = gz.iter().zip(xb).map(|(a, b)| a * b).sum();
                    mg[s].layers[idx].beta[ch] = gz.iter().sum();
                }
            }
        }

        if !want_input && params.is_none() {
            return None;
        }

        // frozen affine: xbar = scale * xhat + shift
        if let Some(p) = params.as_mut() {
            for ch in 0..c {
                let mut gs = 0.0;
                let mut gb = 0.0;
                for s in 0..n {
                    let gx = g.channel(s, ch);
                    let xh = bc.xhat.channel(s, ch);
                    gs += gx.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>();
                    gb += gx.iter().sum::<f64>();
                }
                p.norm_scale[idx][ch] += gs;
                p.norm_shift[idx][ch] += gb;
            }
        }
        for s in 0..n {
            for ch in 0..c {
                let a = norm.scale[ch];
                g.channel_mut(s, ch).iter_mut().for_each(|v| *v *= a);
            }
        }

        // normalization
        match (norm.kind, cache.train) {
            (NormKind::Batch, false) => {
                for s in 0..n {
                    for ch in 0..c {
                        let inv = bc.inv_std[ch];
                        g.channel_mut(s, ch).iter_mut().for_each(|v| *v *= inv);
                    }
                }
            }
            (NormKind::Batch, true) => {
                let m = (n * plane) as f64;
                for ch in 0..c {
                    let mut sum_g = 0.0;
                    let mut sum_gx = 0.0;
                    for s in 0..n {
                        let gx = g.channel(s, ch);
                        let xh = bc.xhat.channel(s, ch);
                        sum_g += gx.iter().sum::<f64>();
                        sum_gx += gx.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>();
                    }
                    let inv = bc.inv_std[ch];
                    for s in 0..n {
                        let xh = bc.xhat.channel(s, ch).to_vec();
                        for (v, xhv) in g.channel_mut(s, ch).iter_mut().zip(xh) {
                            *v = inv / m * (m * *v - sum_g - xhv * sum_gx);
                        }
                    }
                }
            }
            (NormKind::Layer, _) => {
                let m = (c * plane) as f64;
                for s in 0..n {
                    let inv = bc.inv_std[s];
                    let xh = bc.xhat.sample(s);
                    let gs = g.sample_mut(s);
                    let sum_g: f64 = gs.iter().sum();
                    let sum_gx: f64 = gs.iter().zip(xh).map(|(a, b)| a * b).sum();
                    for (v, xhv) in gs.iter_mut().zip(xh) {
                        *v = inv / m * (m * *v - sum_g - xhv * sum_gx);
                    }
                }
            }
        }

        weights.convs[idx].backward(
            &bc.input,
            &g,
            params.as_mut().map(|p| &mut p.convs[idx]),
            want_input,
        )
    }

    fn update_running_stats(&self, weights: &mut BackboneWeights, cache: &ForwardCache) {
        let mom = self.arch.momentum;
        for (norm, bc) in weights.norms.iter_mut().zip(&cache.blocks) {
            if norm.kind != NormKind::Batch || bc.batch_mean.is_empty() {
                continue;
            }
            let count = (bc.z.n * bc.z.plane()) as f64;
            let unbias = if count > 1.0 { count / (count - 1.0) } else { 1.0 };
            for ch in 0..norm.channels {
                norm.running_mean[ch] = (1.0 - mom) * norm.running_mean[ch] + mom * bc.batch_mean[ch];
                norm.running_var[ch] =
                    (1.0 - mom) * norm.running_var[ch] + mom * bc.batch_var[ch] * unbias;
            }
        }
    }

    /// Writes topology and weights to a single self-describing JSON archive.
    pub fn save_checkpoint(&self, weights: &BackboneWeights, path: &Path) -> Result<()> {
        let ckpt = CheckpointRef {
            format: CHECKPOINT_FORMAT,
            arch: &self.arch,
            registry: &self.registry,
            weights,
        };
        let text = serde_json::to_string(&ckpt).expect("checkpoint serializes");
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load_checkpoint(path: &Path) -> Result<(Backbone, BackboneWeights)> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ckpt: Checkpoint = serde_json::from_str(&text)
            .map_err(|e| Error::corrupt(path, format!("bad backbone checkpoint: {e}")))?;
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(Error::corrupt(path, format!("unknown format '{}'", ckpt.format)));
        }
        let backbone = Backbone::new(ckpt.arch)?;
        if backbone.registry != ckpt.registry {
            return Err(Error::corrupt(path, "registry manifest disagrees with architecture"));
        }
        backbone
            .check_weights(&ckpt.weights)
            .map_err(|e| Error::corrupt(path, e.to_string()))?;
        Ok((backbone, ckpt.weights))
    }
}

const CHECKPOINT_FORMAT: &str = "trajtta-backbone-v1";

#[derive(Serialize)]
struct CheckpointRef<'a> {
    format: &'a str,
    arch: &'a ArchConfig,
    registry: &'a NormRegistry,
    weights: &'a BackboneWeights,
}

#[derive(Deserialize)]
struct Checkpoint {
    format: String,
    arch: ArchConfig,
    registry: NormRegistry,
    weights: BackboneWeights,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub flip: bool,
    /// Maximum translation in pixels along each axis.
    pub max_shift: usize,
    /// Contrast gain is drawn from `[1 - contrast, 1 + contrast]`.
    pub contrast: f64,
    pub brightness: f64,
    /// Additive Gaussian noise with std drawn from `[0, noise_std]`.
    pub noise_std: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            flip: true,
            max_shift: 4,
            contrast: 0.05,
            brightness: 0.03,
            noise_std: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Cosine annealing floor.
    pub lr_min: f64,
    pub seed: u64,
    pub augment: AugmentConfig,
    /// Extra cross-entropy weight for foreground pixels.
    pub foreground_weight: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 800,
            batch_size: 8,
            lr: 1e-3,
            lr_min: 1e-6,
            seed: 0,
            augment: AugmentConfig::default(),
            foreground_weight: 3.0,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainReport {
    pub loss_curve: Vec<(usize, f64)>,
}

fn augment_pair<R: Rng>(
    img: &Image,
    mask: &SegmentationMask,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> (Image, Vec<u32>) {
    let (h, w) = img.dims();
    let flip = cfg.flip && rng.gen_bool(0.5);
    let s = cfg.max_shift as isize;
    let (dy, dx) = if s > 0 {
        (rng.gen_range(-s..=s), rng.gen_range(-s..=s))
    } else {
        (0, 0)
    };
    let gain = 1.0 + rng.gen_range(-1.0..=1.0) * cfg.contrast;
    let bias = rng.gen_range(-1.0..=1.0) * cfg.brightness;
    let noise = if cfg.noise_std > 0.0 {
        rng.gen_range(0.0..cfg.noise_std)
    } else {
        0.0
    };
    let normal = rand_distr::Normal::new(0.0, 1.0).expect("unit normal");
    let mut data = vec![0.0; h * w];
    let mut labels = vec![0u32; h * w];
    for r in 0..h {
        for c in 0..w {
            let sr = (r as isize - dy).clamp(0, h as isize - 1) as usize;
            let mut sc = (c as isize - dx).clamp(0, w as isize - 1) as usize;
            if flip {
                sc = w - 1 - sc;
            }
            let v = img.get(sr, sc);
            let eps: f64 = if noise > 0.0 {
                rand_distr::Distribution::sample(&normal, rng)
            } else {
                0.0
            };
            data[r * w + c] = (v - 0.5) * gain + 0.5 + bias + noise * eps;
            labels[r * w + c] = mask.labels()[sr * w + sc];
        }
    }
    (Image::from_raw(h, w, data), labels)
}

/// Per-pixel cross entropy averaged over pixels, with its logit gradient
/// (already divided by the pixel count). `weights[c]` rescales pixels of class `c`.
pub(crate) fn cross_entropy(map: &ProbMap, labels: &[u32], class_weights: &[f64]) -> (f64, Vec<f64>) {
    let c = map.num_classes();
    let d = map.num_pixels() as f64;
    let mut loss = 0.0;
    let mut grad = map.probs().to_vec();
    for (p, &y) in labels.iter().enumerate() {
        let wgt = class_weights[y as usize];
        loss -= wgt * map.log_probs()[p * c + y as usize];
        let row = &mut grad[p * c..(p + 1) * c];
        row[y as usize] -= 1.0;
        row.iter_mut().for_each(|g| *g *= wgt / d);
    }
    (loss / d, grad)
}

/// Trains all backbone parameters with Adam and cosine annealing, then
/// returns the weights marked frozen.
pub fn train_backbone(
    backbone: &Backbone,
    init: BackboneWeights,
    dataset: &[(Image, SegmentationMask)],
    cfg: &TrainConfig,
) -> Result<(BackboneWeights, TrainReport)> {
    if dataset.is_empty() {
        return Err(Error::Training {
            iteration: 0,
            reason: "empty dataset".into(),
        });
    }
    if init.frozen {
        return Err(Error::Training {
            iteration: 0,
            reason: "weights are frozen".into(),
        });
    }
    if cfg.batch_size == 0 || !(cfg.lr >= 0.0) {
        return Err(Error::Config("batch_size must be positive and lr >= 0".into()));
    }
    backbone.check_weights(&init)?;
    let classes = backbone.arch.num_classes;
    for (img, mask) in dataset {
        backbone.check_images(&[img])?;
        if mask.dims() != img.dims() || mask.num_classes() != classes {
            return Err(Error::Shape("mask does not match image or class count".into()));
        }
    }

    let mut weights = init;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Adam::new(cfg.lr);
    let mut report = TrainReport::default();
    let mut class_weights = vec![cfg.foreground_weight; classes];
    class_weights[0] = 1.0;
    let log_every = (cfg.steps / 20).max(1);

    for step in 0..cfg.steps {
        let progress = step as f64 / cfg.steps.max(1) as f64;
        let lr_min = cfg.lr_min.min(cfg.lr);
        opt.lr = lr_min + 0.5 * (cfg.lr - lr_min) * (1.0 + (std::f64::consts::PI * progress).cos());

        let batch: Vec<(Image, Vec<u32>)> = (0..cfg.batch_size)
            .map(|_| {
                let (img, mask) = &dataset[rng.gen_range(0..dataset.len())];
                augment_pair(img, mask, &cfg.augment, &mut rng)
            })
            .collect();
        let images: Vec<&Image> = batch.iter().map(|(i, _)| i).collect();
        let (logits, cache) = backbone.run(&weights, &images, None, true)?;
        let maps = backbone.to_probmaps(&logits).map_err(|e| Error::Training {
            iteration: step,
            reason: e.to_string(),
        })?;
        let mut loss = 0.0;
        let mut grads = Vec::with_capacity(maps.len());
        for (map, (_, labels)) in maps.iter().zip(&batch) {
            let (l, g) = cross_entropy(map, labels, &class_weights);
            loss += l;
            grads.push(g.into_iter().map(|v| v / cfg.batch_size as f64).collect());
        }
        loss /= cfg.batch_size as f64;
        if !loss.is_finite() {
            return Err(Error::Training {
                iteration: step,
                reason: format!("loss became {loss}"),
            });
        }
        let grad_logits = backbone.pack_logit_grads(&grads);
        let out = backbone.backward(&weights, &cache, &grad_logits, None, true, false);
        let pgrads = out.params.expect("parameter gradients requested");
        backbone.update_running_stats(&mut weights, &cache);
        opt.step(weights.trainable_mut(), pgrads.groups());
        report.loss_curve.push((step, loss));
        if step % log_every == 0 || step + 1 == cfg.steps {
            log::info!("train step {step}: loss {loss:.5} lr {:.2e}", opt.lr);
        }
    }
    weights.frozen = true;
    Ok((weights, report))
}
