//! Time-conditioned modulation network.
//!
//! A sinusoidal embedding of the normalized reconstruction time feeds a
//! two-layer Swish MLP, followed by one linear head per normalization layer
//! emitting a per-channel log-scale `gamma` and shift `beta`. The heads start
//! at exactly zero, so a fresh modulator leaves the backbone untouched:
//! `z = exp(0) * x + 0 = x`.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::NormRegistry;
use crate::error::{Error, Result};

/// Log-scales are clamped to this magnitude before exponentiation.
pub const GAMMA_CLAMP: f64 = 10.0;

/// `[sin(t w_0) .. sin(t w_{k-1}), cos(t w_0) .. cos(t w_{k-1})]` with
/// `w_k = max_period^(-2k/dim)` and `k = dim / 2`.
pub fn sinusoidal_embedding(t: f64, dim: usize, max_period: f64) -> Result<Vec<f64>> {
    if dim < 2 || dim % 2 != 0 {
        return Err(Error::Config(format!(
            "embedding dimension must be even and >= 2, got {dim}"
        )));
    }
    if !(max_period > 0.0) {
        return Err(Error::Config("max_period must be positive".into()));
    }
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for (k, freq) in embedding_frequencies(dim, max_period).into_iter().enumerate() {
        let (s, c) = (t * freq).sin_cos();
        out[k] = s;
        out[half + k] = c;
    }
    Ok(out)
}

pub fn embedding_frequencies(dim: usize, max_period: f64) -> Vec<f64> {
    (0..dim / 2)
        .map(|k| max_period.powf(-2.0 * k as f64 / dim as f64))
        .collect()
}

/// Per-channel log-scale and shift for one normalization layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerModulation {
    pub layer_id: String,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

/// One [`LayerModulation`] per registry entry, in registry order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModulationSet {
    pub layers: Vec<LayerModulation>,
}

impl ModulationSet {
    pub fn identity(registry: &NormRegistry) -> Self {
        Self {
            layers: registry
                .entries()
                .iter()
                .map(|e| LayerModulation {
                    layer_id: e.layer_id.clone(),
                    gamma: vec![0.0; e.channels],
                    beta: vec![0.0; e.channels],
                })
                .collect(),
        }
    }

    pub fn is_identity(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.gamma.iter().chain(&l.beta).all(|&v| v == 0.0))
    }

    pub fn layer(&self, layer_id: &str) -> Option<&LayerModulation> {
        self.layers.iter().find(|l| l.layer_id == layer_id)
    }

    pub fn layer_mut(&mut self, layer_id: &str) -> Option<&mut LayerModulation> {
        self.layers.iter_mut().find(|l| l.layer_id == layer_id)
    }

    /// Checks that every registry entry is covered exactly once, in order,
    /// with matching channel counts.
    pub fn validate(&self, registry: &NormRegistry) -> Result<()> {
        let entries = registry.entries();
        for entry in entries {
            let hits = self
                .layers
                .iter()
                .filter(|l| l.layer_id == entry.layer_id)
                .count();
            if hits == 0 {
                return Err(Error::Modulation(format!(
                    "missing layer '{}'",
                    entry.layer_id
                )));
            }
            if hits > 1 {
                return Err(Error::Modulation(format!(
                    "layer '{}' appears {hits} times",
                    entry.layer_id
                )));
            }
        }
        if self.layers.len() != entries.len() {
            return Err(Error::Modulation(format!(
                "{} layers given, registry has {}",
                self.layers.len(),
                entries.len()
            )));
        }
        for (layer, entry) in self.layers.iter().zip(entries) {
            if layer.layer_id != entry.layer_id {
                return Err(Error::Modulation(format!(
                    "layer order differs: found '{}' where '{}' expected",
                    layer.layer_id, entry.layer_id
                )));
            }
            if layer.gamma.len() != entry.channels || layer.beta.len() != entry.channels {
                return Err(Error::Modulation(format!(
                    "layer '{}' expects {} channels, got gamma {} / beta {}",
                    entry.layer_id,
                    entry.channels,
                    layer.gamma.len(),
                    layer.beta.len()
                )));
            }
        }
        Ok(())
    }
}

/// `exp(gamma) * x + beta`, with `x` laid out channel-major (`[channel][spatial]`).
pub fn apply_modulation(x: &[f64], gamma: &[f64], beta: &[f64]) -> Result<Vec<f64>> {
    let channels = gamma.len();
    if beta.len() != channels {
        return Err(Error::Shape(format!(
            "gamma has {channels} channels, beta {}",
            beta.len()
        )));
    }
    if channels == 0 || x.len() % channels != 0 {
        return Err(Error::Shape(format!(
            "activation of length {} cannot be split into {channels} channels",
            x.len()
        )));
    }
    let plane = x.len() / channels;
    let mut out = Vec::with_capacity(x.len());
    for (c, chunk) in x.chunks_exact(plane).enumerate() {
        let scale = gamma[c].exp();
        out.extend(chunk.iter().map(|v| scale * v + beta[c]));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub inputs: usize,
    pub outputs: usize,
    /// Row-major `[outputs][inputs]`.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Linear {
    fn uniform<R: Rng>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        Self {
            inputs,
            outputs,
            weight: (0..inputs * outputs)
                .map(|_| rng.gen_range(-bound..bound))
                .collect(),
            bias: (0..outputs).map(|_| rng.gen_range(-bound..bound)).collect(),
        }
    }

    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weight: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.weight
            .chunks_exact(self.inputs)
            .zip(&self.bias)
            .map(|(row, b)| b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
            .collect()
    }

    /// Accumulates `dW += g x^T`, `db += g` and returns `W^T g`.
    fn backward(&self, x: &[f64], g: &[f64], gw: &mut [f64], gb: &mut [f64]) -> Vec<f64> {
        let mut gx = vec![0.0; self.inputs];
        for (o, &go) in g.iter().enumerate() {
            gb[o] += go;
            let row = &self.weight[o * self.inputs..(o + 1) * self.inputs];
            let grow = &mut gw[o * self.inputs..(o + 1) * self.inputs];
            for i in 0..self.inputs {
                grow[i] += go * x[i];
                gx[i] += go * row[i];
            }
        }
        gx
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn swish(x: f64) -> f64 {
    x * sigmoid(x)
}

fn swish_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModulatorConfig {
    pub emb_dim: usize,
    pub hidden_dim: usize,
    pub max_period: f64,
    /// Reconstruction horizon; times are divided by it before embedding.
    pub horizon: f64,
}

impl Default for ModulatorConfig {
    fn default() -> Self {
        Self {
            emb_dim: 16,
            hidden_dim: 64,
            max_period: 10.0,
            horizon: 1.0,
        }
    }
}

/// Parameters of the modulation network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModulatorParams {
    pub config: ModulatorConfig,
    pub registry: NormRegistry,
    pub trunk_in: Linear,
    pub trunk_out: Linear,
    pub heads: Vec<Linear>,
}

/// Intermediate values of one forward pass, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct ModulatorCache {
    embedding: Vec<f64>,
    pre1: Vec<f64>,
    act1: Vec<f64>,
    pre2: Vec<f64>,
    act2: Vec<f64>,
    raw_gamma: Vec<Vec<f64>>,
}

impl ModulatorCache {
    /// Number of log-scales that hit the clamp in this pass.
    pub fn clamp_count(&self) -> usize {
        self.raw_gamma
            .iter()
            .flatten()
            .filter(|g| g.abs() > GAMMA_CLAMP)
            .count()
    }
}

/// Gradients with the same layout as [`ModulatorParams::params_mut`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModulatorGrads {
    pub groups: Vec<Vec<f64>>,
}

impl ModulatorGrads {
    pub fn norm(&self) -> f64 {
        self.groups
            .iter()
            .flatten()
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    pub fn add_assign(&mut self, other: &ModulatorGrads) {
        for (a, b) in self.groups.iter_mut().zip(&other.groups) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.groups.iter_mut().flatten().for_each(|g| *g *= factor);
    }
}

/// Zero-initialized heads over a seeded random trunk.
pub fn init_modulator(
    registry: &NormRegistry,
    emb_dim: usize,
    hidden_dim: usize,
    seed: u64,
) -> Result<ModulatorParams> {
    init_modulator_with(
        registry,
        ModulatorConfig {
            emb_dim,
            hidden_dim,
            ..Default::default()
        },
        seed,
    )
}

pub fn init_modulator_with(
    registry: &NormRegistry,
    config: ModulatorConfig,
    seed: u64,
) -> Result<ModulatorParams> {
    if registry.is_empty() {
        return Err(Error::Config("cannot modulate an empty registry".into()));
    }
    if config.emb_dim < 2 || config.emb_dim % 2 != 0 {
        return Err(Error::Config(format!(
            "embedding dimension must be even and >= 2, got {}",
            config.emb_dim
        )));
    }
    if config.hidden_dim == 0 {
        return Err(Error::Config("hidden dimension must be positive".into()));
    }
    if !(config.horizon > 0.0 && config.max_period > 0.0) {
        return Err(Error::Config("horizon and max_period must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let trunk_in = Linear::uniform(config.emb_dim, config.hidden_dim, &mut rng);
    let trunk_out = Linear::uniform(config.hidden_dim, config.hidden_dim, &mut rng);
    let heads = registry
        .entries()
        .iter()
        .map(|e| Linear::zeros(config.hidden_dim, 2 * e.channels))
        .collect();
    Ok(ModulatorParams {
        config,
        registry: registry.clone(),
        trunk_in,
        trunk_out,
        heads,
    })
}

impl ModulatorParams {
    pub fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn params(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = vec![
            &self.trunk_in.weight,
            &self.trunk_in.bias,
            &self.trunk_out.weight,
            &self.trunk_out.bias,
        ];
        for h in &self.heads {
            out.push(&h.weight);
            out.push(&h.bias);
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![
            &mut self.trunk_in.weight,
            &mut self.trunk_in.bias,
            &mut self.trunk_out.weight,
            &mut self.trunk_out.bias,
        ];
        for h in &mut self.heads {
            out.push(&mut h.weight);
            out.push(&mut h.bias);
        }
        out
    }

    pub fn zero_grads(&self) -> ModulatorGrads {
        ModulatorGrads {
            groups: self.params().iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }

    pub fn embed(&self, t: f64) -> Result<Vec<f64>> {
        sinusoidal_embedding(
            t / self.config.horizon,
            self.config.emb_dim,
            self.config.max_period,
        )
    }

    /// Modulation for time `t`. Returns the number of clamped log-scales too.
    pub fn forward(&self, t: f64) -> Result<(ModulationSet, usize)> {
        let (set, cache) = self.forward_cached(t)?;
        Ok((set, cache.clamp_count()))
    }

    pub fn forward_cached(&self, t: f64) -> Result<(ModulationSet, ModulatorCache)> {
        if !t.is_finite() {
            return Err(Error::Domain(format!("non-finite modulator time {t}")));
        }
        let embedding = self.embed(t)?;
        let pre1 = self.trunk_in.forward(&embedding);
        let act1: Vec<f64> = pre1.iter().map(|&v| swish(v)).collect();
        let pre2 = self.trunk_out.forward(&act1);
        let act2: Vec<f64> = pre2.iter().map(|&v| swish(v)).collect();

        let mut layers = Vec::with_capacity(self.heads.len());
        let mut raw_gamma = Vec::with_capacity(self.heads.len());
        let mut clamped = 0usize;
        for (head, entry) in self.heads.iter().zip(self.registry.entries()) {
            let out = head.forward(&act2);
            let (g, b) = out.split_at(entry.channels);
            let gamma: Vec<f64> = g
                .iter()
                .map(|&v| {
                    if v.abs() > GAMMA_CLAMP {
                        clamped += 1;
                    }
                    v.clamp(-GAMMA_CLAMP, GAMMA_CLAMP)
                })
                .collect();
            raw_gamma.push(g.to_vec());
            layers.push(LayerModulation {
                layer_id: entry.layer_id.clone(),
                gamma,
                beta: b.to_vec(),
            });
        }
        if clamped > 0 {
            log::warn!("modulator clamped {clamped} log-scales at t={t}");
        }
        Ok((
            ModulationSet { layers },
            ModulatorCache {
                embedding,
                pre1,
                act1,
                pre2,
                act2,
                raw_gamma,
            },
        ))
    }

    /// Backpropagates `d loss / d (gamma, beta)` into `grads`.
    pub fn backward(
        &self,
        cache: &ModulatorCache,
        upstream: &ModulationSet,
        grads: &mut ModulatorGrads,
    ) -> Result<()> {
        upstream.validate(&self.registry)?;
        let hidden = self.config.hidden_dim;
        let mut g_act2 = vec![0.0; hidden];
        let (trunk, heads) = grads.groups.split_at_mut(4);
        for (i, (head, layer)) in self.heads.iter().zip(&upstream.layers).enumerate() {
            let raw = &cache.raw_gamma[i];
            let mut g_out = Vec::with_capacity(head.outputs);
            g_out.extend(layer.gamma.iter().zip(raw).map(|(g, r)| {
                if r.abs() > GAMMA_CLAMP {
                    0.0
                } else {
                    *g
                }
            }));
            g_out.extend_from_slice(&layer.beta);
            let (gw, rest) = heads[2 * i..2 * i + 2].split_at_mut(1);
            let gx = head.backward(&cache.act2, &g_out, &mut gw[0], &mut rest[0]);
            for (a, b) in g_act2.iter_mut().zip(gx) {
                *a += b;
            }
        }
        let g_pre2: Vec<f64> = g_act2
            .iter()
            .zip(&cache.pre2)
            .map(|(g, &p)| g * swish_grad(p))
            .collect();
        let (t_in, t_out) = trunk.split_at_mut(2);
        let (w2, b2) = t_out.split_at_mut(1);
        let g_act1 = self
            .trunk_out
            .backward(&cache.act1, &g_pre2, &mut w2[0], &mut b2[0]);
        let g_pre1: Vec<f64> = g_act1
            .iter()
            .zip(&cache.pre1)
            .map(|(g, &p)| g * swish_grad(p))
            .collect();
        let (w1, b1) = t_in.split_at_mut(1);
        self.trunk_in
            .backward(&cache.embedding, &g_pre1, &mut w1[0], &mut b1[0]);
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).expect("modulator serializes");
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Loads a checkpoint and checks it was built against `registry`.
    pub fn load(path: &Path, registry: &NormRegistry) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let params: ModulatorParams = serde_json::from_str(&text)
            .map_err(|e| Error::corrupt(path, format!("bad modulator checkpoint: {e}")))?;
        if &params.registry != registry {
            return Err(Error::Modulation(format!(
                "{}: checkpoint registry does not match the backbone",
                path.display()
            )));
        }
        if params.heads.len() != registry.len()
            || params
                .heads
                .iter()
                .zip(registry.entries())
                .any(|(h, e)| h.outputs != 2 * e.channels || h.inputs != params.config.hidden_dim)
        {
            return Err(Error::corrupt(path, "head shapes disagree with registry"));
        }
        Ok(params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::{NormEntry, NormRegistry};

    fn registry() -> NormRegistry {
        NormRegistry::new(vec![
            NormEntry {
                layer_id: "a".into(),
                channels: 3,
            },
            NormEntry {
                layer_id: "b".into(),
                channels: 2,
            },
        ])
        .unwrap()
    }

    #[test]
    fn embedding_at_zero() {
        assert_eq!(
            sinusoidal_embedding(0.0, 4, 10.0).unwrap(),
            vec![0.0, 0.0, 1.0, 1.0]
        );
    }

    #[test]
    fn embedding_rejects_odd_dim() {
        assert!(matches!(
            sinusoidal_embedding(0.3, 5, 10.0),
            Err(Error::Config(_))
        ));
        assert!(sinusoidal_embedding(0.3, 0, 10.0).is_err());
    }

    #[test]
    fn fresh_modulator_is_identity() {
        let reg = registry();
        let m = init_modulator(&reg, 16, 8, 3).unwrap();
        for t in [0.0, 0.25, 1.0, 7.5] {
            let (set, clamps) = m.forward(t).unwrap();
            assert!(set.is_identity());
            assert_eq!(clamps, 0);
            set.validate(&reg).unwrap();
        }
    }

    #[test]
    fn seeded_init_is_reproducible() {
        let reg = registry();
        assert_eq!(
            init_modulator(&reg, 16, 8, 3).unwrap(),
            init_modulator(&reg, 16, 8, 3).unwrap()
        );
        assert_ne!(
            init_modulator(&reg, 16, 8, 3).unwrap(),
            init_modulator(&reg, 16, 8, 4).unwrap()
        );
    }

    #[test]
    fn empty_registry_is_rejected() {
        let reg = NormRegistry::new(vec![]).unwrap();
        assert!(matches!(init_modulator(&reg, 16, 8, 0), Err(Error::Config(_))));
    }

    #[test]
    fn constant_head_bias_gives_constant_scale() {
        let reg = registry();
        let mut m = init_modulator(&reg, 16, 8, 3).unwrap();
        m.heads[1].bias[0] = std::f64::consts::LN_2;
        m.heads[1].bias[1] = std::f64::consts::LN_2;
        for t in [0.0, 0.5, 1.0] {
            let (set, _) = m.forward(t).unwrap();
            let layer = set.layer("b").unwrap();
            let x = [1.5, -2.0, 3.0, 0.25];
            let z = apply_modulation(&x, &layer.gamma, &layer.beta).unwrap();
            for (a, b) in z.iter().zip(&x) {
                assert!((a - 2.0 * b).abs() < 1e-15);
            }
            assert!(set.layer("a").unwrap().gamma.iter().all(|&g| g == 0.0));
        }
    }

    #[test]
    fn modulation_examples() {
        let x = [0.3, -1.2, 4.0];
        assert_eq!(apply_modulation(&x, &[0.0], &[0.0]).unwrap(), x.to_vec());
        let z = apply_modulation(&[3.0], &[std::f64::consts::LN_2], &[1.0]).unwrap();
        assert!((z[0] - 7.0).abs() < 1e-12);
        assert!(apply_modulation(&x, &[0.0, 0.0], &[0.0]).is_err());
        assert!(apply_modulation(&x, &[0.0, 0.0], &[0.0, 0.0]).is_err());
    }

    #[test]
    fn large_log_scales_are_clamped() {
        let reg = registry();
        let mut m = init_modulator(&reg, 16, 8, 3).unwrap();
        m.heads[0].bias[0] = 50.0;
        m.heads[0].bias[1] = -50.0;
        let (set, clamps) = m.forward(0.5).unwrap();
        assert_eq!(clamps, 2);
        assert_eq!(set.layers[0].gamma[0], GAMMA_CLAMP);
        assert_eq!(set.layers[0].gamma[1], -GAMMA_CLAMP);
    }

    #[test]
    fn validate_flags_missing_and_misshapen_layers() {
        let reg = registry();
        let mut set = ModulationSet::identity(&reg);
        set.layers.pop();
        assert!(matches!(set.validate(&reg), Err(Error::Modulation(_))));
        let mut set = ModulationSet::identity(&reg);
        set.layers[0].beta.push(0.0);
        assert!(matches!(set.validate(&reg), Err(Error::Modulation(_))));
    }

    #[test]
    fn checkpoint_roundtrip_and_registry_guard() {
        let reg = registry();
        let mut m = init_modulator(&reg, 8, 4, 1).unwrap();
        m.heads[0].weight[3] = 0.125;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mod.json");
        m.save(&path).unwrap();
        assert_eq!(ModulatorParams::load(&path, &reg).unwrap(), m);
        let other = NormRegistry::new(vec![NormEntry {
            layer_id: "a".into(),
            channels: 3,
        }])
        .unwrap();
        assert!(matches!(
            ModulatorParams::load(&path, &other),
            Err(Error::Modulation(_))
        ));
    }
}
