//! Experiment configuration, loaded from TOML.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use trajtta::backbone::{ArchConfig, TrainConfig};
use trajtta::modulator::ModulatorConfig;
use trajtta::recon::ReconConfig;
use trajtta::tta::AdaptConfig;
use trajtta::volume::{PhantomConfig, ShiftConfig};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub seed: u64,
    pub n_train: usize,
    /// Held-out source cases, generated in memory for training validation.
    pub n_val: usize,
    pub n_test: usize,
    pub root: PathBuf,
    pub phantom: PhantomConfig,
    /// Target-domain intensity shift applied to test measurements.
    pub shift: Option<ShiftConfig>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_train: 200,
            n_val: 20,
            n_test: 40,
            root: PathBuf::from("runs/data"),
            phantom: PhantomConfig::default(),
            shift: Some(ShiftConfig {
                gain: 0.95,
                offset: 0.025,
                noise_std: 0.12,
                ..Default::default()
            }),
        }
    }
}

impl DatasetConfig {
    pub fn train_seed(&self, i: usize) -> u64 {
        self.seed * 10_000_000 + i as u64
    }

    pub fn val_seed(&self, i: usize) -> u64 {
        self.seed * 10_000_000 + 3_000_000 + i as u64
    }

    pub fn test_seed(&self, i: usize) -> u64 {
        self.seed * 10_000_000 + 6_000_000 + i as u64
    }

    /// Phantom settings for the source domain (no shift).
    pub fn source_phantom(&self) -> PhantomConfig {
        PhantomConfig {
            shift: None,
            ..self.phantom.clone()
        }
    }

    /// Phantom settings for the target domain.
    pub fn target_phantom(&self) -> PhantomConfig {
        PhantomConfig {
            shift: self.shift.clone(),
            ..self.phantom.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackboneSection {
    pub arch: ArchConfig,
    pub train: TrainConfig,
    pub init_seed: u64,
    /// Defaults to `<dataset.root>/backbone.json`.
    pub checkpoint: Option<PathBuf>,
    /// Minimum held-out source Dice expected after training.
    pub min_val_dice: f64,
}

impl Default for BackboneSection {
    fn default() -> Self {
        Self {
            arch: ArchConfig::default(),
            train: TrainConfig::default(),
            init_seed: 0,
            checkpoint: None,
            min_val_dice: 0.85,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModulatorSection {
    pub emb_dim: usize,
    pub hidden_dim: usize,
    pub max_period: f64,
    pub seed: u64,
}

impl Default for ModulatorSection {
    fn default() -> Self {
        let d = ModulatorConfig::default();
        Self {
            emb_dim: d.emb_dim,
            hidden_dim: d.hidden_dim,
            max_period: d.max_period,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub n_bins: usize,
    pub output_dir: PathBuf,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            n_bins: trajtta::metrics::DEFAULT_ECE_BINS,
            output_dir: PathBuf::from("runs/out"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub recon: ReconConfig,
    pub backbone: BackboneSection,
    pub modulator: ModulatorSection,
    pub adapt: AdaptConfig,
    pub eval: EvalConfig,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.phantom.validate()?;
        if let Some(s) = &self.dataset.shift {
            s.validate()?;
        }
        self.recon.validate()?;
        self.adapt.validate()?;
        let a = &self.backbone.arch;
        let p = &self.dataset.phantom;
        if (a.height, a.width, a.num_classes) != (p.height, p.width, p.num_classes) {
            return Err(CliError::Config(format!(
                "backbone expects {}x{} with {} classes, phantoms are {}x{} with {}",
                a.height, a.width, a.num_classes, p.height, p.width, p.num_classes
            )));
        }
        if self.eval.n_bins == 0 {
            return Err(CliError::Config("eval.n_bins must be positive".into()));
        }
        Ok(())
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.backbone
            .checkpoint
            .clone()
            .unwrap_or_else(|| self.dataset.root.join("backbone.json"))
    }

    pub fn modulator_config(&self) -> ModulatorConfig {
        ModulatorConfig {
            emb_dim: self.modulator.emb_dim,
            hidden_dim: self.modulator.hidden_dim,
            max_period: self.modulator.max_period,
            horizon: self.recon.horizon,
        }
    }
}

/// First 8 hex digits of the SHA-256 of `parts` joined by newlines.
pub fn short_hash(parts: &[&str]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p.as_bytes());
        h.update(b"\n");
    }
    h.finalize()[..4].iter().map(|b| format!("{b:02x}")).collect()
}
