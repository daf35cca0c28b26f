//! Experiment configuration: one TOML document per experiment.
//!
//! ```toml
//! seed = 0
//! out = "runs/baseline"
//!
//! [data]
//! fractions = [0.4, 0.4, 0.2]   # X1, X2, T
//! mode = "permutation"          # or "identity_disjoint"
//! # attributes = [0]            # utility columns to keep
//! [data.synth]                  # or: manifest = "data/manifest.csv"
//! n_identities = 40
//! samples_per_identity = 50
//! k_attributes = 8
//! image_size = 32
//!
//! [nets]
//! tap = "fc"
//!
//! [train]
//! total_alternations = 600
//! [train.hp]
//! lambda1 = 1.0
//!
//! [attack]
//! steps = 2000
//!
//! [eval]
//! grid_size = 16
//!
//! [sweep]
//! lambda2 = [0.0, 1.0, 5.0]
//! taps = ["conv1", "conv2", "conv3", "fc"]
//! seeds = 3
//! ```
//!
//! Every table rejects unknown keys, and every omitted key takes its default.
//! Relative paths are resolved against the config file's directory.

use std::path::{Path, PathBuf};

use privshield_core::attacks::AttackConfig;
use privshield_core::data::{Dataset, ImageShape, SplitMode, SynthConfig};
use privshield_core::experiment::{EvalConfig, NetsConfig, PipelineConfig, PrivateTrainConfig, SplitConfig};
use privshield_core::nets::EncoderSpec;
use privshield_core::trainer::TrainConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::manifest::load_manifest;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub synth: Option<SynthConfig>,
    pub manifest: Option<PathBuf>,
    /// Additional samples given to the adversary split X2.
    pub extra_manifest: Option<PathBuf>,
    /// Also add the extra samples to the private split X1.
    pub extra_into_private: bool,
    pub fractions: [f64; 3],
    pub mode: SplitMode,
    pub attributes: Option<Vec<usize>>,
}

impl Default for DataConfig {
    fn default() -> Self {
        let split = SplitConfig::default();
        DataConfig {
            synth: None,
            manifest: None,
            extra_manifest: None,
            extra_into_private: false,
            fractions: split.fractions,
            mode: split.mode,
            attributes: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub threshold: f64,
    pub chunk: usize,
    /// Reconstructions tiled into the attack grid image.
    pub grid_size: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        let e = EvalConfig::default();
        EvalSection { threshold: e.threshold, chunk: e.chunk, grid_size: 16 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub lambda2: Vec<f64>,
    /// λ₁ of the λ₂ sweep and of the adversarial arm of the layer sweep.
    pub lambda1: f64,
    /// Training-time decoder weights used by the λ₂ sweep.
    pub mu1: f64,
    pub mu2: f64,
    pub taps: Vec<String>,
    /// Replicates per grid point.
    pub seeds: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            lambda2: vec![0.0, 1.0, 5.0],
            lambda1: 1.0,
            mu1: 0.0,
            mu2: 1.0,
            taps: vec!["conv1".into(), "conv2".into(), "conv3".into(), "fc".into()],
            seeds: 3,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub data: DataConfig,
    pub nets: NetsConfig,
    pub train: TrainConfig,
    pub private: PrivateTrainConfig,
    pub attack: AttackConfig,
    pub eval: EvalSection,
    pub sweep: SweepConfig,
}

fn config_err(e: impl std::fmt::Display) -> Error {
    Error::Config(e.to_string())
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(config_err)
    }

    /// Parses and resolves relative paths against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: Self = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.data.manifest, &mut cfg.data.extra_manifest, &mut cfg.out].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    /// TOML has no integers above `i64::MAX`; [`Self::validate`] keeps the
    /// seeds below it so this cannot fail on a validated config.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configs serialize")
    }

    /// Every check that can run without touching the dataset.
    pub fn validate(&self) -> Result<()> {
        match (&self.data.synth, &self.data.manifest) {
            (Some(s), None) => s.validate()?,
            (None, Some(m)) => {
                if !m.is_file() {
                    return Err(Error::Config(format!("manifest {} does not exist", m.display())));
                }
            }
            _ => return Err(Error::Config("data needs exactly one of `synth` or `manifest`".into())),
        }
        if let Some(m) = &self.data.extra_manifest {
            if !m.is_file() {
                return Err(Error::Config(format!("extra manifest {} does not exist", m.display())));
            }
        }
        let f = self.data.fractions;
        if f.iter().any(|&v| !(v > 0.0)) || f.iter().sum::<f64>() > 1.0 + 1e-12 {
            return Err(Error::Config(format!("split fractions {f:?} must be positive and sum to at most 1")));
        }
        self.pipeline().validate()?;
        if self.eval.grid_size == 0 {
            return Err(Error::Config("eval.grid_size must be positive".into()));
        }
        let nominal = EncoderSpec::desk(ImageShape::square(32, 3));
        let names = nominal.stage_names();
        for tap in std::iter::once(&self.nets.tap).chain(&self.sweep.taps) {
            if !names.contains(&tap.as_str()) {
                return Err(Error::Config(format!("unknown tap `{tap}`; encoder stages are {names:?}")));
            }
        }
        let seeds = [Some(self.seed), self.data.synth.as_ref().map(|s| s.seed), Some(self.train.seed), Some(self.attack.seed)];
        if seeds.into_iter().flatten().any(|s| s > i64::MAX as u64) {
            return Err(Error::Config(format!("seeds must not exceed {}", i64::MAX)));
        }
        if self.sweep.seeds == 0 {
            return Err(Error::Config("sweep.seeds must be positive".into()));
        }
        if self.sweep.lambda2.iter().chain([&self.sweep.lambda1, &self.sweep.mu1, &self.sweep.mu2]).any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(Error::Config("sweep weights must be finite and non-negative".into()));
        }
        Ok(())
    }

    /// The core pipeline view of this config.
    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            split: SplitConfig {
                fractions: self.data.fractions,
                mode: self.data.mode,
                attributes: self.data.attributes.clone(),
            },
            nets: self.nets.clone(),
            train: self.train.clone(),
            private: self.private.clone(),
            attack: self.attack.clone(),
            eval: EvalConfig { threshold: self.eval.threshold, chunk: self.eval.chunk },
            seed: self.seed,
        }
    }

    /// First 16 hex digits of the SHA-256 of the canonical JSON form. The
    /// output directory does not take part.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(&ExperimentConfig { out: None, ..self.clone() }).expect("configs serialize");
        Sha256::digest(&json).iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    /// The source dataset, before any extra samples.
    pub fn load_dataset(&self) -> Result<Dataset> {
        match (&self.data.synth, &self.data.manifest) {
            (Some(s), _) => Ok(privshield_core::data::generate_synthetic(s)?),
            (None, Some(m)) => load_manifest(m),
            (None, None) => Err(Error::Config("no data source".into())),
        }
    }

    pub fn load_extra(&self) -> Result<Option<Dataset>> {
        self.data.extra_manifest.as_deref().map(load_manifest).transpose()
    }
}
