//! Experiment configuration.
//!
//! One TOML file drives a full run: dataset, training knobs, evaluation
//! grid, and an optional link budget for level selection. Loading
//! validates every field and rejects unknown keys, so a typo fails fast
//! instead of silently falling back to a default. The resolved config is
//! echoed next to every output, and its hash plus the seed are stamped
//! into each CSV preamble for provenance.

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{generate_blobs, load_idx, Dataset};
use crate::error::{Error, Result};
use crate::training::TrainConfig;

/// Where the samples come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetSpec {
    /// Synthetic Gaussian class clusters, generated under the run seed.
    Blobs { num_classes: usize, dim: usize, samples_per_class: usize, spread: f64 },
    /// `label,f_0,...` rows, as written by `gen-data`.
    Csv { path: PathBuf },
    /// IDX image/label file pair.
    Idx { images: PathBuf, labels: PathBuf },
}

impl DatasetSpec {
    fn validate(&self) -> Result<()> {
        if let DatasetSpec::Blobs { num_classes, dim, samples_per_class, spread } = self {
            if *num_classes < 2 {
                return Err(Error::Config(format!(
                    "data.blobs.num_classes must be at least 2, got {num_classes}"
                )));
            }
            if *dim == 0 {
                return Err(Error::Config("data.blobs.dim must be positive".into()));
            }
            if *samples_per_class == 0 {
                return Err(Error::Config("data.blobs.samples_per_class must be positive".into()));
            }
            if !(spread.is_finite() && *spread > 0.0) {
                return Err(Error::Config(format!(
                    "data.blobs.spread must be positive, got {spread}"
                )));
            }
        }
        Ok(())
    }

    /// Materializes the dataset; `seed` drives blob generation only.
    pub fn load(&self, seed: u64) -> Result<Dataset> {
        match self {
            DatasetSpec::Blobs { num_classes, dim, samples_per_class, spread } => {
                generate_blobs(*num_classes, *dim, *samples_per_class, *spread, seed)
            }
            DatasetSpec::Csv { path } => {
                let file = File::open(path)?;
                Dataset::read_csv(&mut BufReader::new(file), &path.display().to_string())
            }
            DatasetSpec::Idx { images, labels } => load_idx(images, labels),
        }
    }
}

/// Evaluation grid: which channels to test, and how often.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Symbol error rates to sweep directly.
    pub eps_list: Vec<f64>,
    /// Bit error rates to sweep; converted to a symbol rate per level.
    pub p_e_list: Vec<f64>,
    /// Independent channel realizations per grid cell.
    pub trials: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { eps_list: vec![0.001, 0.01, 0.05], p_e_list: Vec::new(), trials: 10 }
    }
}

impl EvalConfig {
    fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Config("eval.trials must be positive".into()));
        }
        if let Some(&bad) = self.eps_list.iter().find(|e| !(0.0..=1.0).contains(*e)) {
            return Err(Error::Config(format!("eval.eps_list entry {bad} outside [0, 1]")));
        }
        if let Some(&bad) = self.p_e_list.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::Config(format!("eval.p_e_list entry {bad} outside [0, 1]")));
        }
        Ok(())
    }
}

/// Link-budget inputs for the `select-level` command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateSpec {
    /// Available bit budget per inference.
    pub v_bit: f64,
    /// Latency budget in channel uses per bit.
    pub tau: f64,
}

impl RateSpec {
    fn validate(&self) -> Result<()> {
        if !(self.v_bit.is_finite() && self.v_bit > 0.0) {
            return Err(Error::Config(format!("rate.v_bit must be positive, got {}", self.v_bit)));
        }
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(Error::Config(format!("rate.tau must be positive, got {}", self.tau)));
        }
        Ok(())
    }
}

/// Everything one experiment needs, loadable from a single TOML file.
///
/// The top-level `seed` is authoritative: it is copied over
/// `train.seed` on load, so a config file only ever states it once.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Fraction of samples assigned to the training split.
    pub train_fraction: f64,
    pub output_dir: PathBuf,
    pub data: DatasetSpec,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub rate: Option<RateSpec>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            train_fraction: 0.8,
            output_dir: PathBuf::from("out"),
            data: DatasetSpec::Blobs {
                num_classes: 10,
                dim: 8,
                samples_per_class: 500,
                spread: 0.15,
            },
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            rate: None,
        }
    }
}

impl ExperimentConfig {
    /// Minutes-scale synthetic preset: 10-class blobs, 16 sub-vectors of
    /// dimension 2, 16 codewords.
    pub fn desk() -> Self {
        Self::default()
    }

    /// Full-scale preset: 1000-dimensional features, 500 sub-vectors,
    /// 256 codewords. Hours-scale on one core.
    pub fn full() -> Self {
        ExperimentConfig {
            data: DatasetSpec::Blobs {
                num_classes: 10,
                dim: 1000,
                samples_per_class: 500,
                spread: 0.15,
            },
            train: TrainConfig { k_max: 256, m: 500, d: 2, ..TrainConfig::default() },
            ..Self::default()
        }
    }

    /// Looks up a named preset.
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "full" => Ok(Self::full()),
            other => Err(Error::Config(format!("unknown preset {other}, expected desk or full"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config(format!(
                "train_fraction must lie strictly between 0 and 1, got {}",
                self.train_fraction
            )));
        }
        self.data.validate()?;
        self.train.validate().map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("train.{msg}")),
            other => other,
        })?;
        self.eval.validate()?;
        if let Some(rate) = &self.rate {
            rate.validate()?;
        }
        Ok(())
    }

    /// Forces one seed everywhere it matters.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.train.seed = seed;
    }

    /// Parses, validates, and seed-normalizes a TOML document.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let mut cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.train.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }

    /// Short content hash of the resolved config, stable across runs.
    pub fn hash(&self) -> Result<String> {
        let digest = Sha256::digest(self.to_toml()?.as_bytes());
        let mut hex = String::with_capacity(16);
        for byte in &digest[..8] {
            hex.push_str(&format!("{byte:02x}"));
        }
        Ok(hex)
    }

    /// Provenance lines for CSV preambles: config hash and seed.
    pub fn preamble(&self) -> Result<Vec<String>> {
        Ok(vec![format!("mrtoc config_hash={} seed={}", self.hash()?, self.seed)])
    }
}
