//! Experiment configuration (TOML).
//!
//! Every key has a default, so an empty file is a valid centralized
//! closed-set run. See the README for the full key reference.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::caloss::ScoreKind;
use crate::fedsim::FedConfig;
use crate::lsnet::LsNetConfig;
use crate::rfgen::{ClassLabel, DatasetConfig, WindowSpec};
use crate::rng::{self, tag};
use crate::specgram::SpectrogramParams;
use crate::train::TrainConfig;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    #[default]
    Central,
    Federated,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Windows per class before the train/test split.
    pub per_class: usize,
    pub train_fraction: f64,
    pub snr_grid: Vec<f64>,
    pub interference_probability: f64,
    /// Load recordings from this directory instead of synthesizing.
    pub external: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            per_class: 250,
            train_fraction: 0.8,
            snr_grid: vec![-10.0, 0.0, 10.0],
            interference_probability: 0.5,
            external: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassSplit {
    pub known: Vec<ClassLabel>,
    pub unknown: Vec<ClassLabel>,
}

impl Default for ClassSplit {
    fn default() -> Self {
        use ClassLabel::*;
        ClassSplit {
            known: vec![Dji, FutabaT7, FutabaT14, Graupner, Turnigy],
            unknown: vec![Noise, Taranis],
        }
    }
}

impl ClassSplit {
    pub fn closed_set() -> Self {
        ClassSplit {
            known: ClassLabel::ALL.to_vec(),
            unknown: Vec::new(),
        }
    }

    /// Network class index of a known label.
    pub fn known_index(&self, label: ClassLabel) -> Option<usize> {
        self.known.iter().position(|&k| k == label)
    }

    /// Evaluation label: known classes keep their index, unknown classes
    /// map to `K + j`.
    pub fn eval_index(&self, label: ClassLabel) -> Option<usize> {
        self.known_index(label).or_else(|| {
            self.unknown
                .iter()
                .position(|&u| u == label)
                .map(|j| self.known.len() + j)
        })
    }

    pub fn all(&self) -> Vec<ClassLabel> {
        self.known.iter().chain(&self.unknown).copied().collect()
    }
}

/// Network shape; the class count always follows the known-class list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub stage_channels: Vec<usize>,
    pub stage_depths: Vec<usize>,
    pub head_width: usize,
    pub droppath_max: f64,
    pub expansion: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let d = LsNetConfig::default();
        ModelConfig {
            stage_channels: d.stage_channels,
            stage_depths: d.stage_depths,
            head_width: d.head_width,
            droppath_max: d.droppath_max,
            expansion: d.expansion,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub batch_size: usize,
    /// Fraction of known training samples accepted by the rejection threshold.
    pub true_accept_rate: f64,
    pub score: ScoreKind,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            batch_size: 64,
            true_accept_rate: 0.95,
            score: ScoreKind::MinDistance,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub run_id: String,
    pub seed: u64,
    pub mode: TrainMode,
    pub data: DataConfig,
    pub classes: ClassSplit,
    pub spectrogram: SpectrogramParams,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub fed: FedConfig,
    pub eval: EvalConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn run_id(&self) -> String {
        if self.run_id.is_empty() {
            format!("{}-s{}", self.mode_name(), self.seed)
        } else {
            self.run_id.clone()
        }
    }

    pub fn mode_name(&self) -> &'static str {
        match self.mode {
            TrainMode::Central => "central",
            TrainMode::Federated => "federated",
        }
    }

    pub fn lsnet_config(&self) -> LsNetConfig {
        LsNetConfig {
            stage_channels: self.model.stage_channels.clone(),
            stage_depths: self.model.stage_depths.clone(),
            head_width: self.model.head_width,
            num_classes: self.classes.known.len(),
            droppath_max: self.model.droppath_max,
            input_channels: self.spectrogram.channels.count(),
            expansion: self.model.expansion,
        }
    }

    pub fn dataset_config(&self) -> DatasetConfig {
        DatasetConfig {
            classes: self.classes.all(),
            per_class: self.data.per_class,
            snr_grid: self.data.snr_grid.clone(),
            train_fraction: self.data.train_fraction,
            seed: rng::derive(self.seed, &[tag::DATA]),
            window: WindowSpec::default(),
            interference_probability: self.data.interference_probability,
        }
    }

    /// Seed of the centralized training stream.
    pub fn train_seed(&self) -> u64 {
        rng::derive(self.seed, &[tag::TRAIN])
    }

    /// Reject bad splits and hyperparameters before any compute.
    pub fn validate(&self) -> Result<()> {
        let known: BTreeSet<_> = self.classes.known.iter().collect();
        let unknown: BTreeSet<_> = self.classes.unknown.iter().collect();
        if known.len() != self.classes.known.len() || unknown.len() != self.classes.unknown.len() {
            return Err(Error::Config("duplicate class in known/unknown lists".into()));
        }
        if let Some(c) = known.intersection(&unknown).next() {
            return Err(Error::Config(format!("class {c} is both known and unknown")));
        }
        if known.len() < 2 {
            return Err(Error::Config("need at least two known classes".into()));
        }
        if !(self.eval.true_accept_rate > 0.0 && self.eval.true_accept_rate <= 1.0) {
            return Err(Error::Config("eval.true_accept_rate must be in (0, 1]".into()));
        }
        if self.eval.batch_size == 0 {
            return Err(Error::Config("eval.batch_size must be positive".into()));
        }
        if let Some(dir) = &self.data.external {
            if !dir.is_dir() {
                return Err(Error::Config(format!(
                    "external data directory {} does not exist",
                    dir.display()
                )));
            }
        } else {
            self.dataset_config().validate()?;
        }
        if self.spectrogram.fft_size != crate::specgram::SPEC_SIZE {
            return Err(Error::Config("spectrogram.fft_size must be 128".into()));
        }
        self.lsnet_config().validate()?;
        self.train.validate()?;
        if self.mode == TrainMode::Federated {
            self.fed.validate()?;
        } else if self.train.epochs == 0 {
            return Err(Error::Config("train.epochs must be positive".into()));
        }
        Ok(())
    }
}
