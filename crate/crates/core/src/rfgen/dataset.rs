//! Labeled datasets of windows across an SNR grid.
//!
//! A synthetic dataset stores recipes (class, SNR, seed) and materializes
//! windows on demand, so a 14,000-window plan costs a few kilobytes until
//! it is actually rendered.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::{Complex32, Complex64};
use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::mix::mix_to_snr;
use super::profile::{ChannelSpec, ClassLabel, EmitterProfile};
use super::synth::{synth_burst, synth_interference, synth_noise_class, IQWindow, InterferenceKind, WindowSpec};
use crate::rng::{self, tag};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub classes: Vec<ClassLabel>,
    pub per_class: usize,
    pub snr_grid: Vec<f64>,
    pub train_fraction: f64,
    pub seed: u64,
    pub window: WindowSpec,
    /// Probability that a drone window also carries WiFi / Bluetooth traffic.
    pub interference_probability: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            classes: ClassLabel::ALL.to_vec(),
            per_class: 250,
            snr_grid: vec![-10.0, 0.0, 10.0],
            train_fraction: 0.8,
            seed: 0,
            window: WindowSpec::default(),
            interference_probability: 0.5,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() {
            return Err(Error::Config("no classes requested".into()));
        }
        if self.classes.iter().collect::<BTreeSet<_>>().len() != self.classes.len() {
            return Err(Error::Config("duplicate class in dataset request".into()));
        }
        if self.per_class == 0 {
            return Err(Error::Config("per-class count must be positive".into()));
        }
        if self.snr_grid.is_empty() || self.snr_grid.iter().any(|s| !s.is_finite()) {
            return Err(Error::Config("SNR grid must be non-empty and finite".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config(format!(
                "train fraction must be in (0, 1), got {}",
                self.train_fraction
            )));
        }
        if !(0.0..=1.0).contains(&self.interference_probability) {
            return Err(Error::Config("interference probability must be in [0, 1]".into()));
        }
        self.window.validate()
    }
}

/// Inclusive grid `min, min + step, …, ≤ max`.
pub fn snr_grid(min: f64, max: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || !min.is_finite() || !max.is_finite() || max < min {
        return Err(Error::Config(format!("bad SNR grid {min}..{max} step {step}")));
    }
    let n = ((max - min) / step + 1e-9).floor() as usize + 1;
    Ok((0..n).map(|i| min + i as f64 * step).collect())
}

#[derive(Clone, Debug, PartialEq)]
pub enum Source {
    Synthetic {
        seed: u64,
        window: WindowSpec,
        interference_probability: f64,
    },
    Captured(Arc<IQWindow>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub label: ClassLabel,
    pub snr_db: Option<f64>,
    pub source: Source,
}

impl Record {
    pub fn window(&self) -> Result<IQWindow> {
        match &self.source {
            Source::Captured(w) => Ok((**w).clone()),
            Source::Synthetic {
                seed,
                window,
                interference_probability,
            } => synthesize(
                self.label,
                self.snr_db.unwrap_or(f64::INFINITY),
                *seed,
                window,
                *interference_probability,
            ),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    pub split: Split,
    pub records: Vec<Record>,
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Per-class record counts.
    pub fn manifest(&self) -> BTreeMap<ClassLabel, usize> {
        let mut m = BTreeMap::new();
        for r in &self.records {
            *m.entry(r.label).or_insert(0) += 1;
        }
        m
    }

    /// Render every window, in record order.
    pub fn windows(&self) -> Result<Vec<IQWindow>> {
        self.records.par_iter().map(Record::window).collect()
    }

    pub fn filter(&self, keep: impl Fn(&Record) -> bool) -> LabeledDataset {
        LabeledDataset {
            split: self.split,
            records: self.records.iter().filter(|r| keep(r)).cloned().collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplitDataset {
    pub train: LabeledDataset,
    pub test: LabeledDataset,
}

/// Plan a class-stratified dataset. SNRs are assigned round-robin within a
/// class, then each class is shuffled and cut into train / test.
pub fn build_dataset(config: &DatasetConfig) -> Result<SplitDataset> {
    config.validate()?;
    let n_train = ((config.per_class as f64 * config.train_fraction).round() as usize).min(config.per_class);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for &label in &config.classes {
        let c = label.index() as u64;
        let mut records: Vec<Record> = (0..config.per_class)
            .map(|i| Record {
                label,
                snr_db: Some(config.snr_grid[i % config.snr_grid.len()]),
                source: Source::Synthetic {
                    seed: rng::derive(config.seed, &[tag::WINDOW, c, i as u64]),
                    window: config.window,
                    interference_probability: config.interference_probability,
                },
            })
            .collect();
        records.shuffle(&mut rng::rng(rng::derive(config.seed, &[tag::SPLIT, c])));
        let rest = records.split_off(n_train);
        train.extend(records);
        test.extend(rest);
    }
    Ok(SplitDataset {
        train: LabeledDataset {
            split: Split::Train,
            records: train,
        },
        test: LabeledDataset {
            split: Split::Test,
            records: test,
        },
    })
}

/// Render one labeled window at the given SNR.
pub fn synthesize(
    label: ClassLabel,
    snr_db: f64,
    seed: u64,
    window: &WindowSpec,
    interference_probability: f64,
) -> Result<IQWindow> {
    let mut r = rng::rng(seed);
    let clean = match EmitterProfile::for_class(label) {
        None => synth_noise_class(window, rng::derive(seed, &[1]))?,
        Some(profile) => {
            let channel = ChannelSpec {
                gain: Complex64::from_polar(1.0, r.random_range(0.0..2.0 * PI)),
                ..ChannelSpec::default()
            };
            synth_burst(&profile, &channel, window, rng::derive(seed, &[1]))?
        }
    };
    if !snr_db.is_finite() {
        return Ok(clean);
    }
    let interference: Option<Vec<Complex32>> = if label.is_drone() && r.random::<f64>() < interference_probability {
        let kind = if r.random::<bool>() {
            InterferenceKind::Wifi
        } else {
            InterferenceKind::Bluetooth
        };
        // interference-to-receiver-noise ratio between -10 and 0 dB
        let scale = 10f64.powf(r.random_range(-10.0..0.0) / 20.0) as f32;
        let mut x = synth_interference(&[kind], window.length, window.sample_rate, rng::derive(seed, &[2]));
        x.iter_mut().for_each(|c| *c *= scale);
        Some(x)
    } else {
        None
    };
    mix_to_snr(&clean, interference.as_deref(), snr_db, rng::derive(seed, &[3]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn large_plan_has_exact_counts_and_balanced_cells() {
        let grid = snr_grid(-20.0, 30.0, 2.0).unwrap();
        assert_eq!(grid.len(), 26);
        let cfg = DatasetConfig {
            per_class: 2000,
            snr_grid: grid.clone(),
            ..DatasetConfig::default()
        };
        let ds = build_dataset(&cfg).unwrap();
        assert_eq!(ds.train.len() + ds.test.len(), 14_000);
        for label in ClassLabel::ALL {
            assert_eq!(ds.train.manifest()[&label], 1600);
            assert_eq!(ds.test.manifest()[&label], 400);
            for &snr in &grid {
                let cell = ds
                    .train
                    .records
                    .iter()
                    .chain(&ds.test.records)
                    .filter(|r| r.label == label && r.snr_db == Some(snr))
                    .count();
                assert!(cell == 76 || cell == 77, "{label} {snr}: {cell}");
            }
        }
    }

    #[test]
    fn rejects_empty_requests() {
        let cfg = DatasetConfig {
            per_class: 0,
            ..DatasetConfig::default()
        };
        assert!(matches!(build_dataset(&cfg), Err(Error::Config(_))));
        let cfg = DatasetConfig {
            snr_grid: vec![],
            ..DatasetConfig::default()
        };
        assert!(matches!(build_dataset(&cfg), Err(Error::Config(_))));
        assert!(snr_grid(10.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn rendering_is_deterministic_and_labeled() {
        let cfg = DatasetConfig {
            per_class: 5,
            seed: 4,
            ..DatasetConfig::default()
        };
        let a = build_dataset(&cfg).unwrap();
        let b = build_dataset(&cfg).unwrap();
        assert_eq!(a, b);
        let wa = a.test.windows().unwrap();
        let wb = b.test.windows().unwrap();
        assert_eq!(wa, wb);
        for (w, r) in wa.iter().zip(&a.test.records) {
            w.validate().unwrap();
            assert_eq!(w.label, r.label);
            assert_eq!(w.snr_db, r.snr_db);
        }
    }
}
