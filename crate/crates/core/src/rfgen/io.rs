//! On-disk datasets: one directory per class, raw sample records, and a
//! JSON sidecar manifest listing every file.

use std::path::Path;
use std::sync::Arc;

use num_complex::Complex32;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dataset::{LabeledDataset, Record, Source, Split, SplitDataset};
use super::decimate::decimate;
use super::profile::ClassLabel;
use super::synth::{IQWindow, SAMPLE_RATE, WINDOW_LEN};
use crate::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Raw capture rate accepted by the ingestion path (decimated by 4).
pub const RAW_SAMPLE_RATE: f64 = 56e6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleFormat {
    /// Interleaved (re, im) little-endian f32.
    Cf32le,
    Cf32be,
    /// Interleaved (re, im) i16, full scale ±32768.
    Ci16le,
    Ci16be,
    /// Plain little-endian f32 values (spectrogram cache).
    #[serde(rename = "f32le")]
    F32Le,
}

impl SampleFormat {
    fn decode(self, bytes: &[u8]) -> Result<Vec<Complex32>> {
        let (width, f): (usize, fn(&[u8]) -> f32) = match self {
            SampleFormat::Cf32le => (4, |b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])),
            SampleFormat::Cf32be => (4, |b| f32::from_be_bytes([b[0], b[1], b[2], b[3]])),
            SampleFormat::Ci16le => (2, |b| i16::from_le_bytes([b[0], b[1]]) as f32 / 32768.0),
            SampleFormat::Ci16be => (2, |b| i16::from_be_bytes([b[0], b[1]]) as f32 / 32768.0),
            SampleFormat::F32Le => return Err(Error::Validation("f32le holds real images, not IQ".into())),
        };
        if !bytes.len().is_multiple_of(2 * width) {
            return Err(Error::Validation(format!(
                "{} bytes is not a whole number of complex samples",
                bytes.len()
            )));
        }
        Ok(bytes
            .chunks_exact(2 * width)
            .map(|c| Complex32::new(f(&c[..width]), f(&c[width..])))
            .collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SidecarEntry {
    /// Path relative to the manifest directory.
    pub file: String,
    pub label: String,
    pub snr_db: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
    pub format: SampleFormat,
    /// Defaults to 14 MHz; 56 MHz captures are decimated on load.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_rate: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub entries: Vec<SidecarEntry>,
}

impl Sidecar {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

fn encode_cf32le(samples: &[Complex32]) -> Vec<u8> {
    samples
        .iter()
        .flat_map(|c| c.re.to_le_bytes().into_iter().chain(c.im.to_le_bytes()))
        .collect()
}

fn split_name(split: Split) -> &'static str {
    match split {
        Split::Train => "train",
        Split::Test => "test",
    }
}

/// Render and store both splits under `dir`.
pub fn write_dataset(dir: &Path, data: &SplitDataset) -> Result<Sidecar> {
    const CHUNK: usize = 256;
    let mut entries = Vec::new();
    for set in [&data.train, &data.test] {
        for (c, chunk) in set.records.chunks(CHUNK).enumerate() {
            let windows: Vec<IQWindow> = chunk.par_iter().map(Record::window).collect::<Result<_>>()?;
            for (j, (record, w)) in chunk.iter().zip(&windows).enumerate() {
                let i = c * CHUNK + j;
                let file = format!("{}/{}_{i:05}.cf32", record.label.name(), split_name(set.split));
                let path = dir.join(&file);
                if let Some(parent) = path.parent() {
                    std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
                }
                std::fs::write(&path, encode_cf32le(&w.samples)).map_err(|e| Error::io(&path, e))?;
                entries.push(SidecarEntry {
                    file,
                    label: record.label.name().to_string(),
                    snr_db: record.snr_db,
                    seed: match record.source {
                        Source::Synthetic { seed, .. } => Some(seed),
                        Source::Captured(_) => None,
                    },
                    split: Some(set.split),
                    format: SampleFormat::Cf32le,
                    sample_rate: None,
                });
            }
        }
    }
    let sidecar = Sidecar { entries };
    sidecar.save(&dir.join(MANIFEST_FILE))?;
    Ok(sidecar)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    pub file: String,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LoadReport {
    /// Entries without a split go to `train`.
    pub data: SplitDataset,
    pub rejected: Vec<Rejection>,
}

fn load_entry(dir: &Path, e: &SidecarEntry) -> Result<Vec<IQWindow>> {
    let label: ClassLabel = e.label.parse()?;
    let path = dir.join(&e.file);
    let bytes = std::fs::read(&path).map_err(|err| Error::io(&path, err))?;
    let mut samples = e.format.decode(&bytes)?;
    match e.sample_rate {
        None => {}
        Some(r) if r == SAMPLE_RATE => {}
        Some(r) if r == RAW_SAMPLE_RATE => samples = decimate(&samples, 4)?,
        Some(r) => return Err(Error::Validation(format!("unsupported sample rate {r} Hz"))),
    }
    if samples.is_empty() || samples.len() % WINDOW_LEN != 0 {
        return Err(Error::shape(
            format!("a positive multiple of {WINDOW_LEN} samples"),
            samples.len().to_string(),
        ));
    }
    samples
        .chunks_exact(WINDOW_LEN)
        .map(|chunk| {
            let w = IQWindow {
                samples: chunk.to_vec(),
                sample_rate: SAMPLE_RATE,
                label,
                snr_db: e.snr_db,
                burst_support: None,
                channel_offset_hz: None,
            };
            w.validate()?;
            Ok(w)
        })
        .collect()
}

/// Load recordings listed in `dir/manifest.json`. Files that fail to
/// decode or validate are reported, not fatal.
pub fn load_external(dir: &Path) -> Result<LoadReport> {
    let sidecar = Sidecar::load(&dir.join(MANIFEST_FILE))?;
    let mut train = Vec::new();
    let mut test = Vec::new();
    let mut rejected = Vec::new();
    for e in &sidecar.entries {
        match load_entry(dir, e) {
            Ok(windows) => {
                let target = if e.split == Some(Split::Test) {
                    &mut test
                } else {
                    &mut train
                };
                target.extend(windows.into_iter().map(|w| Record {
                    label: w.label,
                    snr_db: w.snr_db,
                    source: Source::Captured(Arc::new(w)),
                }));
            }
            Err(err) => rejected.push(Rejection {
                file: e.file.clone(),
                reason: err.to_string(),
            }),
        }
    }
    Ok(LoadReport {
        data: SplitDataset {
            train: LabeledDataset {
                split: Split::Train,
                records: train,
            },
            test: LabeledDataset {
                split: Split::Test,
                records: test,
            },
        },
        rejected,
    })
}
