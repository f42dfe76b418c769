//! 128×128 log-magnitude STFT images from IQ windows.
//!
//! Frames are non-overlapping (`fft_size = hop = 128`), rows are
//! FFT-shifted so DC sits at row 64 and negative offsets come first, and
//! every image is standardized to zero mean and unit variance.

use std::path::Path;

use num_complex::{Complex32, Complex64};
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::rfgen::{ClassLabel, IQWindow, SampleFormat, Sidecar, SidecarEntry, Split};
use crate::{Error, Result, Tensor};

pub const SPEC_SIZE: usize = 128;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowFn {
    #[default]
    Hann,
    Rectangular,
}

impl WindowFn {
    /// Periodic taper of length `n`.
    pub fn coefficients(self, n: usize) -> Vec<f64> {
        match self {
            WindowFn::Rectangular => vec![1.0; n],
            WindowFn::Hann => (0..n)
                .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
                .collect(),
        }
    }
}

/// Image channels fed to the network.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpecChannels {
    /// `log(1 + |X|)`.
    #[default]
    Magnitude,
    /// Signed `log(1 + |·|)` of the real and imaginary STFT parts.
    RealImag,
}

impl SpecChannels {
    pub fn count(self) -> usize {
        match self {
            SpecChannels::Magnitude => 1,
            SpecChannels::RealImag => 2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpectrogramParams {
    pub fft_size: usize,
    pub hop: usize,
    pub window_fn: WindowFn,
    pub channels: SpecChannels,
}

impl Default for SpectrogramParams {
    fn default() -> Self {
        SpectrogramParams {
            fft_size: SPEC_SIZE,
            hop: SPEC_SIZE,
            window_fn: WindowFn::Hann,
            channels: SpecChannels::Magnitude,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Spectrogram {
    /// `channels × 128 (frequency) × 128 (time)`, row-major.
    pub values: Vec<f32>,
    pub channels: usize,
    pub freq_axis: Vec<f64>,
    pub time_axis: Vec<f64>,
    pub label: ClassLabel,
    pub snr_db: Option<f64>,
    /// Per-channel statistics removed by standardization.
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Set when a channel had zero variance and was left as zeros.
    pub degenerate: bool,
}

impl Spectrogram {
    pub fn get(&self, channel: usize, freq: usize, time: usize) -> f32 {
        self.values[(channel * SPEC_SIZE + freq) * SPEC_SIZE + time]
    }
}

fn signed_log1p(v: f64) -> f64 {
    v.signum() * v.abs().ln_1p()
}

/// Raw (pre-standardization) STFT image per channel.
pub fn stft_image(iq: &[Complex32], params: &SpectrogramParams) -> Result<Vec<Vec<f64>>> {
    if params.fft_size != SPEC_SIZE || params.hop == 0 {
        return Err(Error::Config(format!(
            "fft size must be {SPEC_SIZE} and hop positive, got {} / {}",
            params.fft_size, params.hop
        )));
    }
    let n = params.fft_size;
    let frames = if iq.len() >= n {
        (iq.len() - n) / params.hop + 1
    } else {
        0
    };
    if frames != SPEC_SIZE || (frames - 1) * params.hop + n != iq.len() {
        return Err(Error::shape(
            format!("{} samples", (SPEC_SIZE - 1) * params.hop + n),
            format!("{} samples", iq.len()),
        ));
    }
    let taper = params.window_fn.coefficients(n);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n);
    let c = params.channels.count();
    let mut image = vec![vec![0.0; SPEC_SIZE * SPEC_SIZE]; c];
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for t in 0..frames {
        let frame = &iq[t * params.hop..t * params.hop + n];
        for ((b, x), w) in buf.iter_mut().zip(frame).zip(&taper) {
            *b = Complex64::new(x.re as f64 * w, x.im as f64 * w);
        }
        fft.process(&mut buf);
        for row in 0..n {
            let x = buf[(row + n / 2) % n];
            let at = row * SPEC_SIZE + t;
            match params.channels {
                SpecChannels::Magnitude => image[0][at] = x.norm().ln_1p(),
                SpecChannels::RealImag => {
                    image[0][at] = signed_log1p(x.re);
                    image[1][at] = signed_log1p(x.im);
                }
            }
        }
    }
    Ok(image)
}

pub fn to_spectrogram(iq: &IQWindow, params: &SpectrogramParams) -> Result<Spectrogram> {
    if iq.samples.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
        return Err(Error::NonFinite("IQ window".into()));
    }
    let image = stft_image(&iq.samples, params)?;
    let mut values = Vec::with_capacity(image.len() * SPEC_SIZE * SPEC_SIZE);
    let mut means = Vec::new();
    let mut stds = Vec::new();
    let mut degenerate = false;
    for ch in &image {
        let len = ch.len() as f64;
        let mean = ch.iter().sum::<f64>() / len;
        let var = ch.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / len;
        let std = var.sqrt();
        if std > 0.0 && std.is_finite() {
            values.extend(ch.iter().map(|v| ((v - mean) / std) as f32));
        } else {
            degenerate = true;
            values.extend(std::iter::repeat_n(0.0f32, ch.len()));
        }
        means.push(mean);
        stds.push(std);
    }
    let n = params.fft_size as f64;
    Ok(Spectrogram {
        values,
        channels: image.len(),
        freq_axis: (0..SPEC_SIZE)
            .map(|r| (r as f64 - n / 2.0) * iq.sample_rate / n)
            .collect(),
        time_axis: (0..SPEC_SIZE)
            .map(|t| (t * params.hop) as f64 / iq.sample_rate)
            .collect(),
        label: iq.label,
        snr_db: iq.snr_db,
        mean: means,
        std: stds,
        degenerate,
    })
}

pub fn to_spectrograms(windows: &[IQWindow], params: &SpectrogramParams) -> Result<Vec<Spectrogram>> {
    windows.par_iter().map(|w| to_spectrogram(w, params)).collect()
}

/// Stack images into an `N × C × 128 × 128` batch.
pub fn stack(specs: &[&Spectrogram]) -> Result<Tensor<f32>> {
    let c = specs.first().map_or(1, |s| s.channels);
    let mut data = Vec::with_capacity(specs.len() * c * SPEC_SIZE * SPEC_SIZE);
    for s in specs {
        if s.channels != c {
            return Err(Error::shape(format!("{c} channels"), s.channels.to_string()));
        }
        data.extend_from_slice(&s.values);
    }
    Tensor::from_vec([specs.len(), c, SPEC_SIZE, SPEC_SIZE], data)
}

/// Write images as little-endian f32 records plus a sidecar manifest.
pub fn write_cache(dir: &Path, specs: &[Spectrogram], split: Split) -> Result<()> {
    let mut entries = Vec::with_capacity(specs.len());
    for (i, s) in specs.iter().enumerate() {
        let file = format!("{}/{}_{i:05}.f32", s.label.name(), split_name(split));
        let path = dir.join(&file);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let bytes: Vec<u8> = s.values.iter().flat_map(|v| v.to_le_bytes()).collect();
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        entries.push(SidecarEntry {
            file,
            label: s.label.name().to_string(),
            snr_db: s.snr_db,
            seed: None,
            split: Some(split),
            format: SampleFormat::F32Le,
            sample_rate: None,
        });
    }
    Sidecar { entries }.save(&dir.join("manifest.json"))
}

/// Read a cache written by [`write_cache`] (statistics are not restored).
pub fn read_cache(dir: &Path) -> Result<Vec<Spectrogram>> {
    let sidecar = Sidecar::load(&dir.join("manifest.json"))?;
    let per = SPEC_SIZE * SPEC_SIZE;
    sidecar
        .entries
        .iter()
        .map(|e| {
            let path = dir.join(&e.file);
            let bytes = std::fs::read(&path).map_err(|err| Error::io(&path, err))?;
            if e.format != SampleFormat::F32Le || bytes.len() % (4 * per) != 0 {
                return Err(Error::Validation(format!("{}: not a spectrogram record", e.file)));
            }
            let values: Vec<f32> = bytes
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            Ok(Spectrogram {
                channels: values.len() / per,
                values,
                freq_axis: Vec::new(),
                time_axis: Vec::new(),
                label: e.label.parse()?,
                snr_db: e.snr_db,
                mean: Vec::new(),
                std: Vec::new(),
                degenerate: false,
            })
        })
        .collect()
}

fn split_name(split: Split) -> &'static str {
    match split {
        Split::Train => "train",
        Split::Test => "test",
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rfgen::{synth_burst, ChannelSpec, EmitterProfile, WindowSpec, SAMPLE_RATE, WINDOW_LEN};

    fn window(samples: Vec<Complex32>) -> IQWindow {
        IQWindow {
            samples,
            sample_rate: SAMPLE_RATE,
            label: ClassLabel::Noise,
            snr_db: None,
            burst_support: None,
            channel_offset_hz: None,
        }
    }

    #[test]
    fn bin_centered_tone_fills_one_row() {
        let bin = 5i64;
        let samples: Vec<Complex32> = (0..WINDOW_LEN)
            .map(|i| {
                let p = 2.0 * std::f64::consts::PI * bin as f64 * i as f64 / 128.0;
                Complex32::new(p.cos() as f32, p.sin() as f32)
            })
            .collect();
        let params = SpectrogramParams {
            window_fn: WindowFn::Rectangular,
            ..SpectrogramParams::default()
        };
        let raw = stft_image(&samples, &params).unwrap();
        let row = (bin + 64) as usize;
        for r in 0..SPEC_SIZE {
            for t in 0..SPEC_SIZE {
                let v = raw[0][r * SPEC_SIZE + t];
                if r == row {
                    assert!((v - 128f64.ln_1p()).abs() < 1e-4);
                } else {
                    assert!(v < 1e-4, "row {r}: {v}");
                }
            }
        }
    }

    #[test]
    fn zero_window_is_flagged_zero_image() {
        let s = to_spectrogram(
            &window(vec![Complex32::new(0.0, 0.0); WINDOW_LEN]),
            &SpectrogramParams::default(),
        )
        .unwrap();
        assert!(s.degenerate);
        assert!(s.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn wrong_length_is_rejected() {
        let r = to_spectrogram(
            &window(vec![Complex32::new(1.0, 0.0); 1000]),
            &SpectrogramParams::default(),
        );
        assert!(matches!(r, Err(Error::Shape { .. })));
    }

    #[test]
    fn burst_columns_carry_the_energy() {
        let p = EmitterProfile::for_class(ClassLabel::Dji).unwrap();
        let spec = WindowSpec {
            min_coverage: 0.3,
            ..WindowSpec::default()
        };
        let seed = (0..50)
            .find(|&s| {
                let w = synth_burst(&p, &ChannelSpec::default(), &spec, s).unwrap();
                let (a, b) = w.burst_support.unwrap();
                a > 2048 || b < WINDOW_LEN - 2048
            })
            .unwrap();
        let clean = synth_burst(&p, &ChannelSpec::default(), &spec, seed).unwrap();
        let w = crate::rfgen::mix_to_snr(&clean, None, 10.0, 1).unwrap();
        let s = to_spectrogram(&w, &SpectrogramParams::default()).unwrap();
        let (a, b) = w.burst_support.unwrap();
        let col_max = |t: usize| (0..SPEC_SIZE).map(|r| s.get(0, r, t)).fold(f32::MIN, f32::max);
        let inside: Vec<f32> = (a / 128 + 1..(b / 128).saturating_sub(1)).map(col_max).collect();
        let outside: Vec<f32> = (0..SPEC_SIZE)
            .filter(|&t| (t + 1) * 128 <= a || t * 128 >= b)
            .map(col_max)
            .collect();
        let lo_in = inside.iter().copied().fold(f32::MAX, f32::min);
        let hi_out = outside.iter().copied().fold(f32::MIN, f32::max);
        assert!(lo_in > hi_out, "{lo_in} vs {hi_out}");
    }

    #[test]
    fn real_imag_mode_has_two_channels() {
        let samples: Vec<Complex32> = (0..WINDOW_LEN).map(|i| Complex32::new((i % 7) as f32, 1.0)).collect();
        let params = SpectrogramParams {
            channels: SpecChannels::RealImag,
            ..SpectrogramParams::default()
        };
        let s = to_spectrogram(&window(samples), &params).unwrap();
        assert_eq!(s.channels, 2);
        assert_eq!(s.values.len(), 2 * SPEC_SIZE * SPEC_SIZE);
        let t = stack(&[&s, &s]).unwrap();
        assert_eq!(t.shape(), [2, 2, SPEC_SIZE, SPEC_SIZE]);
    }

    #[test]
    fn cache_round_trips_values() {
        let dir = tempfile::tempdir().unwrap();
        let samples: Vec<Complex32> = (0..WINDOW_LEN).map(|i| Complex32::new((i as f32).sin(), 0.5)).collect();
        let s = to_spectrogram(&window(samples), &SpectrogramParams::default()).unwrap();
        write_cache(dir.path(), std::slice::from_ref(&s), Split::Test).unwrap();
        let back = read_cache(dir.path()).unwrap();
        assert_eq!(back[0].values, s.values);
        assert_eq!(back[0].label, ClassLabel::Noise);
    }
}
