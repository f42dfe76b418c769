//! Burst synthesis for drone controllers and the WiFi / Bluetooth-like
//! traffic that makes up the noise class.

use std::f64::consts::PI;

use num_complex::{Complex32, Complex64};
use rand::Rng as _;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::profile::{ChannelSpec, ClassLabel, EmitterProfile, ModulationKind};
use crate::rng::{self, Rng};
use crate::{Error, Result};

/// Complex baseband rate after decimation.
pub const SAMPLE_RATE: f64 = 14e6;
/// Samples per window (≈1.17 ms at 14 MHz).
pub const WINDOW_LEN: usize = 16_384;

/// Raised-cosine on/off ramp at true burst edges.
const RAMP_SECONDS: f64 = 2e-6;
/// Fraction of each symbol spent transitioning between data levels.
const TRANSITION_FRACTION: f64 = 0.25;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IQWindow {
    pub samples: Vec<Complex32>,
    pub sample_rate: f64,
    pub label: ClassLabel,
    pub snr_db: Option<f64>,
    /// Half-open sample range occupied by the emitter burst.
    pub burst_support: Option<(usize, usize)>,
    pub channel_offset_hz: Option<f64>,
}

impl IQWindow {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples.len() != WINDOW_LEN || self.sample_rate != SAMPLE_RATE {
            return Err(Error::shape(
                format!("{WINDOW_LEN} samples at {SAMPLE_RATE} Hz"),
                format!("{} samples at {} Hz", self.samples.len(), self.sample_rate),
            ));
        }
        if self.samples.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(Error::NonFinite("IQ window".into()));
        }
        Ok(())
    }

    pub fn power(&self) -> f64 {
        mean_power(&self.samples)
    }
}

pub fn mean_power(samples: &[Complex32]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    samples.iter().map(|c| c.norm_sqr() as f64).sum::<f64>() / samples.len() as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub length: usize,
    pub sample_rate: f64,
    /// Minimum fraction of `min(burst, window)` that must fall inside the window.
    pub min_coverage: f64,
}

impl Default for WindowSpec {
    fn default() -> Self {
        WindowSpec {
            length: WINDOW_LEN,
            sample_rate: SAMPLE_RATE,
            min_coverage: 0.5,
        }
    }
}

impl WindowSpec {
    pub fn validate(&self) -> Result<()> {
        if self.length != WINDOW_LEN || self.sample_rate != SAMPLE_RATE {
            return Err(Error::Config(format!(
                "windows are {WINDOW_LEN} samples at {SAMPLE_RATE} Hz, got {} at {}",
                self.length, self.sample_rate
            )));
        }
        if !(self.min_coverage > 0.0 && self.min_coverage <= 1.0) {
            return Err(Error::Config(format!(
                "min_coverage must be in (0, 1], got {}",
                self.min_coverage
            )));
        }
        Ok(())
    }
}

fn ramp_gain(n: i64, start: i64, end: i64, ramp: i64) -> f64 {
    let from_start = n - start;
    let to_end = end - 1 - n;
    let edge = from_start.min(to_end);
    if edge >= ramp {
        1.0
    } else {
        0.5 - 0.5 * (PI * (edge as f64 + 0.5) / ramp as f64).cos()
    }
}

/// Smoothed NRZ level at symbol position `pos` (in symbols since burst start).
fn nrz_level(symbols: &[f64], pos: f64) -> f64 {
    let j = (pos.floor().max(0.0) as usize).min(symbols.len() - 1);
    let u = pos - pos.floor();
    let cur = symbols[j];
    let prev = if j == 0 { cur } else { symbols[j - 1] };
    if u < TRANSITION_FRACTION {
        prev + (cur - prev) * (0.5 - 0.5 * (PI * u / TRANSITION_FRACTION).cos())
    } else {
        cur
    }
}

/// One window containing (part of) a single burst of `profile`.
///
/// Repetition intervals are at least 61 ms, far longer than a window, so at
/// most one burst is ever visible. The burst is placed so that at least
/// `min_coverage · min(burst, window)` samples of it lie inside the window.
pub fn synth_burst(
    profile: &EmitterProfile,
    channel: &ChannelSpec,
    window: &WindowSpec,
    seed: u64,
) -> Result<IQWindow> {
    window.validate()?;
    channel.validate()?;
    profile.validate(window.sample_rate, channel.receiver_center)?;
    let fs = window.sample_rate;
    let mut rng = rng::rng(seed);

    let k = rng.random_range(-profile.max_channel..=profile.max_channel);
    let offset = profile.channel_offset(k, channel.receiver_center);
    let duration = profile.burst_duration.sample(&mut rng);
    let d = ((duration * fs).round() as i64).max(1);
    let w = window.length as i64;
    let overlap = ((d.min(w) as f64 * window.min_coverage).ceil() as i64).max(1);
    let start = rng.random_range((overlap - d)..=(w - overlap));
    let end = start + d;
    let (a, b) = (start.max(0) as usize, end.min(w) as usize);

    let ModulationKind::ResidualCarrierPm { symbol_rate, index } = profile.modulation;
    let n_symbols = (d as f64 / fs * symbol_rate).ceil() as usize + 1;
    let symbols: Vec<f64> = (0..n_symbols)
        .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
        .collect();
    let phase0 = rng.random_range(0.0..2.0 * PI);
    let ramp = ((RAMP_SECONDS * fs).round() as i64).clamp(1, d / 2 + 1);
    let gain = channel.effective_gain();

    let mut samples = vec![Complex32::new(0.0, 0.0); window.length];
    for (n, out) in samples.iter_mut().enumerate().take(b).skip(a) {
        let ni = n as i64;
        let t = n as f64 / fs;
        let pos = (ni - start) as f64 / fs * symbol_rate;
        let phase = 2.0 * PI * offset * t + phase0 + index * nrz_level(&symbols, pos);
        let v = gain * Complex64::from_polar(ramp_gain(ni, start, end, ramp), phase);
        *out = Complex32::new(v.re as f32, v.im as f32);
    }

    Ok(IQWindow {
        samples,
        sample_rate: fs,
        label: profile.label,
        snr_db: None,
        burst_support: Some((a, b)),
        channel_offset_hz: Some(offset),
    })
}

/// Non-drone traffic sharing the 2.4 GHz band.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum InterferenceKind {
    /// OFDM bursts about 10 MHz wide.
    Wifi,
    /// 1 MHz GFSK packets hopping once per 625 µs slot.
    Bluetooth,
}

fn add_wifi(buf: &mut [Complex64], fs: f64, rng: &mut Rng) {
    const NFFT: usize = 64;
    const CP: usize = 16;
    const EDGE_BIN: i64 = 22;
    let ifft = FftPlanner::<f64>::new().plan_fft_inverse(NFFT);
    let used = 2 * EDGE_BIN as usize;
    let scale = 1.0 / (used as f64).sqrt();
    let w = buf.len() as i64;
    let bursts = rng.random_range(1..=2);
    for _ in 0..bursts {
        let d = (rng.random_range(0.2e-3..0.8e-3) * fs) as i64;
        let start = rng.random_range(-d / 2..w - d / 2);
        let offset = rng.random_range(-1.5e6..1.5e6);
        let phase0 = rng.random_range(0.0..2.0 * PI);
        let ramp = (RAMP_SECONDS * fs) as i64;
        let mut sym = vec![Complex64::new(0.0, 0.0); NFFT];
        let mut n = start;
        while n < start + d {
            sym.iter_mut().for_each(|c| *c = Complex64::new(0.0, 0.0));
            for bin in (-EDGE_BIN..=EDGE_BIN).filter(|&b| b != 0) {
                let re = if rng.random::<bool>() { 1.0 } else { -1.0 };
                let im = if rng.random::<bool>() { 1.0 } else { -1.0 };
                sym[bin.rem_euclid(NFFT as i64) as usize] = Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2;
            }
            ifft.process(&mut sym);
            for i in 0..(NFFT + CP) as i64 {
                let m = n + i;
                if m >= start + d {
                    break;
                }
                if (0..w).contains(&m) {
                    let body = sym[((i - CP as i64).rem_euclid(NFFT as i64)) as usize];
                    let rot = Complex64::from_polar(
                        ramp_gain(m, start, start + d, ramp) * scale,
                        2.0 * PI * offset * m as f64 / fs + phase0,
                    );
                    buf[m as usize] += body * rot;
                }
            }
            n += (NFFT + CP) as i64;
        }
    }
}

fn add_bluetooth(buf: &mut [Complex64], fs: f64, rng: &mut Rng) {
    const SYMBOL_RATE: f64 = 1e6;
    const MOD_INDEX: f64 = 0.32;
    const SLOT_SECONDS: f64 = 625e-6;
    let slot = (SLOT_SECONDS * fs) as i64;
    let w = buf.len() as i64;
    let sps = fs / SYMBOL_RATE;
    let ramp = (RAMP_SECONDS * fs) as i64;
    // Gaussian frequency pulse (BT = 0.5) sampled over three symbols.
    let sigma = (2f64.ln()).sqrt() / (2.0 * PI * 0.5) * sps;
    let half = (1.5 * sps) as i64;
    let taps: Vec<f64> = (-half..=half)
        .map(|i| (-(i as f64).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f64 = taps.iter().sum();

    let first = -rng.random_range(0..slot);
    let mut s0 = first;
    while s0 < w {
        if rng.random::<f64>() < 0.7 {
            let d = (rng.random_range(0.1e-3..0.4e-3) * fs) as i64;
            let channel = rng.random_range(-5..=5) as f64 * 1e6 + 0.25e6;
            let n_sym = (d as f64 / sps).ceil() as usize + 1;
            let bits: Vec<f64> = (0..n_sym)
                .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
                .collect();
            let nrz: Vec<f64> = (0..d).map(|i| bits[(i as f64 / sps) as usize]).collect();
            let dev = MOD_INDEX * SYMBOL_RATE / 2.0;
            let mut phase = rng.random_range(0.0..2.0 * PI);
            for i in 0..d {
                let mut f = 0.0;
                for (t, &tap) in taps.iter().enumerate() {
                    let j = i + t as i64 - half;
                    if (0..d).contains(&j) {
                        f += tap * nrz[j as usize];
                    }
                }
                phase += 2.0 * PI * (channel + dev * f / norm) / fs;
                let m = s0 + i;
                if (0..w).contains(&m) {
                    buf[m as usize] += Complex64::from_polar(ramp_gain(i, 0, d, ramp), phase);
                }
            }
        }
        s0 += slot;
    }
}

/// Interference of the given kinds, unit power per kind while active.
pub fn synth_interference(kinds: &[InterferenceKind], length: usize, sample_rate: f64, seed: u64) -> Vec<Complex32> {
    let mut rng = rng::rng(seed);
    let mut buf = vec![Complex64::new(0.0, 0.0); length];
    for kind in kinds {
        match kind {
            InterferenceKind::Wifi => add_wifi(&mut buf, sample_rate, &mut rng),
            InterferenceKind::Bluetooth => add_bluetooth(&mut buf, sample_rate, &mut rng),
        }
    }
    buf.into_iter()
        .map(|c| Complex32::new(c.re as f32, c.im as f32))
        .collect()
}

/// Clean noise-class window: WiFi and/or Bluetooth traffic, at least one
/// of them with non-zero energy.
pub fn synth_noise_class(window: &WindowSpec, seed: u64) -> Result<IQWindow> {
    window.validate()?;
    let mut rng = rng::rng(seed);
    for attempt in 0u64.. {
        let mut kinds = Vec::new();
        if rng.random::<f64>() < 0.6 {
            kinds.push(InterferenceKind::Wifi);
        }
        if rng.random::<f64>() < 0.6 {
            kinds.push(InterferenceKind::Bluetooth);
        }
        if kinds.is_empty() {
            kinds.push(if rng.random::<bool>() {
                InterferenceKind::Wifi
            } else {
                InterferenceKind::Bluetooth
            });
        }
        let samples = synth_interference(&kinds, window.length, window.sample_rate, rng::derive(seed, &[attempt]));
        if mean_power(&samples) > 0.0 {
            return Ok(IQWindow {
                samples,
                sample_rate: window.sample_rate,
                label: ClassLabel::Noise,
                snr_db: None,
                burst_support: None,
                channel_offset_hz: None,
            });
        }
    }
    unreachable!("unbounded retry loop")
}
