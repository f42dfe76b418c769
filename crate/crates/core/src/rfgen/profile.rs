//! Emitter classes and their timing / frequency parameters.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::rng::Rng;
use crate::{Error, Result};

/// Receiver tuning of the recording setup.
pub const RECEIVER_CENTER_HZ: f64 = 2.44175e9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ClassLabel {
    #[serde(rename = "DJI")]
    Dji,
    FutabaT7,
    FutabaT14,
    Graupner,
    Noise,
    Taranis,
    Turnigy,
}

impl ClassLabel {
    pub const ALL: [ClassLabel; 7] = [
        ClassLabel::Dji,
        ClassLabel::FutabaT7,
        ClassLabel::FutabaT14,
        ClassLabel::Graupner,
        ClassLabel::Noise,
        ClassLabel::Taranis,
        ClassLabel::Turnigy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ClassLabel::Dji => "DJI",
            ClassLabel::FutabaT7 => "FutabaT7",
            ClassLabel::FutabaT14 => "FutabaT14",
            ClassLabel::Graupner => "Graupner",
            ClassLabel::Noise => "Noise",
            ClassLabel::Taranis => "Taranis",
            ClassLabel::Turnigy => "Turnigy",
        }
    }

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|&c| c == self).expect("listed")
    }

    pub fn is_drone(self) -> bool {
        self != ClassLabel::Noise
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ClassLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ClassLabel::ALL
            .iter()
            .copied()
            .find(|c| c.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::UnknownLabel(s.to_string()))
    }
}

/// A duration that is fixed, drawn uniformly from a range, or one of several alternatives.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Timing {
    Fixed(f64),
    Uniform { lo: f64, hi: f64 },
    OneOf(Vec<Timing>),
}

impl Timing {
    pub fn sample(&self, rng: &mut Rng) -> f64 {
        match self {
            Timing::Fixed(v) => *v,
            Timing::Uniform { lo, hi } => rng.random_range(*lo..=*hi),
            Timing::OneOf(alts) => alts[rng.random_range(0..alts.len())].sample(rng),
        }
    }

    pub fn min(&self) -> f64 {
        match self {
            Timing::Fixed(v) => *v,
            Timing::Uniform { lo, .. } => *lo,
            Timing::OneOf(alts) => alts.iter().map(Timing::min).fold(f64::INFINITY, f64::min),
        }
    }

    pub fn max(&self) -> f64 {
        match self {
            Timing::Fixed(v) => *v,
            Timing::Uniform { hi, .. } => *hi,
            Timing::OneOf(alts) => alts.iter().map(Timing::max).fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

/// Parametric burst waveform.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ModulationKind {
    /// Constant-envelope phase modulation by smoothed NRZ data,
    /// `exp(j·index·m(t))`. With `index < π/2` a residual carrier remains
    /// and dominates the spectrum.
    ResidualCarrierPm { symbol_rate: f64, index: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmitterProfile {
    pub label: ClassLabel,
    pub center_freq: f64,
    pub channel_spacing: f64,
    /// Channels `k ∈ [-max_channel, max_channel]` around the center.
    pub max_channel: i32,
    pub burst_duration: Timing,
    pub repetition_interval: Timing,
    pub bandwidth: f64,
    pub modulation: ModulationKind,
}

impl EmitterProfile {
    /// Built-in profile for a drone class; `None` for the noise class.
    pub fn for_class(label: ClassLabel) -> Option<Self> {
        let ms = 1e-3;
        let mhz = 1e6;
        let pm = |symbol_rate: f64, index: f64| ModulationKind::ResidualCarrierPm { symbol_rate, index };
        let p = match label {
            ClassLabel::Dji => EmitterProfile {
                label,
                center_freq: 2.44175e9,
                channel_spacing: 1.7 * mhz,
                max_channel: 2,
                burst_duration: Timing::Fixed(2.18 * ms),
                repetition_interval: Timing::Fixed(630.0 * ms),
                bandwidth: 1.0 * mhz,
                modulation: pm(500e3, 0.9),
            },
            ClassLabel::FutabaT7 => EmitterProfile {
                label,
                center_freq: 2.44175e9,
                channel_spacing: 2.0 * mhz,
                max_channel: 2,
                burst_duration: Timing::Fixed(1.7 * ms),
                repetition_interval: Timing::Fixed(288.0 * ms),
                bandwidth: 0.2 * mhz,
                modulation: pm(100e3, 0.6),
            },
            ClassLabel::FutabaT14 => EmitterProfile {
                label,
                center_freq: 2.44175e9,
                channel_spacing: 3.1 * mhz,
                max_channel: 1,
                burst_duration: Timing::Fixed(1.4 * ms),
                repetition_interval: Timing::Fixed(330.0 * ms),
                bandwidth: 0.4 * mhz,
                modulation: pm(200e3, 0.8),
            },
            ClassLabel::Graupner => EmitterProfile {
                label,
                center_freq: 2.44175e9,
                channel_spacing: 1.0 * mhz,
                max_channel: 4,
                burst_duration: Timing::OneOf(vec![Timing::Fixed(1.9 * ms), Timing::Fixed(3.7 * ms)]),
                repetition_interval: Timing::Fixed(750.0 * ms),
                bandwidth: 0.5 * mhz,
                modulation: pm(250e3, 0.5),
            },
            ClassLabel::Taranis => EmitterProfile {
                label,
                center_freq: 2.440e9,
                channel_spacing: 1.5 * mhz,
                max_channel: 2,
                burst_duration: Timing::OneOf(vec![Timing::Fixed(3.1 * ms), Timing::Fixed(4.4 * ms)]),
                repetition_interval: Timing::Fixed(420.0 * ms),
                bandwidth: 0.8 * mhz,
                modulation: pm(400e3, 0.7),
            },
            ClassLabel::Turnigy => EmitterProfile {
                label,
                center_freq: 2.445e9,
                channel_spacing: 2.0 * mhz,
                max_channel: 1,
                burst_duration: Timing::Fixed(1.3 * ms),
                repetition_interval: Timing::OneOf(vec![
                    Timing::Fixed(61.0 * ms),
                    Timing::Uniform {
                        lo: 120.0 * ms,
                        hi: 2900.0 * ms,
                    },
                ]),
                bandwidth: 0.3 * mhz,
                modulation: pm(150e3, 1.0),
            },
            ClassLabel::Noise => return None,
        };
        Some(p)
    }

    /// Baseband offset of channel `k` for a receiver tuned to `receiver_center`.
    pub fn channel_offset(&self, k: i32, receiver_center: f64) -> f64 {
        self.center_freq - receiver_center + k as f64 * self.channel_spacing
    }

    pub fn validate(&self, sample_rate: f64, receiver_center: f64) -> Result<()> {
        if self.burst_duration.min() <= 0.0 {
            return Err(Error::Validation(format!(
                "{}: burst duration must be positive",
                self.label
            )));
        }
        if self.repetition_interval.min() < self.burst_duration.max() {
            return Err(Error::Validation(format!(
                "{}: repetition interval shorter than burst duration",
                self.label
            )));
        }
        if self.max_channel < 0 || self.channel_spacing < 0.0 || self.bandwidth <= 0.0 {
            return Err(Error::Validation(format!("{}: invalid channel plan", self.label)));
        }
        let reach = (self.center_freq - receiver_center).abs()
            + self.max_channel as f64 * self.channel_spacing
            + self.bandwidth / 2.0;
        if reach >= sample_rate / 2.0 {
            return Err(Error::Config(format!(
                "{}: channel plan reaches {:.3} MHz, outside the ±{:.3} MHz band",
                self.label,
                reach / 1e6,
                sample_rate / 2e6
            )));
        }
        Ok(())
    }
}

/// The channel `φ(·)`: a complex gain with an optional path-loss factor.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelSpec {
    pub gain: Complex64,
    pub path_loss: f64,
    pub receiver_center: f64,
}

impl Default for ChannelSpec {
    fn default() -> Self {
        ChannelSpec {
            gain: Complex64::new(1.0, 0.0),
            path_loss: 1.0,
            receiver_center: RECEIVER_CENTER_HZ,
        }
    }
}

impl ChannelSpec {
    pub fn validate(&self) -> Result<()> {
        if !self.gain.re.is_finite() || !self.gain.im.is_finite() {
            return Err(Error::Validation("channel gain must be finite".into()));
        }
        if !(self.path_loss >= 0.0 && self.path_loss.is_finite()) {
            return Err(Error::Validation("path-loss factor must be finite and >= 0".into()));
        }
        Ok(())
    }

    pub fn effective_gain(&self) -> Complex64 {
        self.gain * self.path_loss
    }
}
