//! Scaling a clean window against interference plus receiver noise.

use num_complex::Complex32;
use rand_distr::{Distribution, StandardNormal};

use super::synth::{mean_power, IQWindow};
use crate::rng;
use crate::{Error, Result};

/// Add `interference + AWGN` to `signal` so that the measured window-average
/// signal power over the measured noise power is exactly `snr_db`.
///
/// The noise term is complex white Gaussian with unit variance plus the
/// optional interference; the whole noise term is rescaled, the signal is
/// left untouched.
pub fn mix_to_snr(signal: &IQWindow, interference: Option<&[Complex32]>, snr_db: f64, seed: u64) -> Result<IQWindow> {
    if !snr_db.is_finite() {
        return Err(Error::Validation(format!("target SNR must be finite, got {snr_db}")));
    }
    let ps = signal.power();
    if !(ps > 0.0) || !ps.is_finite() {
        return Err(Error::Validation("cannot set the SNR of a zero-power signal".into()));
    }
    let n = signal.samples.len();
    if let Some(i) = interference {
        if i.len() != n {
            return Err(Error::shape(format!("{n} interference samples"), i.len().to_string()));
        }
    }
    let mut rng = rng::rng(seed);
    let sigma = std::f64::consts::FRAC_1_SQRT_2;
    let noise: Vec<Complex32> = (0..n)
        .map(|i| {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            let base = interference.map_or(Complex32::new(0.0, 0.0), |x| x[i]);
            base + Complex32::new((re * sigma) as f32, (im * sigma) as f32)
        })
        .collect();
    let pn = mean_power(&noise);
    let g = (ps / (pn * 10f64.powf(snr_db / 10.0))).sqrt() as f32;
    let samples = signal.samples.iter().zip(&noise).map(|(&s, &w)| s + w * g).collect();
    Ok(IQWindow {
        samples,
        snr_db: Some(snr_db),
        ..signal.clone()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rfgen::profile::{ChannelSpec, ClassLabel, EmitterProfile};
    use crate::rfgen::synth::{synth_burst, synth_interference, InterferenceKind, WindowSpec, SAMPLE_RATE, WINDOW_LEN};

    #[test]
    fn measured_snr_hits_target() {
        let p = EmitterProfile::for_class(ClassLabel::FutabaT7).unwrap();
        let clean = synth_burst(&p, &ChannelSpec::default(), &WindowSpec::default(), 1).unwrap();
        let intf = synth_interference(&[InterferenceKind::Wifi], WINDOW_LEN, SAMPLE_RATE, 2);
        for snr in [-10.0, 0.0, 10.0, 30.0] {
            for interference in [None, Some(intf.as_slice())] {
                let mixed = mix_to_snr(&clean, interference, snr, 9).unwrap();
                let noise: Vec<Complex32> = mixed.samples.iter().zip(&clean.samples).map(|(m, s)| m - s).collect();
                let measured = 10.0 * (clean.power() / mean_power(&noise)).log10();
                assert!((measured - snr).abs() < 0.1, "{snr}: {measured}");
                assert_eq!(mixed.snr_db, Some(snr));
            }
        }
    }

    #[test]
    fn zero_power_signal_is_rejected() {
        let p = EmitterProfile::for_class(ClassLabel::Dji).unwrap();
        let mut w = synth_burst(&p, &ChannelSpec::default(), &WindowSpec::default(), 0).unwrap();
        w.samples.iter_mut().for_each(|c| *c = Complex32::new(0.0, 0.0));
        assert!(matches!(mix_to_snr(&w, None, 0.0, 0), Err(Error::Validation(_))));
    }
}
