//! Zero-phase anti-alias filtering and integer-factor decimation.
//!
//! The low-pass is an 8th-order Chebyshev type I (0.05 dB ripple) with its
//! edge at `0.8 / factor` of Nyquist, realized as second-order sections from
//! the analog prototype through the bilinear transform. Each section is
//! normalized to unit DC gain.

use std::f64::consts::PI;

use num_complex::{Complex32, Complex64};

use crate::{Error, Result};

pub const FILTER_ORDER: usize = 8;
pub const RIPPLE_DB: f64 = 0.05;

/// `[b0, b1, b2, a1, a2]` with `a0 = 1`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Biquad(pub [f64; 5]);

#[derive(Clone, Debug, PartialEq)]
pub struct LowpassFilter {
    pub sections: Vec<Biquad>,
}

impl LowpassFilter {
    /// Chebyshev I low-pass of even `order`, edge `cutoff` as a fraction of Nyquist.
    pub fn chebyshev1(order: usize, ripple_db: f64, cutoff: f64) -> Result<Self> {
        if order == 0 || !order.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "filter order must be even and positive, got {order}"
            )));
        }
        if !(cutoff > 0.0 && cutoff < 1.0) || !(ripple_db > 0.0) {
            return Err(Error::Config(format!("bad filter edge {cutoff} / ripple {ripple_db}")));
        }
        let eps = (10f64.powf(ripple_db / 10.0) - 1.0).sqrt();
        let mu = (1.0 / eps).asinh() / order as f64;
        // pre-warped analog edge for the bilinear map s = (z - 1) / (z + 1)
        let warped = (PI * cutoff / 2.0).tan();
        let mut sections = Vec::with_capacity(order / 2);
        for k in 1..=order / 2 {
            let theta = PI * (2 * k - 1) as f64 / (2 * order) as f64;
            let s = Complex64::new(-mu.sinh() * theta.sin(), mu.cosh() * theta.cos()) * warped;
            let z = (Complex64::new(1.0, 0.0) + s) / (Complex64::new(1.0, 0.0) - s);
            let a1 = -2.0 * z.re;
            let a2 = z.norm_sqr();
            let g = (1.0 + a1 + a2) / 4.0;
            sections.push(Biquad([g, 2.0 * g, g, a1, a2]));
        }
        Ok(LowpassFilter { sections })
    }

    /// Anti-alias filter used before decimating by `factor`.
    pub fn for_decimation(factor: usize) -> Result<Self> {
        if factor < 2 {
            return Err(Error::Config(format!("decimation factor must be >= 2, got {factor}")));
        }
        Self::chebyshev1(FILTER_ORDER, RIPPLE_DB, 0.8 / factor as f64)
    }

    /// Complex response at normalized frequency `f` (cycles per sample).
    pub fn response(&self, f: f64) -> Complex64 {
        let z1 = Complex64::from_polar(1.0, -2.0 * PI * f);
        let z2 = z1 * z1;
        self.sections
            .iter()
            .map(|Biquad([b0, b1, b2, a1, a2])| (z1 * *b1 + z2 * *b2 + *b0) / (z1 * *a1 + z2 * *a2 + 1.0))
            .product()
    }

    /// Edge samples mirrored on each side before forward-backward filtering.
    pub fn pad_len(&self) -> usize {
        3 * (2 * self.sections.len() + 1)
    }

    fn run(&self, x: &mut [Complex64]) {
        let x0 = x[0];
        for Biquad([b0, b1, b2, a1, a2]) in &self.sections {
            // steady state for a constant input x0 (each section has unit DC gain)
            let mut z1 = x0 * (1.0 - b0);
            let mut z2 = x0 * (b2 - a2);
            for v in x.iter_mut() {
                let inp = *v;
                let y = inp * *b0 + z1;
                z1 = inp * *b1 - y * *a1 + z2;
                z2 = inp * *b2 - y * *a2;
                *v = y;
            }
        }
    }

    /// Forward-backward filtering with odd edge extension; zero phase,
    /// squared magnitude response.
    pub fn filtfilt(&self, x: &[Complex64]) -> Result<Vec<Complex64>> {
        let pad = self.pad_len();
        if x.len() <= pad {
            return Err(Error::Validation(format!(
                "need more than {pad} samples to filter, got {}",
                x.len()
            )));
        }
        let n = x.len();
        let mut ext = Vec::with_capacity(n + 2 * pad);
        ext.extend((1..=pad).rev().map(|i| x[0] * 2.0 - x[i]));
        ext.extend_from_slice(x);
        ext.extend((1..=pad).map(|i| x[n - 1] * 2.0 - x[n - 1 - i]));
        self.run(&mut ext);
        ext.reverse();
        self.run(&mut ext);
        ext.reverse();
        Ok(ext[pad..pad + n].to_vec())
    }
}

/// Low-pass and keep every `factor`-th sample.
pub fn decimate(iq: &[Complex32], factor: usize) -> Result<Vec<Complex32>> {
    let filter = LowpassFilter::for_decimation(factor)?;
    if !iq.len().is_multiple_of(factor) {
        return Err(Error::Validation(format!(
            "{} samples is not a multiple of the decimation factor {factor}",
            iq.len()
        )));
    }
    let x: Vec<Complex64> = iq.iter().map(|c| Complex64::new(c.re as f64, c.im as f64)).collect();
    let y = filter.filtfilt(&x)?;
    Ok(y.iter()
        .step_by(factor)
        .map(|c| Complex32::new(c.re as f32, c.im as f32))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    const RAW_RATE: f64 = 56e6;

    fn tone(freq: f64, n: usize) -> Vec<Complex32> {
        (0..n)
            .map(|i| {
                let p = 2.0 * PI * freq * i as f64 / RAW_RATE;
                Complex32::new(p.cos() as f32, p.sin() as f32)
            })
            .collect()
    }

    fn interior_power(x: &[Complex32]) -> f64 {
        let core = &x[x.len() / 8..x.len() * 7 / 8];
        core.iter().map(|c| c.norm_sqr() as f64).sum::<f64>() / core.len() as f64
    }

    #[test]
    fn length_and_dc_gain() {
        let x = vec![Complex32::new(0.7, -0.2); 65_536];
        let y = decimate(&x, 4).unwrap();
        assert_eq!(y.len(), 16_384);
        for c in &y {
            assert!((c.re / 0.7 - 1.0).abs() < 0.01 && (c.im / -0.2 - 1.0).abs() < 0.01);
        }
    }

    #[test]
    fn passband_matches_design_and_stopband_is_deep() {
        let filter = LowpassFilter::for_decimation(4).unwrap();
        let designed = filter.response(1e6 / RAW_RATE).norm_sqr().powi(2);
        let y = decimate(&tone(1e6, 65_536), 4).unwrap();
        let got = interior_power(&y);
        assert!(
            (10.0 * (got / designed).log10()).abs() < 1.0,
            "passband {got} vs {designed}"
        );

        let y = decimate(&tone(10e6, 65_536), 4).unwrap();
        let atten = -10.0 * interior_power(&y).log10();
        assert!(atten > 40.0, "stopband attenuation {atten} dB");
    }

    #[test]
    fn ripple_bounded_in_passband() {
        let filter = LowpassFilter::chebyshev1(8, 0.05, 0.2).unwrap();
        for i in 0..=100 {
            let f = 0.1 * i as f64 / 100.0 * 0.99;
            let db = 20.0 * filter.response(f).norm().log10();
            assert!(db.abs() < 0.06, "{f}: {db}");
        }
    }

    #[test]
    fn bad_arguments() {
        assert!(decimate(&vec![Complex32::new(0.0, 0.0); 100], 1).is_err());
        assert!(decimate(&vec![Complex32::new(0.0, 0.0); 101], 4).is_err());
        assert!(LowpassFilter::chebyshev1(7, 0.05, 0.2).is_err());
    }
}
