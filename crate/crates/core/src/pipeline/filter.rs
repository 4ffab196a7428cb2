//! Butterworth bandpass design (bilinear transform with prewarping) and
//! zero-phase forward-backward filtering over second-order sections.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandpassSpec {
    pub low_hz: f64,
    pub high_hz: f64,
    /// Order of the lowpass prototype; the bandpass has twice as many poles.
    pub order: usize,
}

impl BandpassSpec {
    /// 0.67 to 4 Hz, i.e. 40 to 240 BPM.
    pub const HR: BandpassSpec = BandpassSpec {
        low_hz: 0.67,
        high_hz: 4.0,
        order: 2,
    };

    /// 0.08 to 0.5 Hz, i.e. 4.8 to 30 breaths per minute.
    pub const RR: BandpassSpec = BandpassSpec {
        low_hz: 0.08,
        high_hz: 0.5,
        order: 2,
    };

    pub fn validate(&self, fps: f64) -> Result<()> {
        let nyquist = fps / 2.0;
        if !(self.low_hz > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "low edge {} Hz must be positive",
                self.low_hz
            )));
        }
        if !(self.high_hz < nyquist) {
            return Err(Error::InvalidArgument(format!(
                "high edge {} Hz is not below Nyquist {nyquist} Hz",
                self.high_hz
            )));
        }
        if !(self.low_hz < self.high_hz) {
            return Err(Error::InvalidArgument(format!(
                "low edge {} Hz is not below high edge {} Hz",
                self.low_hz, self.high_hz
            )));
        }
        if self.order == 0 {
            return Err(Error::InvalidArgument("filter order must be >= 1".into()));
        }
        Ok(())
    }
}

/// Biquad `b0 + b1 z^-1 + b2 z^-2 / 1 + a1 z^-1 + a2 z^-2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

impl Biquad {
    fn response(&self, z_inv: Complex64) -> Complex64 {
        let z2 = z_inv * z_inv;
        (self.b[0] + z_inv * self.b[1] + z2 * self.b[2]) / (self.a[0] + z_inv * self.a[1] + z2 * self.a[2])
    }

    /// Transposed direct form II states for a constant unit input.
    fn step_state(&self) -> [f64; 2] {
        let dc = self.b.iter().sum::<f64>() / self.a.iter().sum::<f64>();
        [dc - self.b[0], self.b[2] - self.a[2] * dc]
    }

    fn dc_gain(&self) -> f64 {
        self.b.iter().sum::<f64>() / self.a.iter().sum::<f64>()
    }
}

/// Cascade of second-order sections.
#[derive(Clone, Debug, PartialEq)]
pub struct Sos {
    pub sections: Vec<Biquad>,
}

impl Sos {
    /// Complex response at `f_hz` for sample rate `fs`.
    pub fn response(&self, f_hz: f64, fs: f64) -> Complex64 {
        let z_inv = Complex64::from_polar(1.0, -2.0 * PI * f_hz / fs);
        self.sections
            .iter()
            .map(|s| s.response(z_inv))
            .fold(Complex64::new(1.0, 0.0), |acc, h| acc * h)
    }

    /// Single forward pass with initial states `zi` scaled by `x0`.
    fn run(&self, x: &[f64], zi: Option<&[[f64; 2]]>, x0: f64) -> Vec<f64> {
        let mut y = x.to_vec();
        for (i, s) in self.sections.iter().enumerate() {
            let [mut z1, mut z2] = zi.map_or([0.0, 0.0], |z| [z[i][0] * x0, z[i][1] * x0]);
            for v in y.iter_mut() {
                let input = *v;
                let out = s.b[0] * input + z1;
                z1 = s.b[1] * input - s.a[1] * out + z2;
                z2 = s.b[2] * input - s.a[2] * out;
                *v = out;
            }
        }
        y
    }

    /// Per-section states giving a step-response steady state.
    fn step_states(&self) -> Vec<[f64; 2]> {
        let mut level = 1.0;
        self.sections
            .iter()
            .map(|s| {
                let [z1, z2] = s.step_state();
                let st = [z1 * level, z2 * level];
                level *= s.dc_gain();
                st
            })
            .collect()
    }
}

fn bilinear(s: Complex64, fs: f64) -> Complex64 {
    (2.0 * fs + s) / (2.0 * fs - s)
}

/// Designs the digital bandpass as second-order sections with unit gain at
/// the (prewarped) centre frequency.
pub fn design_bandpass(spec: &BandpassSpec, fs: f64) -> Result<Sos> {
    spec.validate(fs)?;
    let n = spec.order;
    let w1 = 2.0 * fs * (PI * spec.low_hz / fs).tan();
    let w2 = 2.0 * fs * (PI * spec.high_hz / fs).tan();
    let w0 = (w1 * w2).sqrt();
    let bw = w2 - w1;

    let mut poles = Vec::with_capacity(2 * n);
    for k in 1..=n {
        let theta = PI * (2 * k + n - 1) as f64 / (2 * n) as f64;
        let p = Complex64::from_polar(1.0, theta);
        let a = p * bw / 2.0;
        let d = (a * a - w0 * w0).sqrt();
        poles.push(bilinear(a + d, fs));
        poles.push(bilinear(a - d, fs));
    }

    let eps = 1e-12;
    let mut upper: Vec<Complex64> = poles.iter().copied().filter(|p| p.im > eps).collect();
    let mut real: Vec<f64> = poles.iter().filter(|p| p.im.abs() <= eps).map(|p| p.re).collect();
    upper.sort_by(|a, b| a.arg().total_cmp(&b.arg()));
    real.sort_by(f64::total_cmp);
    if upper.len() * 2 + real.len() != 2 * n || !real.len().is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!(
            "could not pair the poles of {spec:?} into sections"
        )));
    }
    let mut sections = Vec::with_capacity(n);
    for p in upper {
        sections.push(Biquad {
            b: [1.0, 0.0, -1.0],
            a: [1.0, -2.0 * p.re, p.norm_sqr()],
        });
    }
    for pair in real.chunks(2) {
        sections.push(Biquad {
            b: [1.0, 0.0, -1.0],
            a: [1.0, -(pair[0] + pair[1]), pair[0] * pair[1]],
        });
    }
    let mut sos = Sos { sections };
    let centre = fs / PI * (w0 / (2.0 * fs)).atan();
    let gain = sos.response(centre, fs).norm();
    for v in &mut sos.sections[0].b {
        *v /= gain;
    }
    Ok(sos)
}

/// Zero-phase bandpass: forward then backward pass with odd-extension padding
/// and steady-state initial conditions. Output length equals input length.
pub fn butterworth_bandpass(signal: &[f64], spec: &BandpassSpec, fps: f64) -> Result<Vec<f64>> {
    spec.validate(fps)?;
    if signal.len() <= 3 * spec.order {
        return Err(Error::InvalidArgument(format!(
            "series of {} samples is too short for an order-{} filter",
            signal.len(),
            spec.order
        )));
    }
    let sos = design_bandpass(spec, fps)?;
    Ok(filtfilt(&sos, signal))
}

pub fn filtfilt(sos: &Sos, signal: &[f64]) -> Vec<f64> {
    let n = signal.len();
    let pad = (3 * (2 * sos.sections.len() + 1)).min(n - 1);
    let (first, last) = (signal[0], signal[n - 1]);
    let mut ext = Vec::with_capacity(n + 2 * pad);
    ext.extend((1..=pad).rev().map(|i| 2.0 * first - signal[i]));
    ext.extend_from_slice(signal);
    ext.extend((1..=pad).map(|i| 2.0 * last - signal[n - 1 - i]));

    let zi = sos.step_states();
    let fwd = sos.run(&ext, Some(&zi), ext[0]);
    let rev: Vec<f64> = fwd.iter().rev().copied().collect();
    let back = sos.run(&rev, Some(&zi), rev[0]);
    back.iter().rev().skip(pad).take(n).copied().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(f: f64, fps: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| (2.0 * PI * f * i as f64 / fps).sin()).collect()
    }

    /// Squared magnitude of the analog prototype at the prewarped frequency,
    /// which is the magnitude of the forward-backward digital filter.
    fn analytic_fb_gain(spec: &BandpassSpec, fs: f64, f: f64) -> f64 {
        let warp = |x: f64| 2.0 * fs * (PI * x / fs).tan();
        let (w1, w2, w) = (warp(spec.low_hz), warp(spec.high_hz), warp(f));
        let q = (w * w - w1 * w2) / (w * (w2 - w1));
        1.0 / (1.0 + q.powi(2 * spec.order as i32))
    }

    #[test]
    fn response_matches_analytic_curve() {
        let sos = design_bandpass(&BandpassSpec::HR, 20.0).unwrap();
        for &f in &[0.2, 0.5, 0.67, 1.0, 1.5, 2.5, 4.0, 6.0, 9.0] {
            let got = sos.response(f, 20.0).norm_sqr();
            let want = analytic_fb_gain(&BandpassSpec::HR, 20.0, f);
            assert!((got - want).abs() < 1e-9, "f={f}: {got} vs {want}");
        }
    }

    #[test]
    fn passband_sine_is_preserved() {
        let x = sine(1.5, 20.0, 600);
        let y = butterworth_bandpass(&x, &BandpassSpec::HR, 20.0).unwrap();
        assert_eq!(y.len(), x.len());
        let peak = y[40..560].iter().fold(0f64, |m, v| m.max(v.abs()));
        assert!((0.9..=1.0).contains(&peak), "{peak}");
    }

    #[test]
    fn stopband_sine_is_suppressed() {
        let x = sine(0.1, 20.0, 600);
        let y = butterworth_bandpass(&x, &BandpassSpec::HR, 20.0).unwrap();
        let peak = y[40..560].iter().fold(0f64, |m, v| m.max(v.abs()));
        assert!(peak < 0.1, "{peak}");
    }

    #[test]
    fn dc_is_removed() {
        let y = butterworth_bandpass(&[3.0; 400], &BandpassSpec::HR, 20.0).unwrap();
        assert!(y.iter().all(|v| v.abs() < 3e-3), "{:?}", &y[..5]);
    }

    #[test]
    fn nyquist_violation_names_edge() {
        let spec = BandpassSpec {
            low_hz: 0.5,
            high_hz: 12.0,
            order: 2,
        };
        let err = butterworth_bandpass(&[0.0; 100], &spec, 20.0).unwrap_err().to_string();
        assert!(err.contains("high edge 12"), "{err}");
        let short = butterworth_bandpass(&[0.0; 6], &BandpassSpec::HR, 20.0);
        assert!(short.is_err());
    }

    #[test]
    fn odd_order_designs_pair_real_poles() {
        let spec = BandpassSpec {
            order: 3,
            ..BandpassSpec::HR
        };
        let sos = design_bandpass(&spec, 20.0).unwrap();
        assert_eq!(sos.sections.len(), 3);
        for &f in &[0.4, 1.2, 3.0, 5.0] {
            let got = sos.response(f, 20.0).norm_sqr();
            let want = analytic_fb_gain(&spec, 20.0, f);
            assert!((got - want).abs() < 1e-9);
        }
    }
}
