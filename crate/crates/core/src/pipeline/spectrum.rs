use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::filter::{butterworth_bandpass, BandpassSpec};
use crate::error::{Error, Result};
use crate::metrics::{snr_dehaan, SnrOptions};

/// Which physiological rate a series or estimate refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Band {
    Hr,
    Rr,
}

impl Band {
    pub fn spec(self) -> BandpassSpec {
        match self {
            Band::Hr => BandpassSpec::HR,
            Band::Rr => BandpassSpec::RR,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Band::Hr => "hr",
            Band::Rr => "rr",
        }
    }
}

/// One window's dominant-frequency estimate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateEstimate {
    pub window_index: usize,
    pub bpm: f64,
    pub snr_db: f64,
    pub band: Band,
    /// False for windows without variance; they are excluded from aggregates.
    pub valid: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RateOptions {
    pub window_s: f64,
    /// Hop between window starts; defaults to the window length.
    pub stride_s: Option<f64>,
    /// FFT length multiplier; 1 means no zero padding.
    pub pad_factor: usize,
}

impl Default for RateOptions {
    fn default() -> Self {
        RateOptions {
            window_s: 10.0,
            stride_s: None,
            pad_factor: 1,
        }
    }
}

/// One-sided power spectrum of a mean-removed, Hann-tapered window.
#[derive(Clone, Debug)]
pub struct PowerSpectrum {
    pub freqs: Vec<f64>,
    pub power: Vec<f64>,
}

impl PowerSpectrum {
    pub fn bin_width(&self) -> f64 {
        self.freqs.get(1).copied().unwrap_or(0.0)
    }
}

/// Periodic Hann taper.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

pub fn power_spectrum(window: &[f64], fps: f64, pad_factor: usize) -> PowerSpectrum {
    let n = window.len();
    let nfft = n * pad_factor.max(1);
    let mean = window.iter().sum::<f64>() / n as f64;
    let mut buf: Vec<Complex64> = window
        .iter()
        .zip(hann(n))
        .map(|(&x, w)| Complex64::new((x - mean) * w, 0.0))
        .chain(std::iter::repeat_n(Complex64::new(0.0, 0.0), nfft - n))
        .collect();
    FftPlanner::new().plan_fft_forward(nfft).process(&mut buf);
    let bins = nfft / 2 + 1;
    PowerSpectrum {
        freqs: (0..bins).map(|k| k as f64 * fps / nfft as f64).collect(),
        power: buf[..bins].iter().map(|c| c.norm_sqr()).collect(),
    }
}

const EDGE_EPS: f64 = 1e-9;

/// Bin indices whose frequency lies inside `[low, high]`.
pub fn band_bins(freqs: &[f64], spec: &BandpassSpec) -> Vec<usize> {
    freqs
        .iter()
        .enumerate()
        .filter(|(_, &f)| f >= spec.low_hz - EDGE_EPS && f <= spec.high_hz + EDGE_EPS)
        .map(|(i, _)| i)
        .collect()
}

/// Dominant in-band frequency; ties go to the lower frequency.
pub fn dominant_frequency(spectrum: &PowerSpectrum, spec: &BandpassSpec) -> Option<f64> {
    let mut best: Option<usize> = None;
    for k in band_bins(&spectrum.freqs, spec) {
        match best {
            Some(b) if spectrum.power[k] <= spectrum.power[b] => {}
            _ => best = Some(k),
        }
    }
    best.map(|k| spectrum.freqs[k])
}

/// Start offsets of every full window.
pub fn window_starts(len: usize, fps: f64, opts: &RateOptions) -> Result<(usize, Vec<usize>)> {
    let win = (opts.window_s * fps).round() as usize;
    let stride = (opts.stride_s.unwrap_or(opts.window_s) * fps).round() as usize;
    if win == 0 || stride == 0 {
        return Err(Error::InvalidArgument("window and stride must span >= 1 sample".into()));
    }
    if len < win {
        return Err(Error::InvalidArgument(format!(
            "series of {len} samples is shorter than one {}-sample window",
            win
        )));
    }
    Ok((win, (0..=len - win).step_by(stride).collect()))
}

/// Windowed spectral rate estimation over an already filtered series.
///
/// When `reference_bpm` is given, each window's SNR is measured around that
/// window's reference rate; otherwise around the estimate itself.
pub fn estimate_rates(
    signal: &[f64],
    fps: f64,
    band: Band,
    opts: &RateOptions,
    reference_bpm: Option<&[f64]>,
) -> Result<Vec<RateEstimate>> {
    let spec = band.spec();
    let (win, starts) = window_starts(signal.len(), fps, opts)?;
    if let Some(r) = reference_bpm {
        if r.len() != starts.len() {
            return Err(Error::InvalidArgument(format!(
                "{} reference rates for {} windows",
                r.len(),
                starts.len()
            )));
        }
    }
    let snr_opts = SnrOptions::for_band(band);
    let mut out = Vec::with_capacity(starts.len());
    for (i, &s) in starts.iter().enumerate() {
        let window = &signal[s..s + win];
        let mean = window.iter().sum::<f64>() / win as f64;
        let var = window.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / win as f64;
        let spectrum = power_spectrum(window, fps, opts.pad_factor);
        let peak = if var > 0.0 {
            dominant_frequency(&spectrum, &spec)
        } else {
            None
        };
        let Some(f_peak) = peak else {
            out.push(RateEstimate {
                window_index: i,
                bpm: f64::NAN,
                snr_db: f64::NAN,
                band,
                valid: false,
            });
            continue;
        };
        let f_ref = reference_bpm.map_or(f_peak, |r| r[i] / 60.0);
        let snr = snr_dehaan(
            window,
            f_ref,
            &spec,
            fps,
            &SnrOptions {
                pad_factor: opts.pad_factor,
                ..snr_opts
            },
        )
        .unwrap_or(f64::NAN);
        out.push(RateEstimate {
            window_index: i,
            bpm: 60.0 * f_peak,
            snr_db: snr,
            band,
            valid: true,
        });
    }
    Ok(out)
}

/// [`estimate_rates`] with SNR measured around each window's own estimate.
pub fn estimate_rate_fft(signal: &[f64], fps: f64, band: Band, opts: &RateOptions) -> Result<Vec<RateEstimate>> {
    estimate_rates(signal, fps, band, opts, None)
}

/// Bandpass filters a model output and estimates per-window rates.
pub fn rates_from_waveform(
    waveform: &[f64],
    fps: f64,
    band: Band,
    opts: &RateOptions,
    reference_bpm: Option<&[f64]>,
) -> Result<Vec<RateEstimate>> {
    let filtered = butterworth_bandpass(waveform, &band.spec(), fps)?;
    estimate_rates(&filtered, fps, band, opts, reference_bpm)
}
