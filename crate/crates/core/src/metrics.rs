//! Evaluation metrics: mean absolute error, harmonic-template SNR and
//! availability, plus their aggregation into a report row.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::filter::BandpassSpec;
use crate::pipeline::spectrum::{band_bins, power_spectrum, Band, RateEstimate};

pub fn mae(pred_bpm: &[f64], true_bpm: &[f64]) -> Result<f64> {
    if pred_bpm.len() != true_bpm.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predictions for {} ground-truth rates",
            pred_bpm.len(),
            true_bpm.len()
        )));
    }
    if pred_bpm.is_empty() {
        return Err(Error::InvalidArgument("mae of an empty list".into()));
    }
    let total: f64 = pred_bpm.iter().zip(true_bpm).map(|(p, t)| (p - t).abs()).sum();
    Ok(total / pred_bpm.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnrOptions {
    /// Half-width of each harmonic template around `f_ref` and `2 f_ref`.
    pub half_width_hz: f64,
    pub pad_factor: usize,
}

impl SnrOptions {
    /// 0.1 Hz for heart rate; 0.05 Hz (the reference bin only) for respiration,
    /// whose band spans just five bins at 10 s windows.
    pub fn for_band(band: Band) -> Self {
        SnrOptions {
            half_width_hz: match band {
                Band::Hr => 0.1,
                Band::Rr => 0.05,
            },
            pad_factor: 1,
        }
    }
}

impl Default for SnrOptions {
    fn default() -> Self {
        SnrOptions::for_band(Band::Hr)
    }
}

/// Ratio in dB of in-band power near the first two harmonics of `f_ref_hz`
/// to the remaining in-band power.
pub fn snr_dehaan(window: &[f64], f_ref_hz: f64, spec: &BandpassSpec, fps: f64, opts: &SnrOptions) -> Result<f64> {
    if window.len() < 2 {
        return Err(Error::InvalidArgument("snr window needs at least 2 samples".into()));
    }
    if !f_ref_hz.is_finite() || f_ref_hz <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "reference frequency {f_ref_hz} Hz is not positive"
        )));
    }
    let spectrum = power_spectrum(window, fps, opts.pad_factor);
    let tol = opts.half_width_hz + 1e-9;
    let (mut signal, mut noise, mut noise_bins) = (0.0, 0.0, 0usize);
    for k in band_bins(&spectrum.freqs, spec) {
        let f = spectrum.freqs[k];
        if (f - f_ref_hz).abs() <= tol || (f - 2.0 * f_ref_hz).abs() <= tol {
            signal += spectrum.power[k];
        } else {
            noise += spectrum.power[k];
            noise_bins += 1;
        }
    }
    if noise_bins == 0 {
        return Err(Error::InvalidArgument(format!(
            "band {}-{} Hz has no bins outside the harmonic template",
            spec.low_hz, spec.high_hz
        )));
    }
    Ok(10.0 * (signal / noise).log10())
}

/// Fraction of windows with SNR at or above 0 dB.
pub fn availability(snrs: &[f64]) -> Result<f64> {
    if snrs.is_empty() {
        return Err(Error::InvalidArgument("availability of an empty list".into()));
    }
    Ok(snrs.iter().filter(|&&s| s >= 0.0).count() as f64 / snrs.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub band: Band,
    pub condition: String,
    pub n_windows: usize,
    pub mae_bpm: f64,
    pub availability: f64,
    pub mean_snr_db: f64,
}

impl MetricsReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn table_header() -> String {
        format!(
            "{:<4} {:<10} {:>9} {:>8} {:>12} {:>9}",
            "band", "condition", "windows", "MAE", "Availability", "SNR(dB)"
        )
    }

    pub fn table_row(&self) -> String {
        format!(
            "{:<4} {:<10} {:>9} {:>8.3} {:>12.3} {:>9.3}",
            self.band.label(),
            self.condition,
            self.n_windows,
            self.mae_bpm,
            self.availability,
            self.mean_snr_db
        )
    }
}

/// Aligned text table of several report rows.
pub fn render_table(reports: &[MetricsReport]) -> String {
    let mut out = MetricsReport::table_header();
    out.push('\n');
    for r in reports {
        let _ = writeln!(out, "{}", r.table_row());
    }
    out
}

/// Aggregates per-window estimates against per-window ground truth. Invalid
/// windows are dropped before aggregation.
pub fn evaluate(estimates: &[RateEstimate], truth_bpm: &[f64], band: Band, condition: &str) -> Result<MetricsReport> {
    if estimates.len() != truth_bpm.len() {
        return Err(Error::InvalidArgument(format!(
            "{} estimates for {} ground-truth windows",
            estimates.len(),
            truth_bpm.len()
        )));
    }
    let mut pred = Vec::new();
    let mut truth = Vec::new();
    let mut snrs = Vec::new();
    for (e, &t) in estimates.iter().zip(truth_bpm) {
        if e.band != band {
            return Err(Error::InvalidArgument(format!(
                "window {} is a {} estimate in a {} evaluation",
                e.window_index,
                e.band.label(),
                band.label()
            )));
        }
        if !e.valid {
            continue;
        }
        pred.push(e.bpm);
        truth.push(t);
        snrs.push(e.snr_db);
    }
    if pred.is_empty() {
        return Err(Error::InvalidArgument("no valid windows to evaluate".into()));
    }
    Ok(MetricsReport {
        band,
        condition: condition.to_string(),
        n_windows: pred.len(),
        mae_bpm: mae(&pred, &truth)?,
        availability: availability(&snrs)?,
        mean_snr_db: snrs.iter().sum::<f64>() / snrs.len() as f64,
    })
}

/// Writes `window_index,bpm,snr_db,band` rows.
pub fn write_rates_csv(path: &Path, estimates: &[RateEstimate]) -> Result<()> {
    let mut out = String::from("window_index,bpm,snr_db,band\n");
    for e in estimates {
        let _ = writeln!(out, "{},{},{},{}", e.window_index, e.bpm, e.snr_db, e.band.label());
    }
    std::fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mae_examples() {
        assert_eq!(mae(&[72.0, 74.0], &[70.0, 70.0]).unwrap(), 3.0);
        assert_eq!(mae(&[60.0, 61.0], &[60.0, 61.0]).unwrap(), 0.0);
        assert_eq!(mae(&[60.0, 75.0], &[75.0, 60.0]).unwrap(), 15.0);
        assert!(mae(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn availability_examples() {
        assert_eq!(availability(&[1.0, -2.0, 0.0, 3.0]).unwrap(), 0.75);
        assert_eq!(availability(&[-1.0, -0.1]).unwrap(), 0.0);
        assert_eq!(availability(&[0.0, 0.0]).unwrap(), 1.0);
        assert!(availability(&[]).is_err());
    }

    #[test]
    fn degenerate_template_names_band() {
        let spec = BandpassSpec {
            low_hz: 1.0,
            high_hz: 1.1,
            order: 2,
        };
        let w: Vec<f64> = (0..200).map(|i| (i as f64 * 0.3).sin()).collect();
        let err = snr_dehaan(&w, 1.0, &spec, 20.0, &SnrOptions::default()).unwrap_err();
        assert!(err.to_string().contains("1-1.1 Hz"), "{err}");
    }
}
