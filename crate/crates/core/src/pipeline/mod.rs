//! Preprocessing of frames into network inputs and postprocessing of network
//! outputs into per-window rate estimates.

pub mod filter;
pub mod preprocess;
pub mod spectrum;

pub use filter::{butterworth_bandpass, design_bandpass, filtfilt, BandpassSpec, Biquad, Sos};
pub use preprocess::{
    align_to_frames, crop_resize, derivative_target, preprocess_clip, unstandardize, ChannelStats, ClipBatch, Roi,
};
pub use spectrum::{
    dominant_frequency, estimate_rate_fft, estimate_rates, hann, power_spectrum, rates_from_waveform, window_starts,
    Band, PowerSpectrum, RateEstimate, RateOptions,
};
