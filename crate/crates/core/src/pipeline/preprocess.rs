use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::synth::SyntheticClip;

/// Face region inside each frame, in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Roi {
    Full,
    Rect { x: usize, y: usize, w: usize, h: usize },
}

/// Per-channel mean and standard deviation used to standardize a map stack.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

/// Variance floor applied before dividing by the standard deviation.
pub const VARIANCE_FLOOR: f64 = 1e-6;

/// Network-ready maps for one clip.
///
/// Entry `t` pairs the motion map between frames `t` and `t + 1` with the
/// appearance of frame `t + 1`, so a clip of `T` frames yields `T - 1` entries.
#[derive(Clone, Debug)]
pub struct ClipBatch {
    pub motion: Tensor<f32>,
    pub appearance: Tensor<f32>,
    /// Standardized first difference of the pulse waveform, aligned with `motion`.
    pub pulse_gt: Option<Tensor<f32>>,
    /// Standardized first difference of the respiration waveform.
    pub resp_gt: Option<Tensor<f32>>,
    pub fps: f64,
    pub source_id: String,
    pub motion_stats: ChannelStats,
    pub appearance_stats: ChannelStats,
}

impl ClipBatch {
    pub fn len(&self) -> usize {
        self.motion.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn from_clip(clip: &SyntheticClip, roi: Roi, out_hw: usize, source_id: impl Into<String>) -> Result<Self> {
        let mut batch = preprocess_clip(&clip.frames, roi, clip.config.fps, out_hw)?;
        batch.pulse_gt = Some(derivative_target(clip.pulse_gt.data())?);
        batch.resp_gt = Some(derivative_target(clip.resp_gt.data())?);
        batch.source_id = source_id.into();
        Ok(batch)
    }
}

/// First difference of a waveform, standardized to zero mean and unit variance.
///
/// Matches the motion maps, which are frame differences.
pub fn derivative_target(wave: &[f32]) -> Result<Tensor<f32>> {
    if wave.len() < 2 {
        return Err(Error::InvalidArgument("waveform needs at least 2 samples".into()));
    }
    let d: Vec<f64> = wave.windows(2).map(|w| w[1] as f64 - w[0] as f64).collect();
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.max(VARIANCE_FLOOR).sqrt();
    Tensor::new(&[d.len()], d.iter().map(|v| ((v - mean) / std) as f32).collect())
}

/// Prepends the first sample so a `T - 1` series aligned with motion maps
/// spans all `T` frames of the source clip.
pub fn align_to_frames(series: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(series.len() + 1);
    if let Some(&first) = series.first() {
        out.push(first);
    }
    out.extend_from_slice(series);
    out
}

/// Bilinear resize of one `[h, w]` plane using pixel-centre alignment.
fn resize_plane(src: &[f32], h: usize, w: usize, out: usize) -> Vec<f32> {
    if h == out && w == out {
        return src.to_vec();
    }
    let sy = h as f64 / out as f64;
    let sx = w as f64 / out as f64;
    let coord = |d: usize, scale: f64, n: usize| {
        let c = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (n - 1) as f64);
        let i0 = c.floor() as usize;
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, c - i0 as f64)
    };
    let mut dst = Vec::with_capacity(out * out);
    for y in 0..out {
        let (y0, y1, fy) = coord(y, sy, h);
        for x in 0..out {
            let (x0, x1, fx) = coord(x, sx, w);
            let top = src[y0 * w + x0] as f64 * (1.0 - fx) + src[y0 * w + x1] as f64 * fx;
            let bot = src[y1 * w + x0] as f64 * (1.0 - fx) + src[y1 * w + x1] as f64 * fx;
            dst.push((top * (1.0 - fy) + bot * fy) as f32);
        }
    }
    dst
}

/// Crops `roi` from every frame and resizes it to `out_hw x out_hw`.
pub fn crop_resize(frames: &Tensor<f32>, roi: Roi, out_hw: usize) -> Result<Tensor<f32>> {
    let [t, c, h, w] = frames.expect4("frames")?;
    if c != 3 {
        return Err(Error::Shape(format!("frames must be RGB, got {:?}", frames.shape())));
    }
    let (rx, ry, rw, rh) = match roi {
        Roi::Full => (0, 0, w, h),
        Roi::Rect { x, y, w: rw, h: rh } => (x, y, rw, rh),
    };
    if rw == 0 || rh == 0 {
        return Err(Error::InvalidArgument("roi has zero area".into()));
    }
    if rx + rw > w || ry + rh > h {
        return Err(Error::InvalidArgument(format!(
            "roi {rw}x{rh} at ({rx}, {ry}) exceeds {w}x{h} frame"
        )));
    }
    let mut out = Vec::with_capacity(t * c * out_hw * out_hw);
    let mut crop = Vec::with_capacity(rw * rh);
    for plane in frames.data().chunks(h * w) {
        crop.clear();
        for y in ry..ry + rh {
            crop.extend_from_slice(&plane[y * w + rx..y * w + rx + rw]);
        }
        out.extend(resize_plane(&crop, rh, rw, out_hw));
    }
    Tensor::new(&[t, c, out_hw, out_hw], out)
}

fn standardize(maps: &mut Tensor<f32>) -> ChannelStats {
    let [t, c, h, w] = maps.dims4();
    let plane = h * w;
    let mut stats = ChannelStats {
        mean: [0.0; 3],
        std: [1.0; 3],
    };
    for ch in 0..c.min(3) {
        let (mut sum, mut sq) = (0.0f64, 0.0f64);
        for f in 0..t {
            for &v in &maps.data()[(f * c + ch) * plane..(f * c + ch + 1) * plane] {
                sum += v as f64;
            }
        }
        let n = (t * plane) as f64;
        let mean = sum / n;
        for f in 0..t {
            for &v in &maps.data()[(f * c + ch) * plane..(f * c + ch + 1) * plane] {
                sq += (v as f64 - mean).powi(2);
            }
        }
        let std = (sq / n).max(VARIANCE_FLOOR).sqrt();
        for f in 0..t {
            for v in &mut maps.data_mut()[(f * c + ch) * plane..(f * c + ch + 1) * plane] {
                *v = ((*v as f64 - mean) / std) as f32;
            }
        }
        stats.mean[ch] = mean;
        stats.std[ch] = std;
    }
    stats
}

/// Inverse of the per-channel standardization.
pub fn unstandardize(maps: &Tensor<f32>, stats: &ChannelStats) -> Tensor<f32> {
    let [_, c, h, w] = maps.dims4();
    let plane = h * w;
    let mut out = maps.clone();
    for (i, p) in out.data_mut().chunks_mut(plane).enumerate() {
        let ch = i % c;
        for v in p {
            *v = (*v as f64 * stats.std[ch] + stats.mean[ch]) as f32;
        }
    }
    out
}

/// Motion maps (consecutive-frame differences) and appearance maps of the
/// cropped, resized clip, each standardized per channel over the whole clip.
pub fn preprocess_clip(frames: &Tensor<f32>, roi: Roi, fps: f64, out_hw: usize) -> Result<ClipBatch> {
    let [t, ..] = frames.expect4("frames")?;
    if t < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 frames, got {t}")));
    }
    let resized = crop_resize(frames, roi, out_hw)?;
    let frame_len = resized.len() / t;
    let mut motion = Vec::with_capacity((t - 1) * frame_len);
    for f in 0..t - 1 {
        let (cur, next) = (resized.outer(f), resized.outer(f + 1));
        motion.extend(next.iter().zip(cur).map(|(a, b)| a - b));
    }
    let mut motion = Tensor::new(&[t - 1, 3, out_hw, out_hw], motion)?;
    let mut appearance = resized.narrow_outer(1, t - 1)?;
    let motion_stats = standardize(&mut motion);
    let appearance_stats = standardize(&mut appearance);
    Ok(ClipBatch {
        motion,
        appearance,
        pulse_gt: None,
        resp_gt: None,
        fps,
        source_id: String::new(),
        motion_stats,
        appearance_stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_video_has_zero_motion() {
        let frames = Tensor::<f32>::full(&[5, 3, 8, 8], 0.4);
        let b = preprocess_clip(&frames, Roi::Full, 20.0, 8).unwrap();
        assert!(b.motion.data().iter().all(|&v| v == 0.0));
        assert!(b.appearance.all_finite());
        assert_eq!(b.motion_stats.mean, [0.0; 3]);
    }

    #[test]
    fn full_roi_same_size_is_identity() {
        let frames = Tensor::<f32>::from_fn(&[2, 3, 6, 6], |i| (i as f32 * 0.13).sin());
        assert_eq!(crop_resize(&frames, Roi::Full, 6).unwrap(), frames);
    }

    #[test]
    fn bilinear_downscale_averages_pairs() {
        let frames = Tensor::<f32>::from_fn(&[1, 3, 4, 4], |i| (i % 4) as f32);
        let r = crop_resize(&frames, Roi::Full, 2).unwrap();
        assert_eq!(&r.data()[..4], &[0.5, 2.5, 0.5, 2.5]);
    }

    #[test]
    fn roi_validation() {
        let frames = Tensor::<f32>::zeros(&[2, 3, 8, 8]);
        assert!(preprocess_clip(&frames, Roi::Rect { x: 0, y: 0, w: 0, h: 4 }, 20.0, 4).is_err());
        assert!(preprocess_clip(&frames, Roi::Rect { x: 6, y: 0, w: 4, h: 4 }, 20.0, 4).is_err());
        let single = Tensor::<f32>::zeros(&[1, 3, 8, 8]);
        assert!(preprocess_clip(&single, Roi::Full, 20.0, 8).is_err());
    }

    #[test]
    fn derivative_target_is_standardized() {
        let w: Vec<f32> = (0..100).map(|i| (i as f32 * 0.3).sin()).collect();
        let d = derivative_target(&w).unwrap();
        assert_eq!(d.len(), 99);
        let mean = d.data().iter().map(|&v| v as f64).sum::<f64>() / 99.0;
        let var = d.data().iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / 99.0;
        assert!(mean.abs() < 1e-6 && (var - 1.0).abs() < 1e-5);
    }
}
