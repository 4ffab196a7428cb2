//! Synthetic face patches rendered from the dichromatic reflection model.
//!
//! Each skin pixel follows
//!
//! ```text
//! C(t) = I0 (1 + psi m(t)) (u_s (s0 + phi m(t)) + (1 + resp_amp r(t)) (u_d d0 + u_p theta(t))) + v_n(t)
//! theta(t) = pulse_amp b(t)
//! ```
//!
//! where `m(t)` is a slow random drift (zero in the clean condition), `b` is
//! the pulse waveform, `r` the respiration waveform (breathing shades the
//! diffuse skin reflection), and `v_n` is Gaussian sensor noise. Background
//! pixels use a grey reflectance and carry neither physiological term.
//! Values are clamped to `[0, 1]` and quantized.

use std::f64::consts::TAU;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{dten, Tensor};

pub type Rgb = [f64; 3];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Condition {
    /// Constant illumination, static subject.
    Clean,
    /// Illumination drift, specular variation and head jitter.
    Natural,
}

impl Condition {
    pub fn label(self) -> &'static str {
        match self {
            Condition::Clean => "clean",
            Condition::Natural => "natural",
        }
    }
}

/// Pixel rectangle `[x, x + w) x [y, y + h)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl Rect {
    pub fn contains_point(&self, px: f64, py: f64) -> bool {
        px >= self.x && px < self.x + self.w && py >= self.y && py < self.y + self.h
    }

    /// Area of the intersection with the unit pixel whose corner is `(px, py)`.
    fn pixel_coverage(&self, px: f64, py: f64) -> f64 {
        let ox = (self.x + self.w).min(px + 1.0) - self.x.max(px);
        let oy = (self.y + self.h).min(py + 1.0) - self.y.max(py);
        ox.max(0.0) * oy.max(0.0)
    }
}

/// Every symbol of the reflection model for one clip.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub i0: f64,
    pub u_s: Rgb,
    pub u_d: Rgb,
    pub u_p: Rgb,
    pub s0: f64,
    pub d0: f64,
    /// Grey diffuse reflectance of non-skin pixels.
    pub background_d0: f64,
    pub pulse_bpm: f64,
    pub resp_bpm: f64,
    pub pulse_phase: f64,
    pub resp_phase: f64,
    pub pulse_amp: f64,
    pub resp_amp: f64,
    /// Relative amplitude of the pulse's second harmonic.
    pub pulse_harmonic: f64,
    pub psi_amp: f64,
    pub phi_amp: f64,
    /// Peak displacement of the skin region in pixels.
    pub motion_amp: f64,
    pub noise_sigma: f64,
    pub quant_bits: u32,
    pub fps: f64,
    pub duration_s: f64,
    pub patch_hw: usize,
    pub skin_mask: Rect,
    pub condition: Condition,
    pub seed: u64,
}

fn unit(v: Rgb) -> Rgb {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            i0: 1.0,
            u_s: unit([1.0, 1.0, 1.0]),
            u_d: unit([0.75, 0.55, 0.42]),
            u_p: unit([0.33, 0.77, 0.53]),
            s0: 0.08,
            d0: 0.55,
            background_d0: 0.35,
            pulse_bpm: 72.0,
            resp_bpm: 15.0,
            pulse_phase: 0.0,
            resp_phase: 0.0,
            pulse_amp: 0.0045,
            resp_amp: 0.009,
            pulse_harmonic: 0.0,
            psi_amp: 0.0,
            phi_amp: 0.0,
            motion_amp: 0.0,
            noise_sigma: 0.002,
            quant_bits: 8,
            fps: 20.0,
            duration_s: 30.0,
            patch_hw: 72,
            skin_mask: Rect {
                x: 12.0,
                y: 12.0,
                w: 48.0,
                h: 48.0,
            },
            condition: Condition::Clean,
            seed: 0,
        }
    }
}

impl SceneConfig {
    /// Static subject under constant light.
    pub fn clean(pulse_bpm: f64, resp_bpm: f64, seed: u64) -> Self {
        SceneConfig {
            pulse_bpm,
            resp_bpm,
            seed,
            pulse_harmonic: 0.3,
            ..SceneConfig::default()
        }
    }

    /// Illumination drift, specular flicker and a jittering skin region.
    pub fn natural(pulse_bpm: f64, resp_bpm: f64, seed: u64) -> Self {
        SceneConfig {
            psi_amp: 0.05,
            phi_amp: 0.02,
            motion_amp: 1.5,
            noise_sigma: 0.003,
            condition: Condition::Natural,
            ..SceneConfig::clean(pulse_bpm, resp_bpm, seed)
        }
    }

    /// Centred square skin region of side `side` in a `patch_hw` patch.
    pub fn with_patch(mut self, patch_hw: usize, side: usize) -> Self {
        let off = (patch_hw - side) as f64 / 2.0;
        self.patch_hw = patch_hw;
        self.skin_mask = Rect {
            x: off,
            y: off,
            w: side as f64,
            h: side as f64,
        };
        self
    }

    pub fn frame_count(&self) -> usize {
        (self.duration_s * self.fps).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !(40.0..=240.0).contains(&self.pulse_bpm) {
            return Err(Error::config(
                "pulse_bpm",
                format!("{} outside [40, 240]", self.pulse_bpm),
            ));
        }
        if !(4.8..=30.0).contains(&self.resp_bpm) {
            return Err(Error::config(
                "resp_bpm",
                format!("{} outside [4.8, 30]", self.resp_bpm),
            ));
        }
        for (name, u) in [("u_s", self.u_s), ("u_d", self.u_d), ("u_p", self.u_p)] {
            let norm = u.iter().map(|x| x * x).sum::<f64>().sqrt();
            if u.iter().any(|&x| x < 0.0) || (norm - 1.0).abs() > 1e-6 {
                return Err(Error::config(name, "must be a nonnegative unit vector"));
            }
        }
        if self.fps <= 2.0 * self.pulse_bpm / 60.0 {
            return Err(Error::config("fps", "below twice the pulse frequency"));
        }
        if !(1..=16).contains(&self.quant_bits) {
            return Err(Error::config("quant_bits", "must lie in 1..=16"));
        }
        if self.frame_count() < 2 {
            return Err(Error::config("duration_s", "clip shorter than two frames"));
        }
        if self.noise_sigma < 0.0 || self.motion_amp < 0.0 {
            return Err(Error::config("noise_sigma", "amplitudes must be nonnegative"));
        }
        let r = self.skin_mask;
        let hw = self.patch_hw as f64;
        if self.patch_hw == 0 || r.w <= 0.0 || r.h <= 0.0 || r.x < 0.0 || r.y < 0.0 || r.x + r.w > hw || r.y + r.h > hw
        {
            return Err(Error::config(
                "skin_mask",
                "must be a nonempty rectangle inside the patch",
            ));
        }
        Ok(())
    }

    pub fn pulse_hz(&self) -> f64 {
        self.pulse_bpm / 60.0
    }

    pub fn resp_hz(&self) -> f64 {
        self.resp_bpm / 60.0
    }
}

/// Slow random drift: a normalised sum of three sinusoids below 0.3 Hz.
#[derive(Clone, Debug)]
struct Drift {
    terms: [(f64, f64, f64); 3],
}

impl Drift {
    fn new(rng: &mut ChaCha8Rng) -> Self {
        let mut terms = [(0.0, 0.0, 0.0); 3];
        let mut total = 0.0;
        for t in &mut terms {
            *t = (
                rng.gen_range(0.2..1.0),
                rng.gen_range(0.03..0.3),
                rng.gen_range(0.0..TAU),
            );
            total += t.0;
        }
        for t in &mut terms {
            t.0 /= total;
        }
        Drift { terms }
    }

    fn at(&self, t: f64) -> f64 {
        self.terms.iter().map(|(a, f, p)| a * (TAU * f * t + p).sin()).sum()
    }
}

/// A [`SceneConfig`] with its seeded random processes instantiated.
#[derive(Clone, Debug)]
pub struct Scene {
    config: SceneConfig,
    drift: Option<Drift>,
    drift_x: Option<Drift>,
    drift_y: Option<Drift>,
    levels: f64,
}

impl Scene {
    pub fn new(config: &SceneConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_d41f);
        let natural = config.condition == Condition::Natural;
        let drift = natural.then(|| Drift::new(&mut rng));
        let drift_x = natural.then(|| Drift::new(&mut rng));
        let drift_y = natural.then(|| Drift::new(&mut rng));
        Scene {
            config: config.clone(),
            drift,
            drift_x,
            drift_y,
            levels: ((1u64 << config.quant_bits) - 1) as f64,
        }
    }

    pub fn config(&self) -> &SceneConfig {
        &self.config
    }

    /// Pulse waveform `b(t)`.
    pub fn pulse(&self, t: f64) -> f64 {
        let c = &self.config;
        let phase = TAU * c.pulse_hz() * t + c.pulse_phase;
        phase.sin() + c.pulse_harmonic * (2.0 * phase).sin()
    }

    /// Respiration waveform `r(t)`.
    pub fn resp(&self, t: f64) -> f64 {
        let c = &self.config;
        (TAU * c.resp_hz() * t + c.resp_phase).sin()
    }

    pub fn theta(&self, t: f64) -> f64 {
        self.config.pulse_amp * self.pulse(t)
    }

    /// Respiratory shading factor applied to the diffuse skin reflection.
    pub fn shading(&self, t: f64) -> f64 {
        1.0 + self.config.resp_amp * self.resp(t)
    }

    /// Non-physiological variation `m(t)`; zero in the clean condition.
    pub fn drift(&self, t: f64) -> f64 {
        self.drift.as_ref().map_or(0.0, |d| d.at(t))
    }

    /// Noise-free colour of a pixel whose area is a `skin` fraction of skin.
    pub fn reflectance(&self, t: f64, skin: f64) -> Rgb {
        let c = &self.config;
        let m = self.drift(t);
        let intensity = c.i0 * (1.0 + c.psi_amp * m);
        let specular = c.s0 + c.phi_amp * m;
        let theta = self.theta(t);
        let shade = self.shading(t);
        let grey = c.background_d0 / 3f64.sqrt();
        std::array::from_fn(|k| {
            let skin_diffuse = shade * (c.u_d[k] * c.d0 + c.u_p[k] * theta);
            intensity * (c.u_s[k] * specular + skin * skin_diffuse + (1.0 - skin) * grey)
        })
    }

    fn quantize(&self, v: f64) -> f64 {
        (v.clamp(0.0, 1.0) * self.levels).round() / self.levels
    }

    /// Observed colour: reflectance plus sensor noise, clamped and quantized.
    pub fn pixel(&self, t: f64, skin: f64, rng: &mut impl Rng) -> Rgb {
        let base = self.reflectance(t, skin);
        let sigma = self.config.noise_sigma;
        std::array::from_fn(|k| {
            let noise = if sigma > 0.0 {
                Normal::new(0.0, sigma).expect("finite sigma").sample(rng)
            } else {
                0.0
            };
            self.quantize(base[k] + noise)
        })
    }

    /// Skin rectangle displaced for frame `i` (static unless `motion_amp > 0`).
    fn skin_rect(&self, t: f64, rng: &mut impl Rng) -> Rect {
        let c = &self.config;
        let mut r = c.skin_mask;
        if let (Some(dx), Some(dy)) = (&self.drift_x, &self.drift_y) {
            if c.motion_amp > 0.0 {
                r.x += c.motion_amp * (0.7 * dx.at(t) + 0.3 * rng.gen_range(-1.0..1.0));
                r.y += c.motion_amp * (0.7 * dy.at(t) + 0.3 * rng.gen_range(-1.0..1.0));
            }
        }
        r
    }
}

/// Colour of one pixel at time `t`, with noise drawn from `rng`.
pub fn drm_pixel_signal(config: &SceneConfig, t: f64, is_skin: bool, rng: &mut impl Rng) -> Rgb {
    Scene::new(config).pixel(t, if is_skin { 1.0 } else { 0.0 }, rng)
}

/// A rendered clip with its ground-truth waveforms.
#[derive(Clone, Debug)]
pub struct SyntheticClip {
    /// `[T, 3, H, W]` in `[0, 1]`.
    pub frames: Tensor<f32>,
    pub pulse_gt: Tensor<f32>,
    pub resp_gt: Tensor<f32>,
    pub config: SceneConfig,
    pub condition: Condition,
}

pub fn render_clip(config: &SceneConfig) -> Result<SyntheticClip> {
    config.validate()?;
    let scene = Scene::new(config);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n = config.frame_count();
    let hw = config.patch_hw;
    let plane = hw * hw;
    let mut frames = vec![0f32; n * 3 * plane];
    let mut pulse = Vec::with_capacity(n);
    let mut resp = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64 / config.fps;
        pulse.push(scene.pulse(t) as f32);
        resp.push(scene.resp(t) as f32);
        let rect = scene.skin_rect(t, &mut rng);
        let frame = &mut frames[i * 3 * plane..(i + 1) * 3 * plane];
        for y in 0..hw {
            for x in 0..hw {
                let skin = rect.pixel_coverage(x as f64, y as f64);
                let rgb = scene.pixel(t, skin, &mut rng);
                for (k, v) in rgb.iter().enumerate() {
                    frame[k * plane + y * hw + x] = *v as f32;
                }
            }
        }
    }
    Ok(SyntheticClip {
        frames: Tensor::new(&[n, 3, hw, hw], frames)?,
        pulse_gt: Tensor::new(&[n], pulse)?,
        resp_gt: Tensor::new(&[n], resp)?,
        condition: config.condition,
        config: config.clone(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConditionMix {
    Clean,
    Natural,
    /// Alternates clean and natural clips, starting with clean.
    Mixed,
}

impl std::str::FromStr for ConditionMix {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "clean" => Ok(ConditionMix::Clean),
            "natural" => Ok(ConditionMix::Natural),
            "mixed" => Ok(ConditionMix::Mixed),
            other => Err(Error::config("condition", format!("unknown condition `{other}`"))),
        }
    }
}

/// Sampling plan for a synthetic dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetSpec {
    pub n_clips: usize,
    pub condition: ConditionMix,
    pub seed: u64,
    pub hr_bpm: [f64; 2],
    pub rr_bpm: [f64; 2],
    pub duration_s: f64,
    pub fps: f64,
    pub patch_hw: usize,
    /// Side of the centred skin square.
    pub skin_side: usize,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            n_clips: 8,
            condition: ConditionMix::Clean,
            seed: 0,
            hr_bpm: [45.0, 150.0],
            rr_bpm: [8.0, 24.0],
            duration_s: 30.0,
            fps: 20.0,
            patch_hw: 72,
            skin_side: 48,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipEntry {
    pub id: String,
    /// Directory relative to the manifest.
    pub path: String,
    pub condition: Condition,
    pub config: SceneConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub spec: DatasetSpec,
    pub clips: Vec<ClipEntry>,
}

/// Draws per-clip configurations from `spec` without rendering them.
pub fn plan_dataset(spec: &DatasetSpec) -> Result<DatasetManifest> {
    if spec.n_clips == 0 {
        return Err(Error::config("n_clips", "must be >= 1"));
    }
    for (name, [lo, hi]) in [("hr_bpm", spec.hr_bpm), ("rr_bpm", spec.rr_bpm)] {
        if !(lo <= hi) {
            return Err(Error::config(name, format!("empty range [{lo}, {hi}]")));
        }
    }
    if spec.skin_side == 0 || spec.skin_side > spec.patch_hw {
        return Err(Error::config("skin_side", "must fit inside the patch"));
    }
    let mut master = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut clips = Vec::with_capacity(spec.n_clips);
    for i in 0..spec.n_clips {
        let seed = master.next_u64();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let hr = rng.gen_range(spec.hr_bpm[0]..=spec.hr_bpm[1]);
        let rr = rng.gen_range(spec.rr_bpm[0]..=spec.rr_bpm[1]);
        let condition = match spec.condition {
            ConditionMix::Clean => Condition::Clean,
            ConditionMix::Natural => Condition::Natural,
            ConditionMix::Mixed if i % 2 == 0 => Condition::Clean,
            ConditionMix::Mixed => Condition::Natural,
        };
        let base = match condition {
            Condition::Clean => SceneConfig::clean(hr, rr, seed),
            Condition::Natural => SceneConfig::natural(hr, rr, seed),
        };
        let config = SceneConfig {
            pulse_phase: rng.gen_range(0.0..TAU),
            resp_phase: rng.gen_range(0.0..TAU),
            fps: spec.fps,
            duration_s: spec.duration_s,
            ..base.with_patch(spec.patch_hw, spec.skin_side)
        };
        config.validate()?;
        let id = format!("clip_{i:03}");
        clips.push(ClipEntry {
            path: id.clone(),
            id,
            condition,
            config,
        });
    }
    Ok(DatasetManifest {
        spec: spec.clone(),
        clips,
    })
}

pub fn make_dataset(spec: &DatasetSpec) -> Result<(Vec<SyntheticClip>, DatasetManifest)> {
    let manifest = plan_dataset(spec)?;
    let clips = manifest
        .clips
        .iter()
        .map(|c| render_clip(&c.config))
        .collect::<Result<Vec<_>>>()?;
    Ok((clips, manifest))
}

pub const DATASET_MANIFEST: &str = "manifest.json";

/// Writes a `t_seconds,value` waveform CSV.
pub fn write_waveform_csv(path: &Path, values: &[f32], fps: f64) -> Result<()> {
    let mut s = String::from("t_seconds,value\n");
    for (i, v) in values.iter().enumerate() {
        s.push_str(&format!("{:.6},{}\n", i as f64 / fps, v));
    }
    fs::write(path, s)?;
    Ok(())
}

pub fn read_waveform_csv(path: &Path) -> Result<Vec<f32>> {
    if !path.exists() {
        return Err(Error::Missing(path.to_path_buf()));
    }
    let text = fs::read_to_string(path)?;
    text.lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.split(',')
                .nth(1)
                .and_then(|v| v.trim().parse::<f32>().ok())
                .ok_or_else(|| Error::Format {
                    path: path.to_path_buf(),
                    reason: format!("bad row `{l}`"),
                })
        })
        .collect()
}

pub fn save_clip(clip: &SyntheticClip, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    dten::write(&dir.join("frames.dten"), &clip.frames)?;
    write_waveform_csv(&dir.join("pulse.csv"), clip.pulse_gt.data(), clip.config.fps)?;
    write_waveform_csv(&dir.join("resp.csv"), clip.resp_gt.data(), clip.config.fps)?;
    fs::write(dir.join("config.json"), serde_json::to_string_pretty(&clip.config)?)?;
    Ok(())
}

pub fn load_clip(dir: &Path) -> Result<SyntheticClip> {
    let config_path = dir.join("config.json");
    if !config_path.exists() {
        return Err(Error::Missing(config_path));
    }
    let config: SceneConfig = serde_json::from_str(&fs::read_to_string(&config_path)?)?;
    let frames = dten::read(&dir.join("frames.dten"))?;
    let pulse = read_waveform_csv(&dir.join("pulse.csv"))?;
    let resp = read_waveform_csv(&dir.join("resp.csv"))?;
    Ok(SyntheticClip {
        pulse_gt: Tensor::new(&[pulse.len()], pulse)?,
        resp_gt: Tensor::new(&[resp.len()], resp)?,
        condition: config.condition,
        frames,
        config,
    })
}

/// Writes every clip plus `manifest.json` under `dir`; returns the manifest path.
pub fn write_dataset(dir: &Path, clips: &[SyntheticClip], manifest: &DatasetManifest) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    for (clip, entry) in clips.iter().zip(&manifest.clips) {
        save_clip(clip, &dir.join(&entry.path))?;
    }
    let path = dir.join(DATASET_MANIFEST);
    fs::write(&path, serde_json::to_string_pretty(manifest)?)?;
    Ok(path)
}

pub fn read_manifest(path: &Path) -> Result<DatasetManifest> {
    if !path.exists() {
        return Err(Error::Missing(path.to_path_buf()));
    }
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

/// Loads every clip listed in a manifest, resolving paths relative to it.
pub fn load_dataset(manifest_path: &Path) -> Result<(Vec<SyntheticClip>, DatasetManifest)> {
    let manifest = read_manifest(manifest_path)?;
    let root = manifest_path.parent().unwrap_or(Path::new("."));
    let clips = manifest
        .clips
        .iter()
        .map(|e| load_clip(&root.join(&e.path)))
        .collect::<Result<Vec<_>>>()?;
    Ok((clips, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quiet(mut c: SceneConfig) -> SceneConfig {
        c.noise_sigma = 0.0;
        c.psi_amp = 0.0;
        c.phi_amp = 0.0;
        c
    }

    #[test]
    fn skin_pixel_matches_reflection_model() {
        let c = SceneConfig {
            quant_bits: 16,
            ..quiet(SceneConfig::default())
        };
        let scene = Scene::new(&c);
        for &t in &[0.0, 0.37, 1.1, 4.9] {
            let got = scene.reflectance(t, 1.0);
            let th = scene.theta(t);
            let shade = 1.0 + c.resp_amp * scene.resp(t);
            for k in 0..3 {
                let want = c.i0 * (c.u_s[k] * c.s0 + shade * (c.u_d[k] * c.d0 + c.u_p[k] * th));
                assert!((got[k] - want).abs() < 1e-12);
            }
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            let px = drm_pixel_signal(&c, t, true, &mut rng);
            for k in 0..3 {
                let want = c.i0 * (c.u_s[k] * c.s0 + shade * (c.u_d[k] * c.d0 + c.u_p[k] * th));
                assert!((px[k] - want).abs() <= 0.5 / 65535.0 + 1e-12);
            }
        }
    }

    #[test]
    fn background_is_constant_without_noise() {
        let c = quiet(SceneConfig::default());
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let first = drm_pixel_signal(&c, 0.0, false, &mut rng);
        for i in 1..50 {
            assert_eq!(drm_pixel_signal(&c, i as f64 * 0.05, false, &mut rng), first);
        }
    }

    #[test]
    fn quantization_error_is_bounded() {
        let c = SceneConfig::default();
        let scene = Scene::new(&c);
        for i in 0..2000 {
            let v = i as f64 / 1999.0;
            assert!((scene.quantize(v) - v).abs() <= 1.0 / 510.0 + 1e-15);
        }
    }

    #[test]
    fn render_is_deterministic() {
        let c = SceneConfig {
            duration_s: 1.0,
            ..SceneConfig::natural(80.0, 12.0, 9).with_patch(16, 8)
        };
        let a = render_clip(&c).unwrap();
        let b = render_clip(&c).unwrap();
        assert_eq!(a.frames, b.frames);
        assert_eq!(a.frames.shape(), &[20, 3, 16, 16]);
        assert_eq!(a.pulse_gt.len(), 20);
        assert!(a.frames.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut c = SceneConfig::default();
        c.pulse_bpm = 300.0;
        assert!(render_clip(&c).unwrap_err().to_string().contains("pulse_bpm"));
        let mut c = SceneConfig::default();
        c.u_p = [1.0, 1.0, 0.0];
        assert!(render_clip(&c).is_err());
        let mut c = SceneConfig::default();
        c.skin_mask.x = 60.0;
        assert!(render_clip(&c).is_err());
    }

    #[test]
    fn clean_preset_has_no_motion() {
        let c = SceneConfig::clean(70.0, 12.0, 0);
        assert_eq!(c.motion_amp, 0.0);
        assert_eq!(c.psi_amp, 0.0);
        assert!(SceneConfig::natural(70.0, 12.0, 0).motion_amp > 0.0);
    }

    #[test]
    fn dataset_plan_contracts() {
        let spec = DatasetSpec {
            n_clips: 4,
            seed: 3,
            ..DatasetSpec::default()
        };
        let m = plan_dataset(&spec).unwrap();
        assert_eq!(m.clips.len(), 4);
        assert!(m.clips.iter().all(|c| c.config.motion_amp == 0.0));
        assert_eq!(m, plan_dataset(&spec).unwrap());

        let wide = DatasetSpec {
            n_clips: 200,
            ..spec.clone()
        };
        let m = plan_dataset(&wide).unwrap();
        assert!(m.clips.iter().all(|c| (45.0..=150.0).contains(&c.config.pulse_bpm)));
        let seeds: std::collections::HashSet<_> = m.clips.iter().map(|c| c.config.seed).collect();
        assert_eq!(seeds.len(), 200);

        let mixed = plan_dataset(&DatasetSpec {
            condition: ConditionMix::Mixed,
            ..spec
        })
        .unwrap();
        assert_eq!(mixed.clips[0].condition, Condition::Clean);
        assert_eq!(mixed.clips[1].condition, Condition::Natural);
    }
}
