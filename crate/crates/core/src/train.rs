//! Optimisation loop, whole-clip inference and the clean/natural
//! cross-condition protocol.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{evaluate, MetricsReport};
use crate::model::{checkpoint, loss_multitask_grad, Mode, Model, ModelConfig, Targets};
use crate::numerics::Tensor;
use crate::pipeline::{align_to_frames, rates_from_waveform, Band, ClipBatch, RateEstimate, RateOptions, Roi};
use crate::synth::{load_dataset, Condition, ConditionMix, SyntheticClip};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub optimizer: Optimizer,
    /// Chunks per optimisation step.
    pub batch_clips: usize,
    pub steps: usize,
    pub seed: u64,
    pub alpha: f64,
    pub beta: f64,
    /// Evaluate every this many steps; 0 disables periodic evaluation.
    pub eval_every: usize,
    pub train_condition: ConditionMix,
    pub eval_condition: ConditionMix,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            optimizer: Optimizer::default(),
            batch_clips: 1,
            steps: 3000,
            seed: 0,
            alpha: 1.0,
            beta: 1.0,
            eval_every: 0,
            train_condition: ConditionMix::Clean,
            eval_condition: ConditionMix::Clean,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::config(
                "lr",
                format!("{} is not a finite non-negative rate", self.lr),
            ));
        }
        if self.steps == 0 {
            return Err(Error::config("steps", "must be >= 1"));
        }
        if self.batch_clips == 0 {
            return Err(Error::config("batch_clips", "must be >= 1"));
        }
        if self.alpha < 0.0 || self.beta < 0.0 {
            return Err(Error::config("alpha", "loss weights must be non-negative"));
        }
        if self.alpha == 0.0 && self.beta == 0.0 {
            return Err(Error::config("alpha", "alpha and beta cannot both be zero"));
        }
        if let Optimizer::Adam { beta1, beta2, eps } = self.optimizer {
            if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || eps <= 0.0 {
                return Err(Error::config(
                    "optimizer",
                    "adam needs beta1, beta2 in [0, 1) and eps > 0",
                ));
            }
        }
        Ok(())
    }
}

/// A preprocessed clip together with its raw ground-truth waveforms.
#[derive(Clone, Debug)]
pub struct PreparedClip {
    pub batch: ClipBatch,
    pub pulse_wave: Vec<f64>,
    pub resp_wave: Vec<f64>,
    pub condition: Condition,
}

impl PreparedClip {
    pub fn new(clip: &SyntheticClip, input_hw: usize, id: impl Into<String>) -> Result<Self> {
        Ok(PreparedClip {
            batch: ClipBatch::from_clip(clip, Roi::Full, input_hw, id)?,
            pulse_wave: clip.pulse_gt.data().iter().map(|&v| v as f64).collect(),
            resp_wave: clip.resp_gt.data().iter().map(|&v| v as f64).collect(),
            condition: clip.condition,
        })
    }
}

pub fn prepare_all(clips: &[SyntheticClip], input_hw: usize) -> Result<Vec<PreparedClip>> {
    clips
        .iter()
        .enumerate()
        .map(|(i, c)| PreparedClip::new(c, input_hw, format!("clip_{i:03}")))
        .collect()
}

/// A `T`-frame training sample cut from a prepared clip.
#[derive(Clone, Debug)]
pub struct Chunk {
    pub motion: Tensor<f32>,
    pub appearance: Tensor<f32>,
    pub pulse: Option<Tensor<f32>>,
    pub resp: Option<Tensor<f32>>,
}

impl Chunk {
    pub fn cut(batch: &ClipBatch, start: usize, frames: usize) -> Result<Self> {
        let slice = |t: &Option<Tensor<f32>>| -> Result<Option<Tensor<f32>>> {
            t.as_ref().map(|t| t.narrow_outer(start, frames)).transpose()
        };
        Ok(Chunk {
            motion: batch.motion.narrow_outer(start, frames)?,
            appearance: batch.appearance.narrow_outer(start, frames)?,
            pulse: slice(&batch.pulse_gt)?,
            resp: slice(&batch.resp_gt)?,
        })
    }
}

#[derive(Clone, Debug)]
struct AdamState {
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
    t: i32,
}

/// A model with its optimiser state.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub model: Model,
    pub config: TrainConfig,
    adam: Option<AdamState>,
    steps_taken: usize,
}

impl Trainer {
    pub fn new(model: Model, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let adam = matches!(config.optimizer, Optimizer::Adam { .. }).then(|| AdamState {
            m: model.params().iter().map(|p| vec![0.0; p.value.len()]).collect(),
            v: model.params().iter().map(|p| vec![0.0; p.value.len()]).collect(),
            t: 0,
        });
        Ok(Trainer {
            model,
            config,
            adam,
            steps_taken: 0,
        })
    }

    pub fn steps_taken(&self) -> usize {
        self.steps_taken
    }

    /// Accumulates the mean of per-chunk gradients into the model and returns
    /// the mean loss. Gradients are zeroed first.
    pub fn accumulate(&mut self, chunks: &[Chunk], dropout_seed: u64) -> Result<f64> {
        if chunks.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        self.model.zero_grad();
        let scale = 1.0 / chunks.len() as f32;
        let mut total = 0.0;
        for (i, c) in chunks.iter().enumerate() {
            let mode = Mode::Train {
                seed: dropout_seed.wrapping_add(i as u64),
            };
            let (out, trace) = self.model.forward_traced(&c.motion, &c.appearance, mode)?;
            let targets = Targets {
                pulse: c.pulse.as_ref(),
                resp: c.resp.as_ref(),
            };
            let lg = loss_multitask_grad(&out, &targets, self.config.alpha, self.config.beta)?;
            total += lg.loss;
            let scaled = |g: Option<Tensor<f32>>| {
                g.map(|mut g| {
                    g.scale(scale);
                    g
                })
            };
            self.model
                .backward(&trace, scaled(lg.pulse).as_ref(), scaled(lg.resp).as_ref())?;
        }
        Ok(total / chunks.len() as f64)
    }

    /// One forward, backward and update; returns the pre-update loss.
    pub fn step(&mut self, chunks: &[Chunk]) -> Result<f64> {
        let dropout_seed = self.config.seed ^ (self.steps_taken as u64).wrapping_mul(0x2545_f491_4f6c_dd1d);
        let loss = self.accumulate(chunks, dropout_seed)?;
        if !loss.is_finite() {
            let culprit = self
                .model
                .params()
                .iter()
                .find(|p| !p.grad.all_finite() || !p.value.all_finite())
                .map_or("loss".to_string(), |p| format!("parameter `{}`", p.name));
            return Err(Error::NonFinite(format!(
                "step {}: loss is {loss} ({culprit})",
                self.steps_taken
            )));
        }
        self.apply_update();
        self.steps_taken += 1;
        Ok(loss)
    }

    fn apply_update(&mut self) {
        let lr = self.config.lr;
        match (self.config.optimizer, self.adam.as_mut()) {
            (Optimizer::Adam { beta1, beta2, eps }, Some(state)) => {
                state.t += 1;
                let c1 = 1.0 - beta1.powi(state.t);
                let c2 = 1.0 - beta2.powi(state.t);
                let (b1, b2) = (beta1 as f32, beta2 as f32);
                let step = (lr * c2.sqrt() / c1) as f32;
                let eps_hat = (eps * c2.sqrt()) as f32;
                for (i, p) in self.model.params_mut().iter_mut().enumerate() {
                    let (m, v) = (&mut state.m[i], &mut state.v[i]);
                    let grad = p.grad.data().to_vec();
                    for (j, w) in p.value.data_mut().iter_mut().enumerate() {
                        let g = grad[j];
                        m[j] = b1 * m[j] + (1.0 - b1) * g;
                        v[j] = b2 * v[j] + (1.0 - b2) * g * g;
                        *w -= step * m[j] / (v[j].sqrt() + eps_hat);
                    }
                }
            }
            _ => {
                let lr = lr as f32;
                for p in self.model.params_mut() {
                    let grad = p.grad.data().to_vec();
                    for (w, g) in p.value.data_mut().iter_mut().zip(grad) {
                        *w -= lr * g;
                    }
                }
            }
        }
    }
}

/// Deterministic sampler of training chunks: clips are visited in a fresh
/// seeded permutation each epoch, each with a uniformly drawn start frame.
#[derive(Debug)]
pub struct ChunkSampler {
    rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
    n_clips: usize,
    frames: usize,
}

impl ChunkSampler {
    pub fn new(n_clips: usize, frames: usize, seed: u64) -> Self {
        ChunkSampler {
            rng: ChaCha8Rng::seed_from_u64(seed),
            order: Vec::new(),
            cursor: 0,
            n_clips,
            frames,
        }
    }

    pub fn next_batch(&mut self, clips: &[PreparedClip], size: usize) -> Result<Vec<Chunk>> {
        (0..size)
            .map(|_| {
                if self.cursor == self.order.len() {
                    self.order = (0..self.n_clips).collect();
                    self.order.shuffle(&mut self.rng);
                    self.cursor = 0;
                }
                let clip = &clips[self.order[self.cursor]].batch;
                self.cursor += 1;
                if clip.len() < self.frames {
                    return Err(Error::InvalidArgument(format!(
                        "clip `{}` has {} maps, fewer than {} frames per sample",
                        clip.source_id,
                        clip.len(),
                        self.frames
                    )));
                }
                let start = self.rng.gen_range(0..=clip.len() - self.frames);
                Chunk::cut(clip, start, self.frames)
            })
            .collect()
    }
}

/// Whole-clip network outputs, one sample per motion map.
#[derive(Clone, Debug)]
pub struct ClipPrediction {
    pub pulse: Option<Vec<f64>>,
    pub resp: Option<Vec<f64>>,
}

/// Runs the model over consecutive `T`-frame chunks. A trailing remainder is
/// covered by one extra chunk aligned to the clip end, of which only the
/// new samples are kept.
pub fn predict_clip(model: &Model, batch: &ClipBatch) -> Result<ClipPrediction> {
    let t = model.config().frames_per_clip;
    let n = batch.len();
    if n < t {
        return Err(Error::InvalidArgument(format!("clip has {n} maps, fewer than {t}")));
    }
    let mut starts: Vec<usize> = (0..=n - t).step_by(t).collect();
    if !n.is_multiple_of(t) {
        starts.push(n - t);
    }
    let cfg = model.config();
    let mut pulse = cfg.task.has_pulse().then(|| Vec::with_capacity(n));
    let mut resp = cfg.task.has_resp().then(|| Vec::with_capacity(n));
    let mut filled = 0;
    for s in starts {
        let out = model.forward(
            &batch.motion.narrow_outer(s, t)?,
            &batch.appearance.narrow_outer(s, t)?,
            Mode::Infer,
        )?;
        let skip = filled - s;
        if let (Some(dst), Some(src)) = (pulse.as_mut(), out.pulse.as_ref()) {
            dst.extend(src.data()[skip..].iter().map(|&v| v as f64));
        }
        if let (Some(dst), Some(src)) = (resp.as_mut(), out.resp.as_ref()) {
            dst.extend(src.data()[skip..].iter().map(|&v| v as f64));
        }
        filled = s + t;
    }
    Ok(ClipPrediction { pulse, resp })
}

/// Turns a predicted first-difference series into a frame-aligned waveform.
pub fn integrate(derivative: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    let wave: Vec<f64> = derivative
        .iter()
        .map(|d| {
            acc += d;
            acc
        })
        .collect();
    align_to_frames(&wave)
}

/// Per-window reference rates measured from a ground-truth waveform.
pub fn reference_rates(wave: &[f64], fps: f64, band: Band, opts: &RateOptions) -> Result<Vec<f64>> {
    Ok(rates_from_waveform(wave, fps, band, opts, None)?
        .into_iter()
        .map(|e| e.bpm)
        .collect())
}

/// Rate estimates for one clip and band, with SNR taken around the reference rate.
#[derive(Clone, Debug)]
pub struct ClipRates {
    pub estimates: Vec<RateEstimate>,
    pub truth_bpm: Vec<f64>,
}

pub fn clip_rates(pred: &ClipPrediction, clip: &PreparedClip, band: Band, opts: &RateOptions) -> Result<ClipRates> {
    let (series, gt) = match band {
        Band::Hr => (pred.pulse.as_ref(), &clip.pulse_wave),
        Band::Rr => (pred.resp.as_ref(), &clip.resp_wave),
    };
    let series = series.ok_or_else(|| Error::InvalidArgument(format!("model has no {} output", band.label())))?;
    let fps = clip.batch.fps;
    let truth_bpm = reference_rates(gt, fps, band, opts)?;
    let estimates = rates_from_waveform(&integrate(series), fps, band, opts, Some(&truth_bpm))?;
    Ok(ClipRates { estimates, truth_bpm })
}

/// Evaluates `model` over `clips` for every band it predicts.
pub fn evaluate_model(model: &Model, clips: &[PreparedClip], condition: &str) -> Result<Vec<MetricsReport>> {
    let opts = RateOptions::default();
    let task = model.config().task;
    let bands: Vec<Band> = [(Band::Hr, task.has_pulse()), (Band::Rr, task.has_resp())]
        .into_iter()
        .filter_map(|(b, on)| on.then_some(b))
        .collect();
    let preds = predict_all(model, clips)?;
    bands
        .into_iter()
        .map(|band| {
            let mut est = Vec::new();
            let mut truth = Vec::new();
            for (pred, clip) in preds.iter().zip(clips) {
                let r = clip_rates(pred, clip, band, &opts)?;
                est.extend(r.estimates);
                truth.extend(r.truth_bpm);
            }
            evaluate(&est, &truth, band, condition)
        })
        .collect()
}

/// Number of evaluation threads, from `RPPG_THREADS` (default 1).
pub fn thread_budget() -> usize {
    std::env::var("RPPG_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or(1)
}

/// Predictions for every clip; the result does not depend on the thread count.
pub fn predict_all(model: &Model, clips: &[PreparedClip]) -> Result<Vec<ClipPrediction>> {
    let threads = thread_budget().min(clips.len()).max(1);
    if threads == 1 {
        return clips.iter().map(|c| predict_clip(model, &c.batch)).collect();
    }
    let per = clips.len().div_ceil(threads);
    std::thread::scope(|scope| {
        let handles: Vec<_> = clips
            .chunks(per)
            .map(|part| {
                scope.spawn(move || {
                    part.iter()
                        .map(|c| predict_clip(model, &c.batch))
                        .collect::<Result<Vec<_>>>()
                })
            })
            .collect();
        let mut out = Vec::with_capacity(clips.len());
        for h in handles {
            out.extend(
                h.join()
                    .map_err(|_| Error::Invariant("prediction thread panicked".into()))??,
            );
        }
        Ok(out)
    })
}

/// One row of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: usize,
    pub loss: f64,
    pub eval_mae: Option<f64>,
}

pub fn log_csv(rows: &[LogRow]) -> String {
    let mut s = String::from("step,loss,eval_mae\n");
    for r in rows {
        let mae = r.eval_mae.map(|m| m.to_string()).unwrap_or_default();
        let _ = writeln!(s, "{},{},{}", r.step, r.loss, mae);
    }
    s
}

/// Trains `model` on in-memory clips. When `eval_every > 0`, the heart-rate
/// MAE (or respiration MAE for respiration-only models) on `eval` is logged
/// at every multiple of it.
pub fn fit(
    model: Model,
    config: &TrainConfig,
    train: &[PreparedClip],
    eval: &[PreparedClip],
) -> Result<(Model, Vec<LogRow>)> {
    if train.is_empty() {
        return Err(Error::InvalidArgument("no training clips".into()));
    }
    let frames = model.config().frames_per_clip;
    let mut trainer = Trainer::new(model, config.clone())?;
    let mut sampler = ChunkSampler::new(train.len(), frames, config.seed);
    let mut rows = Vec::with_capacity(config.steps);
    for step in 1..=config.steps {
        let batch = sampler.next_batch(train, config.batch_clips)?;
        let loss = trainer.step(&batch)?;
        let eval_mae = if config.eval_every > 0 && step % config.eval_every == 0 && !eval.is_empty() {
            let reports = evaluate_model(&trainer.model, eval, "eval")?;
            Some(reports[0].mae_bpm)
        } else {
            None
        };
        if step == 1 || step % 100 == 0 {
            log::info!("step {step}: loss {loss:.5}");
        }
        rows.push(LogRow { step, loss, eval_mae });
    }
    Ok((trainer.model, rows))
}

fn matches(mix: ConditionMix, c: Condition) -> bool {
    match mix {
        ConditionMix::Mixed => true,
        ConditionMix::Clean => c == Condition::Clean,
        ConditionMix::Natural => c == Condition::Natural,
    }
}

/// Loads a dataset manifest and keeps the clips matching `mix`.
pub fn load_prepared(manifest: &Path, mix: ConditionMix, input_hw: usize) -> Result<Vec<PreparedClip>> {
    let (clips, m) = load_dataset(manifest)?;
    clips
        .iter()
        .zip(&m.clips)
        .filter(|(c, _)| matches(mix, c.condition))
        .map(|(c, e)| PreparedClip::new(c, input_hw, e.id.clone()))
        .collect()
}

/// Everything one training run needs.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

/// Paths written by [`run`].
#[derive(Clone, Debug)]
pub struct RunArtifacts {
    pub checkpoint: PathBuf,
    pub log: PathBuf,
    pub config: PathBuf,
    pub reports: Vec<MetricsReport>,
}

/// Trains from a dataset manifest and writes the log, final checkpoint and
/// echoed config to `out_dir`. Evaluation clips come from `eval_manifest`
/// when given, else from the training manifest.
pub fn run(
    config: &RunConfig,
    train_manifest: &Path,
    eval_manifest: Option<&Path>,
    out_dir: &Path,
) -> Result<RunArtifacts> {
    config.model.validate()?;
    config.train.validate()?;
    let hw = config.model.input_hw;
    let train = load_prepared(train_manifest, config.train.train_condition, hw)?;
    let eval = load_prepared(eval_manifest.unwrap_or(train_manifest), config.train.eval_condition, hw)?;
    let model = Model::build(config.model.clone(), config.train.seed)?;
    let (model, rows) = fit(model, &config.train, &train, &eval)?;

    fs::create_dir_all(out_dir)?;
    let log = out_dir.join("train_log.csv");
    fs::write(&log, log_csv(&rows))?;
    let checkpoint_dir = out_dir.join("checkpoint");
    checkpoint::save(&model, &checkpoint_dir, config.train.seed, rows.len())?;
    let config_path = out_dir.join("run_config.json");
    fs::write(&config_path, serde_json::to_string_pretty(config)?)?;
    let reports = if eval.is_empty() {
        Vec::new()
    } else {
        evaluate_model(
            &model,
            &eval,
            &format!("{:?}", config.train.eval_condition).to_lowercase(),
        )?
    };
    Ok(RunArtifacts {
        checkpoint: checkpoint_dir,
        log,
        config: config_path,
        reports,
    })
}

/// The cross-condition protocols: train on one condition, test on the other.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Protocol {
    /// Train clean, test natural.
    C2N,
    /// Train natural, test clean.
    N2C,
}

impl Protocol {
    pub fn conditions(self) -> (Condition, Condition) {
        match self {
            Protocol::C2N => (Condition::Clean, Condition::Natural),
            Protocol::N2C => (Condition::Natural, Condition::Clean),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Protocol::C2N => "C2N",
            Protocol::N2C => "N2C",
        }
    }
}

/// Result of one cross-condition run.
#[derive(Clone, Debug)]
pub struct ProtocolOutcome {
    pub log: Vec<LogRow>,
    pub reports: Vec<MetricsReport>,
}

/// Trains on the protocol's source condition and evaluates on its target.
pub fn run_protocol(
    protocol: Protocol,
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    clips: &[PreparedClip],
) -> Result<ProtocolOutcome> {
    let (src, dst) = protocol.conditions();
    let train: Vec<PreparedClip> = clips.iter().filter(|c| c.condition == src).cloned().collect();
    let eval: Vec<PreparedClip> = clips.iter().filter(|c| c.condition == dst).cloned().collect();
    if eval.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "{} has no {} clips to evaluate",
            protocol.label(),
            dst.label()
        )));
    }
    let model = Model::build(model_config.clone(), train_config.seed)?;
    let (model, log) = fit(model, train_config, &train, &[])?;
    let reports = evaluate_model(&model, &eval, &format!("{}:{}", protocol.label(), dst.label()))?;
    Ok(ProtocolOutcome { log, reports })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integrate_restores_frame_count() {
        assert_eq!(integrate(&[1.0, 2.0, -1.0]), vec![1.0, 1.0, 3.0, 2.0]);
    }

    #[test]
    fn config_validation() {
        let mut c = TrainConfig::default();
        c.alpha = 0.0;
        c.beta = 0.0;
        assert!(c.validate().unwrap_err().to_string().contains("alpha"));
        let c = TrainConfig {
            steps: 0,
            ..TrainConfig::default()
        };
        assert!(c.validate().unwrap_err().to_string().contains("steps"));
    }

    #[test]
    fn log_has_blank_mae_when_not_due() {
        let rows = [LogRow {
            step: 1,
            loss: 0.5,
            eval_mae: None,
        }];
        assert_eq!(log_csv(&rows), "step,loss,eval_mae\n1,0.5,\n");
    }
}
