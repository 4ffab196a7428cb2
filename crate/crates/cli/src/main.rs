use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use rppg_core::metrics::{render_table, write_rates_csv, MetricsReport};
use rppg_core::model::{check_model_gradients, checkpoint, Mode, Model, ModelConfig, Task, Variant};
use rppg_core::numerics::Tensor;
use rppg_core::pipeline::{rates_from_waveform, Band, RateOptions};
use rppg_core::synth::{load_clip, make_dataset, write_dataset, write_waveform_csv, ConditionMix, DatasetSpec};
use rppg_core::train::{
    clip_rates, evaluate_model, integrate, load_prepared, predict_clip, run, ClipPrediction, PreparedClip, RunConfig,
    TrainConfig,
};
use serde::{Deserialize, Serialize};
use serde_json::Value;

const AFTER_HELP: &str = "\
Configuration is JSON with sections `synth`, `model`, `train` and `eval`; any key
can be overridden with `--set section.key=value` (values parsed as JSON, else
taken as strings).

Environment:
  RPPG_THREADS  maximum evaluation threads (default 1)
  RUST_LOG      log filter (default info)

Exit codes: 0 success, 1 configuration error, 2 missing artifact, 3 numeric failure.";

#[derive(Parser, Debug)]
#[command(name = "rppg", version, about = "Camera-based heart and respiration rate estimation", after_help = AFTER_HELP)]
struct Cli {
    /// JSON configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override a configuration key, e.g. `--set train.steps=100`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a synthetic dataset.
    Synth(SynthArgs),
    /// Train a model on a dataset manifest.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset manifest.
    Eval(EvalArgs),
    /// Write waveforms and per-window rates for one clip.
    Infer(ClipArgs),
    /// Write the two spatial attention masks of one frame as CSV and PGM.
    AttentionDump(DumpArgs),
    /// Finite-difference check of a miniature model's gradients.
    GradCheck(GradArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Output dataset directory.
    #[arg(long)]
    out: PathBuf,
    /// Number of clips.
    #[arg(long)]
    n: Option<usize>,
    /// clean, natural or mixed.
    #[arg(long)]
    condition: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Training dataset manifest.
    #[arg(long)]
    data: PathBuf,
    /// Evaluation dataset manifest; defaults to the training manifest.
    #[arg(long)]
    eval_data: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// clean, natural or mixed; defaults to `train.eval_condition`.
    #[arg(long)]
    condition: Option<String>,
    /// Score the ground-truth waveforms instead of model outputs.
    #[arg(long)]
    oracle: bool,
}

#[derive(Args, Debug)]
struct ClipArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Clip directory (as written by `synth`).
    #[arg(long)]
    clip: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct DumpArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    clip: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Index of the T-frame chunk to run.
    #[arg(long, default_value_t = 0)]
    chunk: usize,
    /// Frame within the chunk to write.
    #[arg(long, default_value_t = 0)]
    frame: usize,
}

#[derive(Args, Debug)]
struct GradArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// can2d, tscan or tsdan.
    #[arg(long, default_value = "tsdan")]
    variant: String,
    /// hr, rr or multitask.
    #[arg(long, default_value = "multitask")]
    task: String,
    #[arg(long, default_value_t = 1e-3)]
    tol: f64,
}

/// Settings for the evaluation and inference commands.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
struct EvalConfig {
    rates: RateOptions,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
struct CliConfig {
    synth: DatasetSpec,
    model: ModelConfig,
    train: TrainConfig,
    eval: EvalConfig,
}

/// Error raised while assembling the configuration; maps to exit code 1.
#[derive(Debug)]
struct ConfigError(String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "configuration error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

fn config_err(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

fn load_config(path: Option<&Path>, overrides: &[String]) -> anyhow::Result<CliConfig> {
    let defaults = serde_json::to_value(CliConfig::default())?;
    let mut value = match path {
        Some(p) => {
            if !p.exists() {
                return Err(rppg_core::Error::Missing(p.to_path_buf()).into());
            }
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str::<Value>(&text).map_err(|e| config_err(format!("{}: {e}", p.display())))?
        }
        None => Value::Object(Default::default()),
    };
    for item in overrides {
        let (key, raw) = item
            .split_once('=')
            .ok_or_else(|| config_err(format!("override `{item}` is not KEY=VALUE")))?;
        let path: Vec<&str> = key.split('.').collect();
        let mut probe = &defaults;
        for part in &path {
            probe = probe
                .get(part)
                .ok_or_else(|| config_err(format!("unknown configuration key `{key}`")))?;
        }
        let parsed = serde_json::from_str::<Value>(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        let mut slot = &mut value;
        for part in &path {
            if !slot.is_object() {
                *slot = Value::Object(Default::default());
            }
            slot = slot
                .as_object_mut()
                .expect("object")
                .entry(part.to_string())
                .or_insert(Value::Null);
        }
        *slot = parsed;
    }
    let config: CliConfig = serde_json::from_value(value).map_err(|e| config_err(e.to_string()))?;
    config.model.validate()?;
    config.train.validate()?;
    Ok(config)
}

fn parse_mix(s: &str) -> anyhow::Result<ConditionMix> {
    Ok(s.parse::<ConditionMix>()?)
}

fn cmd_synth(cfg: &CliConfig, args: &SynthArgs) -> anyhow::Result<()> {
    let mut spec = cfg.synth.clone();
    if let Some(n) = args.n {
        spec.n_clips = n;
    }
    if let Some(c) = &args.condition {
        spec.condition = parse_mix(c)?;
    }
    if let Some(s) = args.seed {
        spec.seed = s;
    }
    let (clips, manifest) = make_dataset(&spec)?;
    let path = write_dataset(&args.out, &clips, &manifest)?;
    println!("{}", path.display());
    Ok(())
}

fn print_reports(reports: &[MetricsReport], out: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(out)?;
    fs::write(out.join("metrics.json"), serde_json::to_string_pretty(reports)?)?;
    let table = render_table(reports);
    fs::write(out.join("metrics.txt"), &table)?;
    print!("{table}");
    Ok(())
}

fn cmd_train(cfg: &CliConfig, args: &TrainArgs) -> anyhow::Result<()> {
    let run_cfg = RunConfig {
        model: cfg.model.clone(),
        train: cfg.train.clone(),
    };
    let artifacts = run(&run_cfg, &args.data, args.eval_data.as_deref(), &args.out)?;
    println!("checkpoint {}", artifacts.checkpoint.display());
    println!("log {}", artifacts.log.display());
    if !artifacts.reports.is_empty() {
        print_reports(&artifacts.reports, &args.out)?;
    }
    Ok(())
}

fn load_checkpoint(dir: &Path) -> anyhow::Result<Model> {
    let (model, _) = checkpoint::load(dir)?;
    Ok(model)
}

/// Predictions equal to the ground-truth derivative targets.
fn oracle_prediction(clip: &PreparedClip) -> ClipPrediction {
    let series = |t: &Option<Tensor<f32>>| t.as_ref().map(|t| t.data().iter().map(|&v| v as f64).collect());
    ClipPrediction {
        pulse: series(&clip.batch.pulse_gt),
        resp: series(&clip.batch.resp_gt),
    }
}

fn cmd_eval(cfg: &CliConfig, args: &EvalArgs) -> anyhow::Result<()> {
    let model = load_checkpoint(&args.checkpoint)?;
    let mix = match &args.condition {
        Some(c) => parse_mix(c)?,
        None => cfg.train.eval_condition,
    };
    let label = format!("{mix:?}").to_lowercase();
    let clips = load_prepared(&args.data, mix, model.config().input_hw)?;
    if clips.is_empty() {
        bail!(config_err(format!("no {label} clips in {}", args.data.display())));
    }
    let reports = if args.oracle {
        let mut reports = Vec::new();
        for band in [Band::Hr, Band::Rr] {
            let (mut est, mut truth) = (Vec::new(), Vec::new());
            for clip in &clips {
                let r = clip_rates(&oracle_prediction(clip), clip, band, &cfg.eval.rates)?;
                est.extend(r.estimates);
                truth.extend(r.truth_bpm);
            }
            reports.push(rppg_core::metrics::evaluate(&est, &truth, band, &label)?);
        }
        reports
    } else {
        evaluate_model(&model, &clips, &label)?
    };
    print_reports(&reports, &args.out)
}

fn cmd_infer(cfg: &CliConfig, args: &ClipArgs) -> anyhow::Result<()> {
    let model = load_checkpoint(&args.checkpoint)?;
    let clip = load_clip(&args.clip)?;
    let prepared = PreparedClip::new(&clip, model.config().input_hw, args.clip.display().to_string())?;
    let pred = predict_clip(&model, &prepared.batch)?;
    let fps = prepared.batch.fps;
    fs::create_dir_all(&args.out)?;
    for (band, series, name) in [(Band::Hr, &pred.pulse, "pulse"), (Band::Rr, &pred.resp, "resp")] {
        let Some(series) = series else { continue };
        let wave = integrate(series);
        let wave32: Vec<f32> = wave.iter().map(|&v| v as f32).collect();
        write_waveform_csv(&args.out.join(format!("{name}_waveform.csv")), &wave32, fps)?;
        let est = rates_from_waveform(&wave, fps, band, &cfg.eval.rates, None)?;
        write_rates_csv(&args.out.join(format!("rates_{}.csv", band.label())), &est)?;
        for e in &est {
            println!(
                "{} window {}: {:.1} bpm, SNR {:.2} dB",
                band.label(),
                e.window_index,
                e.bpm,
                e.snr_db
            );
        }
    }
    Ok(())
}

fn write_grid(path: &Path, grid: &[f32], w: usize) -> anyhow::Result<()> {
    let mut s = String::new();
    for row in grid.chunks(w) {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(s, "{}", line.join(","));
    }
    fs::write(path, s)?;
    Ok(())
}

/// Binary PGM, min-max scaled to 0..=255; a constant grid maps to 128.
fn write_pgm(path: &Path, grid: &[f32], w: usize, h: usize) -> anyhow::Result<()> {
    let (lo, hi) = grid.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
        (lo.min(v), hi.max(v))
    });
    let mut bytes = format!("P5\n{w} {h}\n255\n").into_bytes();
    bytes.extend(grid.iter().map(|&v| {
        if hi > lo {
            ((v - lo) / (hi - lo) * 255.0).round() as u8
        } else {
            128
        }
    }));
    fs::write(path, bytes)?;
    Ok(())
}

fn cmd_attention_dump(args: &DumpArgs) -> anyhow::Result<()> {
    let model = load_checkpoint(&args.checkpoint)?;
    let clip = load_clip(&args.clip)?;
    let prepared = PreparedClip::new(&clip, model.config().input_hw, args.clip.display().to_string())?;
    let t = model.config().frames_per_clip;
    let start = args.chunk * t;
    if start + t > prepared.batch.len() || args.frame >= t {
        bail!(config_err(format!(
            "chunk {} frame {} is outside a clip of {} maps",
            args.chunk,
            args.frame,
            prepared.batch.len()
        )));
    }
    let out = model.forward(
        &prepared.batch.motion.narrow_outer(start, t)?,
        &prepared.batch.appearance.narrow_outer(start, t)?,
        Mode::Infer,
    )?;
    fs::create_dir_all(&args.out)?;
    for (k, mask) in out.attention_maps.iter().enumerate() {
        let [frames, _, h, w] = mask.dims4();
        let target = (h * w) as f64 / 2.0;
        for f in 0..frames {
            let sum: f64 = mask.outer(f).iter().map(|&v| v as f64).sum();
            if (sum - target).abs() > 1e-3 * target {
                return Err(rppg_core::Error::Invariant(format!(
                    "mask {} frame {f} sums to {sum}, expected {target}",
                    k + 1
                ))
                .into());
            }
        }
        let grid = mask.outer(args.frame);
        write_grid(&args.out.join(format!("mask{}.csv", k + 1)), grid, w)?;
        write_pgm(&args.out.join(format!("mask{}.pgm", k + 1)), grid, w, h)?;
        println!("mask{}: {h}x{w}", k + 1);
    }
    Ok(())
}

fn cmd_grad_check(args: &GradArgs) -> anyhow::Result<()> {
    let variant: Variant = args.variant.parse()?;
    let task: Task = args.task.parse()?;
    let config = ModelConfig::miniature(variant, task);
    let report = check_model_gradients(&config, args.seed, 1e-5, args.tol)?;
    println!(
        "{}: {} gradients, max relative error {:.3e} (tolerance {:.1e})",
        config.label(),
        report.checked,
        report.max_rel_err,
        args.tol
    );
    if let Some(f) = report.failure {
        return Err(rppg_core::Error::NonFinite(f).into());
    }
    if !report.pass {
        return Err(rppg_core::Error::Invariant(format!("gradient check failed at {:?}", report.worst)).into());
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<ConfigError>().is_some() {
            return 1;
        }
        if let Some(e) = cause.downcast_ref::<rppg_core::Error>() {
            return match e {
                rppg_core::Error::Missing(_) => 2,
                rppg_core::Error::Io(io) if io.kind() == std::io::ErrorKind::NotFound => 2,
                rppg_core::Error::NonFinite(_) | rppg_core::Error::Invariant(_) => 3,
                _ => 1,
            };
        }
        if let Some(io) = cause.downcast_ref::<std::io::Error>() {
            if io.kind() == std::io::ErrorKind::NotFound {
                return 2;
            }
        }
    }
    1
}

fn dispatch(cli: &Cli) -> anyhow::Result<()> {
    let cfg = load_config(cli.config.as_deref(), &cli.overrides)?;
    match &cli.command {
        Command::Synth(a) => cmd_synth(&cfg, a),
        Command::Train(a) => cmd_train(&cfg, a),
        Command::Eval(a) => cmd_eval(&cfg, a),
        Command::Infer(a) => cmd_infer(&cfg, a),
        Command::AttentionDump(a) => cmd_attention_dump(a),
        Command::GradCheck(a) => cmd_grad_check(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
