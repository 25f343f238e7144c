use std::path::{Path, PathBuf};

use clap::Args;
use serde::Serialize;

use dynamo_core::data::{load_dataset, save_dataset, validate_dataset_dir, SplitTag, WINDOW_PRESETS};
use dynamo_core::imaging::write_png_unit;
use dynamo_core::losses::PerceptualExtractor;
use dynamo_core::nn::DType;
use dynamo_core::metrics::{self, estimate_flow, slice_plot};
use dynamo_core::retarget::{align_dataset, motion_speed, nearest_neighbor_baseline, SkeletonStats};
use dynamo_core::synthetic::{corrupt_pose_inputs, render_sequence, CorruptionConfig, FigureSpec, MotionScript, ScriptParams};
use dynamo_core::training::{ablate_windows, split_dataset, synthesize_frames, train as run_training, MIN_SPLIT_FRAMES};
use dynamo_core::{Error, ModelBundle, MotionMode, NoiseMode, RasterStyle, Result, SequenceDataset, TrainConfig};

use crate::io::{read_frames, read_mask, write_frames, write_json};
use crate::Common;

/// Preset, then the config file, then `--seed`.
fn load_config(c: &Common) -> Result<TrainConfig> {
    let base = TrainConfig::preset(&c.preset)?;
    let mut cfg = match &c.config {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Error::config(format!("cannot read {}: {e}", p.display())))?;
            TrainConfig::from_json_over(&base, &text)?
        }
        None => base,
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Prints the configuration when asked; returns true if the command should stop.
fn print_config(c: &Common, cfg: &TrainConfig) -> Result<bool> {
    if c.print_config {
        println!("{}", serde_json::to_string_pretty(cfg)?);
    }
    Ok(c.print_config)
}

fn out_dir(c: &Common) -> Result<PathBuf> {
    let dir = c
        .out
        .clone()
        .ok_or_else(|| Error::config("this command needs --out <dir>"))?;
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

/// Loads a dataset and applies the split protocol when it is long enough.
fn load_tagged(dir: &Path) -> Result<SequenceDataset> {
    let seq = load_dataset(dir)?;
    if seq.len() >= MIN_SPLIT_FRAMES {
        split_dataset(&seq)
    } else {
        Ok(seq)
    }
}

/// With `DYNAMO_CACHE` set and no explicit perceptual weights, the seeded
/// extractor is stored in (and later read from) the cache directory.
fn resolve_perceptual(cfg: &mut TrainConfig) -> Result<()> {
    if cfg.perceptual_weights.is_some() || cfg.vgg_weight == 0.0 {
        return Ok(());
    }
    let Some(cache) = std::env::var_os("DYNAMO_CACHE") else {
        return Ok(());
    };
    let path = PathBuf::from(cache).join(format!("perceptual-seed{}.ckpt", cfg.perceptual_seed));
    if !path.exists() {
        std::fs::create_dir_all(path.parent().expect("joined path has a parent"))?;
        PerceptualExtractor::random(cfg.perceptual_seed, DType::F32)?.export(&path)?;
    }
    cfg.perceptual_weights = Some(path.to_string_lossy().into_owned());
    Ok(())
}


fn parse_noise(s: &str) -> Result<NoiseMode> {
    match s {
        "zero" => Ok(NoiseMode::Zero),
        other => other
            .strip_prefix("seeded:")
            .and_then(|v| v.parse().ok())
            .map(NoiseMode::Seeded)
            .ok_or_else(|| Error::config(format!("noise must be 'zero' or 'seeded:<int>', got '{other}'"))),
    }
}

#[derive(Args, Debug)]
pub struct SynthData {
    #[arg(long, default_value_t = 200)]
    pub frames: usize,
    /// Keypoint jitter in pixels applied to the stored poses.
    #[arg(long, default_value_t = 0.0)]
    pub jitter: f64,
    /// Per-joint dropout probability applied to the stored poses.
    #[arg(long, default_value_t = 0.0)]
    pub dropout: f64,
}

pub fn synth_data(c: &Common, a: &SynthData) -> Result<()> {
    let cfg = load_config(c)?;
    if print_config(c, &cfg)? {
        return Ok(());
    }
    let out = out_dir(c)?;
    let figure = FigureSpec::default();
    let params = ScriptParams {
        frames: a.frames,
        seed: cfg.seed,
        ..ScriptParams::default()
    };
    let script = MotionScript::generate(&figure, &params)?;
    let mut seq = render_sequence(&figure, &script, cfg.width, cfg.height)?;
    if a.jitter > 0.0 || a.dropout > 0.0 {
        let corruption = CorruptionConfig {
            jitter_sigma: a.jitter,
            dropout_prob: a.dropout,
            seed: cfg.seed,
            ..CorruptionConfig::default()
        };
        seq = corrupt_pose_inputs(&seq, &corruption, &figure)?;
    }
    save_dataset(&seq, &out)?;
    write_json(&out.join("script.json"), &script)?;
    log::info!("wrote {} frames to {}", seq.len(), out.display());
    Ok(())
}

#[derive(Args, Debug)]
pub struct Prepare {
    /// Dataset directory to validate.
    #[arg(long)]
    pub data: PathBuf,
}

#[derive(Serialize)]
struct PrepareReport {
    frames: usize,
    width: usize,
    height: usize,
    fps: u32,
    train: usize,
    gap: usize,
    test: usize,
    motion_speed: Option<f64>,
}

pub fn prepare(c: &Common, a: &Prepare) -> Result<()> {
    let issues = validate_dataset_dir(&a.data);
    if !issues.is_empty() {
        for line in &issues {
            eprintln!("{line}");
        }
        return Err(Error::Dataset {
            path: a.data.clone(),
            message: format!("{} schema violation(s)", issues.len()),
        });
    }
    let seq = load_tagged(&a.data)?;
    let split = seq.split();
    let report = PrepareReport {
        frames: seq.len(),
        width: seq.width(),
        height: seq.height(),
        fps: seq.fps(),
        train: split.map_or(seq.len(), |s| s.train),
        gap: split.map_or(0, |s| s.gap),
        test: split.map_or(0, |s| s.test),
        motion_speed: motion_speed(&seq).ok(),
    };
    println!("{}", serde_json::to_string_pretty(&report)?);
    if let Some(out) = &c.out {
        save_dataset(&seq, out)?;
        write_json(&out.join("split.json"), &report)?;
    }
    Ok(())
}

#[derive(Args, Debug)]
pub struct Train {
    #[arg(long)]
    pub data: PathBuf,
    /// Overrides the configured iteration count.
    #[arg(long)]
    pub iterations: Option<usize>,
}

pub fn train(c: &Common, a: &Train) -> Result<()> {
    let mut cfg = load_config(c)?;
    if let Some(n) = a.iterations {
        cfg.iterations = n;
    }
    if print_config(c, &cfg)? {
        return Ok(());
    }
    let out = out_dir(c)?;
    resolve_perceptual(&mut cfg)?;
    let seq = load_tagged(&a.data)?;
    let mut bundle = ModelBundle::new(cfg.net_config(), cfg.seed)?;
    let report = run_training(&mut bundle, &seq, &cfg, Some(&out))?;
    if let Some(last) = report.log.last() {
        log::info!("finished at iteration {} with l1 {:.4}", last.iter + 1, last.l1);
    }
    Ok(())
}

#[derive(Args, Debug)]
pub struct Synthesize {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// forward, frozen or backward.
    #[arg(long, default_value = "forward")]
    pub mode: String,
    /// zero or seeded:<int>.
    #[arg(long, default_value = "zero")]
    pub noise: String,
    /// Only synthesize the test split.
    #[arg(long)]
    pub test_only: bool,
}

pub fn synthesize(c: &Common, a: &Synthesize) -> Result<()> {
    let mode: MotionMode = a.mode.parse()?;
    let noise = parse_noise(&a.noise)?;
    let cfg = load_config(c)?;
    if print_config(c, &cfg)? {
        return Ok(());
    }
    let out = out_dir(c)?;
    let bundle = ModelBundle::load(&a.checkpoint)?;
    let seq = load_tagged(&a.data)?;
    let frames: Vec<usize> = if a.test_only {
        seq.indices(SplitTag::Test)
    } else {
        (0..seq.len()).collect()
    };
    let track = seq.pose_track(&RasterStyle::default())?;
    let images = synthesize_frames(&bundle, &track, &frames, mode, cfg.boundary, noise)?;
    std::fs::create_dir_all(out.join("frames"))?;
    for (&i, img) in frames.iter().zip(&images) {
        dynamo_core::imaging::write_png_signed(&out.join("frames").join(format!("{i:06}.png")), img)?;
    }
    Ok(())
}

#[derive(Args, Debug)]
pub struct Retarget {
    /// Dataset with the source actor's poses.
    #[arg(long)]
    pub source: PathBuf,
    /// The target actor's training dataset (skeleton statistics).
    #[arg(long)]
    pub target: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Align every frame separately instead of one transform per sequence.
    #[arg(long)]
    pub per_frame: bool,
    #[arg(long, default_value = "forward")]
    pub mode: String,
}

pub fn retarget(c: &Common, a: &Retarget) -> Result<()> {
    let mode: MotionMode = a.mode.parse()?;
    let cfg = load_config(c)?;
    if print_config(c, &cfg)? {
        return Ok(());
    }
    let out = out_dir(c)?;
    let bundle = ModelBundle::load(&a.checkpoint)?;
    let target = load_tagged(&a.target)?;
    let stats = SkeletonStats::from_dataset(&target)?;
    let source = load_dataset(&a.source)?;
    let (aligned, info) = align_dataset(&source, &stats, stats.ground_y, a.per_frame)?;
    let track = aligned.pose_track(&RasterStyle::default())?;
    let all: Vec<usize> = (0..track.len()).collect();
    let images = synthesize_frames(&bundle, &track, &all, mode, cfg.boundary, NoiseMode::Zero)?;
    write_frames(&out.join("frames"), &images, 0)?;
    let kp_dir = out.join("keypoints");
    std::fs::create_dir_all(&kp_dir)?;
    for (i, al) in info.iter().enumerate() {
        al.keypoints.write(&kp_dir.join(format!("{i:06}.json")))?;
    }
    let fallback = info.iter().filter(|a| a.height_only).count();
    if fallback > 0 {
        log::warn!("{fallback} frame(s) lacked ankles and were aligned by height only");
    }
    Ok(())
}

#[derive(Args, Debug)]
pub struct Evaluate {
    /// Directory of generated frames (or a dataset directory).
    #[arg(long)]
    pub generated: PathBuf,
    /// Directory of ground-truth frames (or a dataset directory).
    #[arg(long)]
    pub truth: PathBuf,
    /// PNG mask of the region scored by the jitter measure.
    #[arg(long)]
    pub mask: Option<PathBuf>,
    /// Also write slice plots through this pixel row and column.
    #[arg(long, num_args = 2, value_names = ["ROW", "COL"])]
    pub slice: Option<Vec<usize>>,
    /// Also write a colour-coded flow map per generated frame pair.
    #[arg(long)]
    pub flow_maps: bool,
}

pub fn evaluate(c: &Common, a: &Evaluate) -> Result<()> {
    let out = out_dir(c)?;
    let generated = read_frames(&a.generated)?;
    let truth = read_frames(&a.truth)?;
    let mask = a.mask.as_deref().map(read_mask).transpose()?;
    let m = metrics::evaluate(&generated, &truth, mask.as_ref())?;
    write_json(&out.join("metrics.json"), &m)?;
    println!("{}", serde_json::to_string(&m)?);
    if let Some(rc) = &a.slice {
        let span = generated.len().min(100);
        for (name, seq) in [("generated", &generated), ("truth", &truth)] {
            let (v, h) = slice_plot(seq, rc[0], rc[1], span)?;
            write_png_unit(&out.join(format!("slice_{name}_vertical.png")), &dynamo_core::imaging::denormalize(&v))?;
            write_png_unit(&out.join(format!("slice_{name}_horizontal.png")), &dynamo_core::imaging::denormalize(&h))?;
        }
    }
    if a.flow_maps {
        let dir = out.join("flow");
        std::fs::create_dir_all(&dir)?;
        for (i, w) in generated.windows(2).enumerate() {
            let f = estimate_flow(&w[0], &w[1])?;
            write_png_unit(&dir.join(format!("{i:06}.png")), &f.to_color(None))?;
        }
    }
    Ok(())
}

#[derive(Args, Debug)]
pub struct AblateWindow {
    #[arg(long)]
    pub data: PathBuf,
    /// Window lengths to compare, in frames.
    #[arg(long, value_delimiter = ',', default_values_t = WINDOW_PRESETS)]
    pub windows: Vec<usize>,
    #[arg(long)]
    pub iterations: Option<usize>,
}

pub fn ablate_window(c: &Common, a: &AblateWindow) -> Result<()> {
    let mut cfg = load_config(c)?;
    if let Some(n) = a.iterations {
        cfg.iterations = n;
    }
    if print_config(c, &cfg)? {
        return Ok(());
    }
    let out = out_dir(c)?;
    resolve_perceptual(&mut cfg)?;
    let seq = split_dataset(&load_dataset(&a.data)?)?;
    let results = ablate_windows(&seq, &cfg, &a.windows, Some(&out))?;
    write_json(&out.join("ablation.json"), &results)?;
    println!("window  mse       ssim");
    for r in &results {
        println!("{:>6}  {:.6}  {:.5}", r.window, r.mse, r.ssim);
    }
    Ok(())
}

#[derive(Args, Debug)]
pub struct BaselineNn {
    /// Training dataset searched for neighbours.
    #[arg(long)]
    pub data: PathBuf,
    /// Query dataset; defaults to the test split of `--data`.
    #[arg(long)]
    pub query: Option<PathBuf>,
}

#[derive(Serialize)]
struct NeighbourReport {
    matches: Vec<(usize, usize)>,
    metrics: Option<metrics::Metrics>,
}

pub fn baseline_nn(c: &Common, a: &BaselineNn) -> Result<()> {
    let out = out_dir(c)?;
    let train = load_tagged(&a.data)?;
    let (query, frames) = match &a.query {
        Some(q) => {
            let seq = load_dataset(q)?;
            let all = (0..seq.len()).collect();
            (seq, all)
        }
        None => {
            let frames = train.indices(SplitTag::Test);
            if frames.is_empty() {
                return Err(Error::config("dataset has no test split; pass --query"));
            }
            (train.clone(), frames)
        }
    };
    let mut matches = Vec::with_capacity(frames.len());
    let mut images = Vec::with_capacity(frames.len());
    for &i in &frames {
        let j = nearest_neighbor_baseline(&query.frame(i).keypoints, &train)?;
        matches.push((i, j));
        images.push(train.frame(j).image.clone());
    }
    write_frames(&out.join("frames"), &images, 0)?;
    let truth: Vec<_> = frames.iter().map(|&i| query.frame(i).image.clone()).collect();
    let scored = if truth.len() >= 2 && truth[0].dim() == images[0].dim() {
        Some(metrics::evaluate(&images, &truth, None)?)
    } else {
        None
    };
    write_json(
        &out.join("nn.json"),
        &NeighbourReport {
            matches,
            metrics: scored,
        },
    )?;
    Ok(())
}
