use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::synthesize::{synthesize_frames, MotionMode};
use super::trainer::train;
use crate::data::{window_preset, RasterStyle, SequenceDataset, SplitTag};
use crate::error::{Error, Result};
use crate::imaging::Image;
use crate::metrics::{mse, ssim_sequence};
use crate::nn::{ModelBundle, NoiseMode};

/// Synthesized and ground-truth frames of one split, noise off.
pub fn predict_split(
    bundle: &ModelBundle,
    seq: &SequenceDataset,
    tag: SplitTag,
    mode: MotionMode,
    cfg: &TrainConfig,
) -> Result<(Vec<Image>, Vec<Image>)> {
    if seq.split().is_none() {
        return Err(Error::config("split evaluation needs a tagged sequence"));
    }
    let frames = seq.indices(tag);
    if frames.is_empty() {
        return Err(Error::config(format!("the {tag:?} split is empty")));
    }
    let track = seq.pose_track(&RasterStyle::default())?;
    let generated = synthesize_frames(bundle, &track, &frames, mode, cfg.boundary, NoiseMode::Zero)?;
    let truth = frames.iter().map(|&i| seq.frame(i).image.clone()).collect();
    Ok((generated, truth))
}

/// Test-split scores of one motion-window length.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowResult {
    pub window: usize,
    pub offsets: Vec<usize>,
    pub mse: f64,
    pub ssim: f64,
}

/// Trains one model per window length from the same seed and budget and
/// scores forward synthesis on the test split. Window 0 drops the motion
/// encoder and the refinement stage.
pub fn ablate_windows(
    seq: &SequenceDataset,
    base: &TrainConfig,
    windows: &[usize],
    run_root: Option<&Path>,
) -> Result<Vec<WindowResult>> {
    let mut out = Vec::with_capacity(windows.len());
    for &window in windows {
        let cfg = TrainConfig {
            motion_offsets: window_preset(window)?,
            ..base.clone()
        };
        let mut bundle = ModelBundle::new(cfg.net_config(), cfg.seed)?;
        let dir = run_root.map(|r| r.join(format!("window_{window:02}")));
        train(&mut bundle, seq, &cfg, dir.as_deref())?;
        let (generated, truth) = predict_split(&bundle, seq, SplitTag::Test, MotionMode::Forward, &cfg)?;
        let r = WindowResult {
            window,
            offsets: cfg.motion_offsets.clone(),
            mse: mse(&generated, &truth)?,
            ssim: ssim_sequence(&generated, &truth)?,
        };
        log::info!("window {window}: mse {:.5} ssim {:.4}", r.mse, r.ssim);
        out.push(r);
    }
    Ok(out)
}
