use serde::{Deserialize, Serialize};

use crate::data::{motion_window, BoundaryPolicy, PoseSignature};
use crate::error::{Error, Result};
use crate::imaging::{from_tensor, to_tensor, Image};
use crate::nn::{ModelBundle, NoiseMode};

/// How the motion signature of each synthesized frame is formed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotionMode {
    /// True past poses.
    #[default]
    Forward,
    /// The current pose repeated in every block.
    Frozen,
    /// Future poses in reverse order.
    Backward,
}

impl std::str::FromStr for MotionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "forward" => Ok(Self::Forward),
            "frozen" => Ok(Self::Frozen),
            "backward" => Ok(Self::Backward),
            other => Err(Error::config(format!("unknown motion mode '{other}'"))),
        }
    }
}

const SYNTH_BATCH: usize = 8;

/// Synthesizes the listed frames of a pose track.
pub fn synthesize_frames(
    bundle: &ModelBundle,
    poses: &[PoseSignature],
    frames: &[usize],
    mode: MotionMode,
    boundary: BoundaryPolicy,
    noise: NoiseMode,
) -> Result<Vec<Image>> {
    let offsets = &bundle.config().motion_offsets;
    let dev = bundle.device().clone();
    let mut out = Vec::with_capacity(frames.len());
    for chunk in frames.chunks(SYNTH_BATCH) {
        let mut psig = Vec::with_capacity(chunk.len());
        let mut msig = Vec::with_capacity(chunk.len());
        for &i in chunk {
            if i >= poses.len() {
                return Err(Error::Index { index: i, len: poses.len() });
            }
            psig.push(poses[i].data());
            if offsets.is_empty() {
                continue;
            }
            let window = match mode {
                MotionMode::Forward => motion_window(i, offsets, poses.len(), boundary, false)?,
                MotionMode::Backward => motion_window(i, offsets, poses.len(), boundary, true)?,
                MotionMode::Frozen => vec![i; offsets.len()],
            };
            msig.extend(window.into_iter().map(|j| poses[j].data()));
        }
        let p = to_tensor(&psig, bundle.dtype(), &dev)?;
        let m = if offsets.is_empty() {
            candle_core::Tensor::zeros((chunk.len(), 1, 1, 1), bundle.dtype(), &dev)?
        } else {
            let (_, _, h, w) = p.dims4()?;
            to_tensor(&msig, bundle.dtype(), &dev)?.reshape((chunk.len(), 6 * offsets.len(), h, w))?
        };
        let img = bundle.forward_pipeline(&p, &m, noise)?;
        out.extend(from_tensor(&img)?);
    }
    Ok(out)
}

/// One output image per input pose signature.
pub fn synthesize_sequence(
    bundle: &ModelBundle,
    poses: &[PoseSignature],
    mode: MotionMode,
    boundary: BoundaryPolicy,
    noise: NoiseMode,
) -> Result<Vec<Image>> {
    let all: Vec<usize> = (0..poses.len()).collect();
    synthesize_frames(bundle, poses, &all, mode, boundary, noise)
}
