use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::figure::FigureSpec;
use super::render::render_body_uv;
use crate::data::{body, Keypoint, KeypointSet, SequenceDataset};
use crate::error::{Error, Result};

/// Pose-estimator failure model: jitter, dropped joints, left/right swaps.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CorruptionConfig {
    /// Standard deviation of per-coordinate Gaussian jitter, pixels.
    pub jitter_sigma: f64,
    /// Probability that a joint is dropped in a frame.
    pub dropout_prob: f64,
    /// Probability that a frame mislabels one limb's left and right.
    pub swap_prob: f64,
    pub seed: u64,
}

impl CorruptionConfig {
    pub fn validate(&self) -> Result<()> {
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        if !(self.jitter_sigma >= 0.0) || !prob(self.dropout_prob) || !prob(self.swap_prob) {
            return Err(Error::config(format!("invalid corruption config {self:?}")));
        }
        Ok(())
    }
}

fn corrupt_points(points: &mut [Keypoint], cfg: &CorruptionConfig, jitter: &Normal<f64>, rng: &mut ChaCha8Rng) {
    for k in points.iter_mut().filter(|k| k.is_visible()) {
        if cfg.jitter_sigma > 0.0 {
            k.x += jitter.sample(rng);
            k.y += jitter.sample(rng);
        }
        if cfg.dropout_prob > 0.0 && rng.random::<f64>() < cfg.dropout_prob {
            k.confidence = 0.0;
        }
    }
}

fn swap_limb(kp: &mut KeypointSet, limb: usize) {
    for (r, l) in body::LIMB_PAIRS[limb] {
        if let (Some(i), Some(j)) = (kp.index_of(r), kp.index_of(l)) {
            let (a, b) = (kp.joints[i].clone(), kp.joints[j].clone());
            kp.joints[i] = Keypoint { name: a.name, ..b };
            kp.joints[j] = Keypoint { name: b.name, ..a };
        }
    }
}

/// Corrupts keypoints only; images and dense-UV maps are left untouched.
pub fn corrupt_poses(seq: &SequenceDataset, cfg: &CorruptionConfig) -> Result<SequenceDataset> {
    cfg.validate()?;
    let mut out = seq.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let jitter = Normal::new(0.0, cfg.jitter_sigma).map_err(|e| Error::config(e.to_string()))?;
    for f in out.frames_mut() {
        let kp = &mut f.keypoints;
        if cfg.swap_prob > 0.0 && rng.random::<f64>() < cfg.swap_prob {
            let limb = rng.random_range(0..body::LIMB_PAIRS.len());
            swap_limb(kp, limb);
        }
        corrupt_points(&mut kp.joints, cfg, &jitter, &mut rng);
        corrupt_points(&mut kp.face, cfg, &jitter, &mut rng);
        corrupt_points(&mut kp.hands, cfg, &jitter, &mut rng);
    }
    Ok(out)
}

/// [`corrupt_poses`] followed by redrawing each dense-UV map from the
/// corrupted keypoints, so both pose channels carry the same errors.
pub fn corrupt_pose_inputs(
    seq: &SequenceDataset,
    cfg: &CorruptionConfig,
    figure: &FigureSpec,
) -> Result<SequenceDataset> {
    let mut out = corrupt_poses(seq, cfg)?;
    let (w, h) = (out.width(), out.height());
    for f in out.frames_mut() {
        f.uv = render_body_uv(figure, &f.keypoints, w, h)?;
    }
    Ok(out)
}
