use serde::{Deserialize, Serialize};

use crate::data::{DEFAULT_OFFSETS, POSE_CHANNELS};
use crate::error::{Error, Result};

/// Number of stride-2 stages in the pose encoder, and of upsampling blocks
/// in the generator: feature maps are 16x smaller than the image.
pub const DOWN_STAGES: usize = 4;

/// Residual blocks the generator runs at feature resolution.
pub const RES_BLOCKS: usize = 4;

/// Spatial grid the motion encoder pools to before its dense layers.
pub const MOTION_POOL: usize = 4;

/// Architecture of all five networks.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetConfig {
    pub width: usize,
    pub height: usize,
    /// Channel width at the finest resolution; doubles per halving.
    pub base_channels: usize,
    pub max_channels: usize,
    /// Finest-resolution width of the discriminator, on the same doubling
    /// schedule and cap.
    pub disc_base_channels: usize,
    /// Channels of the (refined) pose feature.
    pub pose_channels: usize,
    /// Length of the motion feature.
    pub motion_dim: usize,
    /// Past-frame offsets of the motion signature; empty disables the
    /// motion encoder and the refinement stage.
    pub motion_offsets: Vec<usize>,
    /// Run the refinement stage; when false the pose feature goes straight
    /// to the generator.
    pub refine: bool,
    pub minibatch_std: bool,
}

impl NetConfig {
    /// Full-size architecture: 512-channel pose feature, 2048-d motion feature.
    pub fn paper(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            base_channels: 64,
            max_channels: 512,
            disc_base_channels: 64,
            pose_channels: 512,
            motion_dim: 2048,
            motion_offsets: DEFAULT_OFFSETS.to_vec(),
            refine: true,
            minibatch_std: true,
        }
    }

    /// Small CPU-trainable architecture.
    pub fn tiny(width: usize, height: usize) -> Self {
        Self {
            base_channels: 32,
            max_channels: 32,
            disc_base_channels: 16,
            pose_channels: 64,
            motion_dim: 128,
            ..Self::paper(width, height)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = 1 << DOWN_STAGES;
        if self.width == 0 || self.height == 0 || self.width % unit != 0 || self.height % unit != 0 {
            return Err(Error::config(format!(
                "image size {}x{} must be positive multiples of {unit}",
                self.width, self.height
            )));
        }
        if self.base_channels == 0 || self.disc_base_channels == 0 || self.max_channels == 0 || self.pose_channels == 0 || self.motion_dim == 0 {
            return Err(Error::config("channel widths and feature sizes must be positive"));
        }
        if self.motion_offsets.iter().any(|&o| o == 0) || self.motion_offsets.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config(format!(
                "motion offsets must be strictly increasing positive integers, got {:?}",
                self.motion_offsets
            )));
        }
        Ok(())
    }

    pub fn uses_motion(&self) -> bool {
        !self.motion_offsets.is_empty()
    }

    pub fn uses_refine(&self) -> bool {
        self.refine && self.uses_motion()
    }

    pub fn motion_channels(&self) -> usize {
        POSE_CHANNELS * self.motion_offsets.len()
    }

    /// Feature-map size `(Hs, Ws)`.
    pub fn feature_size(&self) -> (usize, usize) {
        (self.height >> DOWN_STAGES, self.width >> DOWN_STAGES)
    }

    /// Width of a stage working `k` halvings below full resolution.
    pub fn channels_at(&self, k: usize) -> usize {
        self.base_channels.saturating_mul(1 << k.min(30)).min(self.max_channels)
    }

    /// Discriminator width `k` halvings below full resolution.
    pub fn disc_channels_at(&self, k: usize) -> usize {
        self.disc_base_channels.saturating_mul(1 << k.min(30)).min(self.max_channels)
    }

    /// Number of discriminator downsampling blocks: halve until the shorter
    /// side reaches 4 (or stops being even).
    pub fn disc_blocks(&self) -> usize {
        let mut n = 0;
        let (mut h, mut w) = (self.height, self.width);
        while h.min(w) > 4 && h % 2 == 0 && w % 2 == 0 {
            h /= 2;
            w /= 2;
            n += 1;
        }
        n
    }
}
