//! Person-specific video animation from pose and motion signatures.
//!
//! A style-based generator is conditioned on a spatial pose feature and
//! demodulated by a motion feature learned from a window of past poses. The
//! same motion feature refines the per-frame pose feature, which suppresses
//! jitter and dropouts coming from single-frame pose estimators.
//!
//! Module map:
//! - [`data`]: keypoints, dense-UV maps, pose and motion signatures, datasets
//! - [`synthetic`]: procedural dancer with a spring-driven garment, plus pose corruption
//! - [`nn`]: pose/motion encoders, refinement, modulated generator, discriminator
//! - [`losses`]: L1, perceptual and adversarial terms
//! - [`training`]: split protocol, optimization loop, sequence synthesis
//! - [`retarget`]: skeleton alignment, nearest-neighbor baseline, motion speed
//! - [`metrics`]: MSE, SSIM, optical flow, tOF, slice plots, jitter score

pub mod data;
pub mod error;
pub mod imaging;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod retarget;
pub mod synthetic;
pub mod training;

pub use data::{
    BoundaryPolicy, DenseUVMap, FrameRecord, KeypointSet, MotionSignature, PoseSignature,
    RasterStyle, SequenceDataset, SplitTag, DEFAULT_OFFSETS,
};
pub use error::{Error, Result};
pub use imaging::Image;
pub use nn::{ModelBundle, MotionFeature, NetConfig, NoiseMode, PoseFeature};
pub use training::{MotionMode, TrainConfig};
