//! Pose encoder, motion encoder, refiner, modulated generator and
//! discriminator, their shared layers and the checkpoint container.

mod archive;
mod bundle;
mod config;
mod layers;
mod modconv;
mod networks;
mod params;

pub use archive::{read_archive, write_archive, Archive, MAGIC};
pub use bundle::{network_names, ModelBundle, MotionFeature, PoseFeature};
pub use config::{NetConfig, DOWN_STAGES, MOTION_POOL, RES_BLOCKS};
pub use layers::{adaptive_avgpool, avgpool2x, conv2d, lrelu, upsample2x, EqConv, EqLinear};
pub use modconv::{effective_weights, modulated_conv, ModConv, DEMOD_EPS};
pub use networks::{
    Discriminator, Generator, MotionEncoder, NoiseMode, PoseEncoder, Refiner, DISCRIMINATOR_SIDE, GENERATOR_SIDE,
};
pub use params::{Init, ParamStore};
pub use candle_core::DType;
