use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use super::archive::{read_archive, write_archive, Archive};
use super::config::NetConfig;
use super::networks::{
    Discriminator, Generator, MotionEncoder, NoiseMode, PoseEncoder, Refiner, DISC_NET, GEN_NET, MOTION_NET,
    POSE_NET, REFINE_NET,
};
use super::params::ParamStore;
use crate::data::{MotionSignature, PoseSignature};
use crate::error::{Error, Result};
use crate::imaging::{from_tensor, to_tensor, Image};

/// Spatial pose feature `(N, pose_channels, Hs, Ws)`.
#[derive(Clone, Debug)]
pub struct PoseFeature {
    pub data: Tensor,
}

/// Motion feature `(N, motion_dim)`.
#[derive(Clone, Debug)]
pub struct MotionFeature {
    pub data: Tensor,
}

#[derive(Serialize, Deserialize)]
struct BundleMeta {
    net: NetConfig,
    seed: u64,
}

fn check_finite(t: &Tensor, what: &str) -> Result<()> {
    let s = t.abs()?.sum_all()?.to_dtype(DType::F64)?.to_scalar::<f64>()?;
    if s.is_finite() {
        Ok(())
    } else {
        Err(Error::Numeric(format!("non-finite {what}")))
    }
}

/// Parameters and architecture of the pose encoder, motion encoder,
/// refiner, generator and discriminator.
#[derive(Debug)]
pub struct ModelBundle {
    config: NetConfig,
    seed: u64,
    params: ParamStore,
    pose_encoder: PoseEncoder,
    motion_encoder: Option<MotionEncoder>,
    refiner: Option<Refiner>,
    generator: Generator,
    discriminator: Discriminator,
    step: u64,
    motion_calls: AtomicUsize,
}

impl ModelBundle {
    /// Single-precision bundle on the CPU.
    pub fn new(config: NetConfig, seed: u64) -> Result<Self> {
        Self::with_dtype(config, seed, DType::F32)
    }

    pub fn with_dtype(config: NetConfig, seed: u64, dtype: DType) -> Result<Self> {
        config.validate()?;
        let mut ps = ParamStore::new(seed, dtype, Device::Cpu);
        let pose_encoder = PoseEncoder::new(&mut ps, &config)?;
        let motion_encoder = if config.uses_motion() {
            Some(MotionEncoder::new(&mut ps, &config)?)
        } else {
            None
        };
        let refiner = if config.uses_refine() {
            Some(Refiner::new(&mut ps, &config)?)
        } else {
            None
        };
        let generator = Generator::new(&mut ps, &config)?;
        let discriminator = Discriminator::new(&mut ps, &config)?;
        Ok(Self {
            config,
            seed,
            params: ps,
            pose_encoder,
            motion_encoder,
            refiner,
            generator,
            discriminator,
            step: 0,
            motion_calls: AtomicUsize::new(0),
        })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn dtype(&self) -> DType {
        self.params.dtype()
    }

    pub fn device(&self) -> &Device {
        self.params.device()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn set_step(&mut self, step: u64) {
        self.step = step;
    }

    /// Number of motion-encoder evaluations since construction.
    pub fn motion_encoder_calls(&self) -> usize {
        self.motion_calls.load(Ordering::Relaxed)
    }

    /// Independent copy with the same configuration and parameter values.
    pub fn duplicate(&self) -> Result<Self> {
        let mut out = Self::with_dtype(self.config.clone(), self.seed, self.dtype())?;
        for (name, v) in self.params.iter() {
            out.params.set(name, &v.as_tensor().copy()?)?;
        }
        out.step = self.step;
        Ok(out)
    }

    /// `(N, 6, H, W)` batch of pose signatures.
    pub fn pose_batch(&self, sigs: &[&PoseSignature]) -> Result<Tensor> {
        let imgs: Vec<&Image> = sigs.iter().map(|s| s.data()).collect();
        to_tensor(&imgs, self.dtype(), self.device())
    }

    /// `(N, 6K, H, W)` batch of motion signatures.
    pub fn motion_batch(&self, sigs: &[&MotionSignature]) -> Result<Tensor> {
        let imgs: Vec<&Image> = sigs.iter().map(|s| s.data()).collect();
        to_tensor(&imgs, self.dtype(), self.device())
    }

    pub fn encode_pose(&self, p: &Tensor) -> Result<PoseFeature> {
        Ok(PoseFeature {
            data: self.pose_encoder.forward(p)?,
        })
    }

    /// Encodes a motion signature batch; with an empty motion window the
    /// feature is all zeros.
    pub fn encode_motion(&self, m: &Tensor) -> Result<MotionFeature> {
        self.motion_calls.fetch_add(1, Ordering::Relaxed);
        let data = match &self.motion_encoder {
            Some(enc) => enc.forward(m)?,
            None => self.zero_motion(m.dim(0)?)?.data,
        };
        Ok(MotionFeature { data })
    }

    pub fn zero_motion(&self, n: usize) -> Result<MotionFeature> {
        Ok(MotionFeature {
            data: Tensor::zeros((n, self.config.motion_dim), self.dtype(), self.device())?,
        })
    }

    /// Pose feature concatenated with the tiled motion feature, as seen by
    /// the refiner.
    pub fn refine_concat(&self, p: &PoseFeature, m: &MotionFeature) -> Result<Tensor> {
        match &self.refiner {
            Some(r) => r.concat(&p.data, &m.data),
            None => Err(Error::config("this bundle has no refinement stage")),
        }
    }

    /// Refined pose feature; the identity when refinement is disabled.
    pub fn refine_pose(&self, p: &PoseFeature, m: &MotionFeature) -> Result<PoseFeature> {
        match &self.refiner {
            Some(r) => Ok(PoseFeature {
                data: r.forward(&p.data, &m.data)?,
            }),
            None => Ok(p.clone()),
        }
    }

    pub fn generate(&self, p: &PoseFeature, m: &MotionFeature, noise: NoiseMode) -> Result<Tensor> {
        let img = self.generator.forward(&p.data, &m.data, noise)?;
        check_finite(&img, "generator output")?;
        Ok(img)
    }

    /// Full generator path. The motion feature is computed once and used
    /// both for refinement and for modulating the generator.
    pub fn forward_pipeline(&self, p_sig: &Tensor, m_sig: &Tensor, noise: NoiseMode) -> Result<Tensor> {
        let p = self.encode_pose(p_sig)?;
        let m = self.encode_motion(m_sig)?;
        let p = self.refine_pose(&p, &m)?;
        self.generate(&p, &m, noise)
    }

    /// Realness logits `(N,)`.
    pub fn discriminate(&self, img: &Tensor) -> Result<Tensor> {
        self.discriminator.forward(img)
    }

    /// One image from one pose signature and its motion signature.
    pub fn synthesize_frame(&self, p: &PoseSignature, m: &MotionSignature, noise: NoiseMode) -> Result<Image> {
        let img = self.forward_pipeline(&self.pose_batch(&[p])?, &self.motion_batch(&[m])?, noise)?;
        Ok(from_tensor(&img)?.remove(0))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = BundleMeta {
            net: self.config.clone(),
            seed: self.seed,
        };
        let tensors = self
            .params
            .iter()
            .map(|(k, v)| (k.to_string(), v.as_tensor().clone()))
            .collect();
        write_archive(
            path,
            &Archive {
                config: serde_json::to_string_pretty(&meta)?,
                step: self.step,
                tensors,
            },
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        let arc = read_archive(path)?;
        let meta: BundleMeta = serde_json::from_str(&arc.config)?;
        let dtype = arc.tensors.first().map(|(_, t)| t.dtype()).unwrap_or(DType::F32);
        let mut b = Self::with_dtype(meta.net, meta.seed, dtype)?;
        if arc.tensors.len() != b.params.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {} tensors, architecture has {}",
                arc.tensors.len(),
                b.params.len()
            )));
        }
        for (name, t) in &arc.tensors {
            b.params.set(name, t)?;
        }
        b.step = arc.step;
        Ok(b)
    }
}

/// Network names used as parameter prefixes.
pub fn network_names() -> [&'static str; 5] {
    [POSE_NET, MOTION_NET, REFINE_NET, GEN_NET, DISC_NET]
}
