use candle_core::{DType, Device, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::config::{NetConfig, DOWN_STAGES, MOTION_POOL, RES_BLOCKS};
use super::layers::{adaptive_avgpool, avgpool2x, flatten, lrelu, upsample2x, EqConv, EqLinear};
use super::modconv::ModConv;
use super::params::{Init, ParamStore};
use crate::data::POSE_CHANNELS;
use crate::error::{Error, Result};

const INV_SQRT2: f64 = std::f64::consts::FRAC_1_SQRT_2;

pub(crate) const POSE_NET: &str = "pose_encoder";
pub(crate) const MOTION_NET: &str = "motion_encoder";
pub(crate) const REFINE_NET: &str = "refiner";
pub(crate) const GEN_NET: &str = "generator";
pub(crate) const DISC_NET: &str = "discriminator";

/// Generator-side networks, trained together.
pub const GENERATOR_SIDE: [&str; 4] = [POSE_NET, MOTION_NET, REFINE_NET, GEN_NET];
pub const DISCRIMINATOR_SIDE: [&str; 1] = [DISC_NET];

fn expect_dims(x: &Tensor, dims: &[usize], what: &str) -> Result<()> {
    let d = x.dims();
    if d.len() != dims.len() + 1 || &d[1..] != dims {
        return Err(Error::shape(format!("{what}: expected (N, {dims:?}), got {d:?}")));
    }
    Ok(())
}

/// Per-layer noise for the generator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    /// Gaussian noise drawn from a stream seeded by the value.
    Seeded(u64),
    /// No noise: the generator is a deterministic function of its inputs.
    Zero,
}

struct NoiseSource {
    mode: NoiseMode,
    layer: u64,
}

impl NoiseSource {
    fn next(&mut self, n: usize, h: usize, w: usize, dtype: DType, dev: &Device) -> Result<Option<Tensor>> {
        let layer = self.layer;
        self.layer += 1;
        let NoiseMode::Seeded(seed) = self.mode else {
            return Ok(None);
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (layer + 1).wrapping_mul(0xA24B_AED4_963E_E407));
        let v: Vec<f32> = (0..n * h * w).map(|_| StandardNormal.sample(&mut rng)).collect();
        Ok(Some(Tensor::from_vec(v, (n, 1, h, w), dev)?.to_dtype(dtype)?))
    }
}

/// Strided convolutional encoder from a pose signature to the pose feature.
#[derive(Clone, Debug)]
pub struct PoseEncoder {
    stages: Vec<(EqConv, EqConv)>,
    cfg: NetConfig,
}

impl PoseEncoder {
    pub fn new(ps: &mut ParamStore, cfg: &NetConfig) -> Result<Self> {
        let mut cin = POSE_CHANNELS;
        let mut stages = Vec::with_capacity(DOWN_STAGES);
        for k in 0..DOWN_STAGES {
            let cout = if k + 1 == DOWN_STAGES {
                cfg.pose_channels
            } else {
                cfg.channels_at(k)
            };
            let down = EqConv::new(ps, &format!("{POSE_NET}/stage{k}_down"), cin, cout, 3, 2, true)?;
            let conv = EqConv::new(ps, &format!("{POSE_NET}/stage{k}_conv"), cout, cout, 3, 1, true)?;
            stages.push((down, conv));
            cin = cout;
        }
        Ok(Self { stages, cfg: cfg.clone() })
    }

    /// `(N, 6, H, W)` to `(N, pose_channels, H/16, W/16)`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        expect_dims(x, &[POSE_CHANNELS, self.cfg.height, self.cfg.width], "pose signature")?;
        let mut h = x.clone();
        let last = self.stages.len() - 1;
        for (k, (down, conv)) in self.stages.iter().enumerate() {
            h = lrelu(&down.forward(&h)?)?;
            h = conv.forward(&h)?;
            if k != last {
                h = lrelu(&h)?;
            }
        }
        Ok(h)
    }
}

/// Strided convolutions, pooling and two dense layers from a motion
/// signature to the motion feature.
#[derive(Clone, Debug)]
pub struct MotionEncoder {
    convs: Vec<EqConv>,
    fc1: EqLinear,
    fc2: EqLinear,
    cfg: NetConfig,
}

impl MotionEncoder {
    pub fn new(ps: &mut ParamStore, cfg: &NetConfig) -> Result<Self> {
        let mut cin = cfg.motion_channels();
        let mut convs = Vec::with_capacity(DOWN_STAGES);
        for k in 0..DOWN_STAGES {
            let cout = cfg.channels_at(k);
            convs.push(EqConv::new(ps, &format!("{MOTION_NET}/conv{k}"), cin, cout, 3, 2, true)?);
            cin = cout;
        }
        let flat = cin * MOTION_POOL * MOTION_POOL;
        let fc1 = EqLinear::new(ps, &format!("{MOTION_NET}/fc1"), flat, cfg.motion_dim, 0.0)?;
        let fc2 = EqLinear::new(ps, &format!("{MOTION_NET}/fc2"), cfg.motion_dim, cfg.motion_dim, 0.0)?;
        Ok(Self {
            convs,
            fc1,
            fc2,
            cfg: cfg.clone(),
        })
    }

    /// `(N, 6K, H, W)` to `(N, motion_dim)`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        expect_dims(
            x,
            &[self.cfg.motion_channels(), self.cfg.height, self.cfg.width],
            "motion signature",
        )?;
        let mut h = x.clone();
        for c in &self.convs {
            h = lrelu(&c.forward(&h)?)?;
        }
        let h = flatten(&adaptive_avgpool(&h, MOTION_POOL, MOTION_POOL)?)?;
        let h = lrelu(&self.fc1.forward(&h)?)?;
        self.fc2.forward(&h)
    }
}

/// Refines the pose feature with the motion feature broadcast to every
/// spatial location.
#[derive(Clone, Debug)]
pub struct Refiner {
    conv1: EqConv,
    conv2: EqConv,
    cfg: NetConfig,
}

impl Refiner {
    pub fn new(ps: &mut ParamStore, cfg: &NetConfig) -> Result<Self> {
        let cin = cfg.pose_channels + cfg.motion_dim;
        Ok(Self {
            conv1: EqConv::new(ps, &format!("{REFINE_NET}/conv1"), cin, cfg.pose_channels, 3, 1, true)?,
            conv2: EqConv::new(
                ps,
                &format!("{REFINE_NET}/conv2"),
                cfg.pose_channels,
                cfg.pose_channels,
                3,
                1,
                true,
            )?,
            cfg: cfg.clone(),
        })
    }

    /// Channel concatenation of the pose feature and the tiled motion
    /// feature: `(N, pose_channels + motion_dim, Hs, Ws)`.
    pub fn concat(&self, p: &Tensor, m: &Tensor) -> Result<Tensor> {
        let (hs, ws) = self.cfg.feature_size();
        expect_dims(p, &[self.cfg.pose_channels, hs, ws], "pose feature")?;
        expect_dims(m, &[self.cfg.motion_dim], "motion feature")?;
        let n = p.dim(0)?;
        let tiled = m
            .reshape((n, self.cfg.motion_dim, 1, 1))?
            .broadcast_as((n, self.cfg.motion_dim, hs, ws))?;
        Ok(Tensor::cat(&[p, &tiled], 1)?)
    }

    pub fn forward(&self, p: &Tensor, m: &Tensor) -> Result<Tensor> {
        let x = self.concat(p, m)?;
        self.conv2.forward(&lrelu(&self.conv1.forward(&x)?)?)
    }
}

#[derive(Clone, Debug)]
struct StyledLayer {
    conv: ModConv,
    noise_strength: Tensor,
}

impl StyledLayer {
    fn new(ps: &mut ParamStore, name: &str, style: usize, cin: usize, cout: usize) -> Result<Self> {
        let conv = ModConv::new(ps, name, style, cin, cout, 3, true)?;
        let noise_strength = ps
            .get_or_init(&format!("{name}/noise_strength"), &[1], Init::Const(0.0))?
            .as_tensor()
            .clone();
        Ok(Self { conv, noise_strength })
    }

    fn forward(&self, x: &Tensor, m: &Tensor, noise: &mut NoiseSource) -> Result<Tensor> {
        let y = self.conv.conv(x, m)?;
        let (n, _, h, w) = y.dims4()?;
        let y = match noise.next(n, h, w, y.dtype(), y.device())? {
            Some(z) => y.broadcast_add(&z.broadcast_mul(&self.noise_strength.reshape((1, 1, 1, 1))?)?)?,
            None => y,
        };
        lrelu(&self.conv.add_bias(&y)?)
    }
}

#[derive(Clone, Debug)]
struct GenBlock {
    conv1: StyledLayer,
    conv2: StyledLayer,
    skip: Option<ModConv>,
    upsample: bool,
}

impl GenBlock {
    fn new(ps: &mut ParamStore, name: &str, style: usize, cin: usize, cout: usize, upsample: bool) -> Result<Self> {
        let skip = if cin != cout {
            Some(ModConv::new(ps, &format!("{name}/skip"), style, cin, cout, 1, true)?)
        } else {
            None
        };
        Ok(Self {
            conv1: StyledLayer::new(ps, &format!("{name}/conv1"), style, cin, cout)?,
            conv2: StyledLayer::new(ps, &format!("{name}/conv2"), style, cout, cout)?,
            skip,
            upsample,
        })
    }

    fn forward(&self, x: &Tensor, m: &Tensor, noise: &mut NoiseSource) -> Result<Tensor> {
        let x = if self.upsample { upsample2x(x)? } else { x.clone() };
        let y = self.conv2.forward(&self.conv1.forward(&x, m, noise)?, m, noise)?;
        let skip = match &self.skip {
            Some(s) => s.conv(&x, m)?,
            None => x,
        };
        Ok(((skip + y)? * INV_SQRT2)?)
    }
}

/// Style-based generator: residual blocks at feature resolution, then
/// upsampling residual blocks, all modulated by the motion feature.
#[derive(Clone, Debug)]
pub struct Generator {
    blocks: Vec<GenBlock>,
    to_rgb: ModConv,
    cfg: NetConfig,
}

impl Generator {
    pub fn new(ps: &mut ParamStore, cfg: &NetConfig) -> Result<Self> {
        let style = cfg.motion_dim;
        let mut blocks = Vec::with_capacity(RES_BLOCKS + DOWN_STAGES);
        let mut cin = cfg.pose_channels;
        let c0 = cfg.channels_at(DOWN_STAGES);
        for b in 0..RES_BLOCKS {
            blocks.push(GenBlock::new(ps, &format!("{GEN_NET}/res{b}"), style, cin, c0, false)?);
            cin = c0;
        }
        for u in 0..DOWN_STAGES {
            let cout = cfg.channels_at(DOWN_STAGES - 1 - u);
            blocks.push(GenBlock::new(ps, &format!("{GEN_NET}/up{u}"), style, cin, cout, true)?);
            cin = cout;
        }
        let to_rgb = ModConv::new(ps, &format!("{GEN_NET}/to_rgb"), style, cin, 3, 1, false)?;
        Ok(Self {
            blocks,
            to_rgb,
            cfg: cfg.clone(),
        })
    }

    /// `(N, pose_channels, Hs, Ws)` and `(N, motion_dim)` to `(N, 3, H, W)`
    /// in `[-1, 1]`.
    pub fn forward(&self, p: &Tensor, m: &Tensor, noise: NoiseMode) -> Result<Tensor> {
        let (hs, ws) = self.cfg.feature_size();
        expect_dims(p, &[self.cfg.pose_channels, hs, ws], "pose feature")?;
        expect_dims(m, &[self.cfg.motion_dim], "motion feature")?;
        if p.dim(0)? != m.dim(0)? {
            return Err(Error::shape("pose and motion batches differ"));
        }
        let mut src = NoiseSource { mode: noise, layer: 0 };
        let mut h = p.clone();
        for b in &self.blocks {
            h = b.forward(&h, m, &mut src)?;
        }
        Ok(self.to_rgb.forward(&h, m)?.tanh()?)
    }
}

#[derive(Clone, Debug)]
struct DiscBlock {
    conv1: EqConv,
    conv2: EqConv,
    skip: EqConv,
}

/// Residual discriminator producing one unconditional logit per image.
#[derive(Clone, Debug)]
pub struct Discriminator {
    from_rgb: EqConv,
    blocks: Vec<DiscBlock>,
    final_conv: EqConv,
    fc1: EqLinear,
    fc2: EqLinear,
    cfg: NetConfig,
}

/// Largest group size not above 4 that divides the batch.
fn mbstd_group(n: usize) -> usize {
    (1..=4.min(n)).rev().find(|g| n % g == 0).unwrap_or(1)
}

/// Appends the across-group standard deviation as an extra feature map.
fn minibatch_std(x: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    let g = mbstd_group(n);
    let y = x.reshape((g, n / g, c, h, w))?;
    let centered = y.broadcast_sub(&y.mean_keepdim(0)?)?;
    let std = (centered.sqr()?.mean(0)? + 1e-8)?.sqrt()?; // (n/g, c, h, w)
    let s = std.flatten_from(1)?.mean_keepdim(1)?; // (n/g, 1)
    let s = s
        .reshape((1, n / g, 1, 1, 1))?
        .broadcast_as((g, n / g, 1, h, w))?
        .reshape((n, 1, h, w))?;
    Ok(Tensor::cat(&[x, &s], 1)?)
}

impl Discriminator {
    pub fn new(ps: &mut ParamStore, cfg: &NetConfig) -> Result<Self> {
        let c0 = cfg.disc_channels_at(0);
        let from_rgb = EqConv::new(ps, &format!("{DISC_NET}/from_rgb"), 3, c0, 1, 1, true)?;
        let mut blocks = Vec::new();
        let mut cin = c0;
        for k in 0..cfg.disc_blocks() {
            let cout = cfg.disc_channels_at(k + 1);
            let name = format!("{DISC_NET}/block{k}");
            blocks.push(DiscBlock {
                conv1: EqConv::new(ps, &format!("{name}/conv1"), cin, cin, 3, 1, true)?,
                conv2: EqConv::new(ps, &format!("{name}/conv2"), cin, cout, 3, 1, true)?,
                skip: EqConv::new(ps, &format!("{name}/skip"), cin, cout, 1, 1, false)?,
            });
            cin = cout;
        }
        let extra = usize::from(cfg.minibatch_std);
        let final_conv = EqConv::new(ps, &format!("{DISC_NET}/final_conv"), cin + extra, cin, 3, 1, true)?;
        let n = cfg.disc_blocks();
        let (fh, fw) = (cfg.height >> n, cfg.width >> n);
        let fc1 = EqLinear::new(ps, &format!("{DISC_NET}/fc1"), cin * fh * fw, cin, 0.0)?;
        let fc2 = EqLinear::new(ps, &format!("{DISC_NET}/fc2"), cin, 1, 0.0)?;
        Ok(Self {
            from_rgb,
            blocks,
            final_conv,
            fc1,
            fc2,
            cfg: cfg.clone(),
        })
    }

    /// `(N, 3, H, W)` to `(N,)` logits.
    pub fn forward(&self, img: &Tensor) -> Result<Tensor> {
        expect_dims(img, &[3, self.cfg.height, self.cfg.width], "image")?;
        let mut h = lrelu(&self.from_rgb.forward(img)?)?;
        for b in &self.blocks {
            let y = lrelu(&b.conv1.forward(&h)?)?;
            let y = avgpool2x(&lrelu(&b.conv2.forward(&y)?)?)?;
            let s = b.skip.forward(&avgpool2x(&h)?)?;
            h = ((s + y)? * INV_SQRT2)?;
        }
        if self.cfg.minibatch_std {
            h = minibatch_std(&h)?;
        }
        let h = lrelu(&self.final_conv.forward(&h)?)?;
        let h = lrelu(&self.fc1.forward(&flatten(&h)?)?)?;
        Ok(self.fc2.forward(&h)?.squeeze(1)?)
    }
}
