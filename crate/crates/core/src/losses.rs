//! Reconstruction, perceptual and adversarial objectives.

use std::path::Path;

use candle_core::{DType, Device, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{conv2d, read_archive, write_archive, Archive, Init, ModelBundle, ParamStore};

fn same_shape(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::shape(format!("loss inputs {:?} and {:?} differ", a.dims(), b.dims())));
    }
    Ok(())
}

/// Mean absolute difference over every element.
pub fn l1_loss(generated: &Tensor, target: &Tensor) -> Result<Tensor> {
    same_shape(generated, target)?;
    Ok((generated - target)?.abs()?.mean_all()?)
}

/// Mean squared difference over every element.
pub fn mse_loss(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape(a, b)?;
    Ok((a - b)?.sqr()?.mean_all()?)
}

/// `ln(1 + e^x)` evaluated without overflow.
pub fn softplus(x: &Tensor) -> Result<Tensor> {
    let tail = (x.abs()?.neg()?.exp()? + 1.0)?.log()?;
    Ok((x.relu()? + tail)?)
}

fn check_finite(t: &Tensor, what: &str) -> Result<()> {
    let s = t.abs()?.sum_all()?.to_dtype(DType::F64)?.to_scalar::<f64>()?;
    if s.is_finite() {
        Ok(())
    } else {
        Err(Error::Numeric(format!("non-finite {what}")))
    }
}

/// Non-saturating logistic losses, averaged over the batch:
/// generator `softplus(-d_fake)`, discriminator
/// `softplus(-d_real) + softplus(d_fake)`.
pub fn gan_losses(d_real: &Tensor, d_fake: &Tensor) -> Result<(Tensor, Tensor)> {
    check_finite(d_real, "real logits")?;
    check_finite(d_fake, "fake logits")?;
    let g = softplus(&d_fake.neg()?)?.mean_all()?;
    let d = (softplus(&d_real.neg()?)?.mean_all()? + softplus(d_fake)?.mean_all()?)?;
    Ok((g, d))
}

/// Generator-side term alone.
pub fn generator_gan_loss(d_fake: &Tensor) -> Result<Tensor> {
    check_finite(d_fake, "fake logits")?;
    Ok(softplus(&d_fake.neg()?)?.mean_all()?)
}

/// Relative weights of the three objective terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub l1: f64,
    pub vgg: f64,
    pub gan: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            l1: 1.0,
            vgg: 1.0,
            gan: 1.0,
        }
    }
}

impl LossWeights {
    /// Weighted sum of `(l1, vgg, gan)` values.
    pub fn total(&self, parts: (f64, f64, f64)) -> f64 {
        self.l1 * parts.0 + self.vgg * parts.1 + self.gan * parts.2
    }

    /// Weighted sum of loss tensors; zero-weighted terms may be omitted.
    pub fn total_tensor(&self, l1: Option<&Tensor>, vgg: Option<&Tensor>, gan: Option<&Tensor>) -> Result<Tensor> {
        let mut acc: Option<Tensor> = None;
        for (w, t) in [(self.l1, l1), (self.vgg, vgg), (self.gan, gan)] {
            if let Some(t) = t {
                let term = (t * w)?;
                acc = Some(match acc {
                    Some(a) => (a + term)?,
                    None => term,
                });
            }
        }
        acc.ok_or_else(|| Error::config("objective has no terms"))
    }
}

/// Where the perceptual features come from.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractorSource {
    /// Fixed random filters drawn from a seed.
    Random { seed: u64 },
    /// Filters read from an archive file.
    Imported { path: String },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct ExtractorMeta {
    strides: Vec<usize>,
    layers: Vec<usize>,
}

#[derive(Clone, Debug)]
struct Stage {
    weight: Tensor,
    bias: Tensor,
    stride: usize,
}

/// Frozen convolutional feature extractor for the perceptual loss.
///
/// Each stage is `relu(conv3x3(x))`; the loss sums the feature MSE over the
/// selected stage outputs.
#[derive(Clone, Debug)]
pub struct PerceptualExtractor {
    stages: Vec<Stage>,
    layers: Vec<usize>,
    source: ExtractorSource,
}

/// Default stage widths of the random extractor.
pub const EXTRACTOR_WIDTHS: [usize; 5] = [16, 32, 64, 64, 64];
pub const EXTRACTOR_STRIDES: [usize; 5] = [1, 2, 2, 2, 2];

impl PerceptualExtractor {
    /// Seeded random filters with He-normal scaling; all five stage outputs
    /// contribute.
    pub fn random(seed: u64, dtype: DType) -> Result<Self> {
        let mut ps = ParamStore::new(seed, dtype, Device::Cpu);
        let mut cin = 3;
        let mut stages = Vec::new();
        for (k, (&cout, &stride)) in EXTRACTOR_WIDTHS.iter().zip(&EXTRACTOR_STRIDES).enumerate() {
            let w = ps.get_or_init(&format!("perceptual/stage{k}/weight"), &[cout, cin, 3, 3], Init::Normal)?;
            let scale = (2.0 / (cin * 9) as f64).sqrt();
            stages.push(Stage {
                weight: (w.as_tensor() * scale)?.detach(),
                bias: Tensor::zeros(cout, dtype, &Device::Cpu)?,
                stride,
            });
            cin = cout;
        }
        Ok(Self {
            layers: (0..stages.len()).collect(),
            stages,
            source: ExtractorSource::Random { seed },
        })
    }

    /// Explicit filters `(weight, bias, stride)` and the stage indices used
    /// by the loss.
    pub fn from_parts(stages: Vec<(Tensor, Tensor, usize)>, layers: Vec<usize>) -> Result<Self> {
        let stages: Vec<Stage> = stages
            .into_iter()
            .map(|(weight, bias, stride)| Stage {
                weight: weight.detach(),
                bias: bias.detach(),
                stride,
            })
            .collect();
        let ex = Self {
            stages,
            layers,
            source: ExtractorSource::Random { seed: 0 },
        };
        ex.validate()?;
        Ok(ex)
    }

    fn validate(&self) -> Result<()> {
        if self.stages.is_empty() || self.layers.is_empty() {
            return Err(Error::config("perceptual extractor has no stages or no loss layers"));
        }
        if let Some(&l) = self.layers.iter().find(|&&l| l >= self.stages.len()) {
            return Err(Error::config(format!("loss layer {l} beyond {} stages", self.stages.len())));
        }
        let mut cin = 3;
        for (k, s) in self.stages.iter().enumerate() {
            let d = s.weight.dims();
            if d.len() != 4 || d[1] != cin || d[2] != d[3] || s.bias.dims() != [d[0]] || !(1..=2).contains(&s.stride) {
                return Err(Error::config(format!("perceptual stage {k} is malformed: {d:?}")));
            }
            cin = d[0];
        }
        Ok(())
    }

    /// Reads filters written by [`PerceptualExtractor::export`] (or any
    /// archive with the same tensor names).
    pub fn import(path: &Path, dtype: DType) -> Result<Self> {
        let arc = read_archive(path)?;
        let meta: ExtractorMeta = serde_json::from_str(&arc.config)?;
        let find = |name: String| {
            arc.tensors
                .iter()
                .find(|(n, _)| *n == name)
                .map(|(_, t)| t.to_dtype(dtype))
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))
        };
        let mut stages = Vec::new();
        for (k, &stride) in meta.strides.iter().enumerate() {
            stages.push((
                find(format!("perceptual/stage{k}/weight"))??,
                find(format!("perceptual/stage{k}/bias"))??,
                stride,
            ));
        }
        let mut ex = Self::from_parts(stages, meta.layers)?;
        ex.source = ExtractorSource::Imported {
            path: path.display().to_string(),
        };
        Ok(ex)
    }

    pub fn export(&self, path: &Path) -> Result<()> {
        let meta = ExtractorMeta {
            strides: self.stages.iter().map(|s| s.stride).collect(),
            layers: self.layers.clone(),
        };
        let mut tensors = Vec::new();
        for (k, s) in self.stages.iter().enumerate() {
            tensors.push((format!("perceptual/stage{k}/weight"), s.weight.clone()));
            tensors.push((format!("perceptual/stage{k}/bias"), s.bias.clone()));
        }
        write_archive(
            path,
            &Archive {
                config: serde_json::to_string(&meta)?,
                step: 0,
                tensors,
            },
        )
    }

    pub fn source(&self) -> &ExtractorSource {
        &self.source
    }

    pub fn dtype(&self) -> DType {
        self.stages[0].weight.dtype()
    }

    /// Outputs of the loss layers for an `(N, 3, H, W)` batch.
    pub fn features(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        self.validate()?;
        let last = *self.layers.iter().max().expect("validated");
        let mut h = x.clone();
        let mut out = Vec::with_capacity(self.layers.len());
        for (k, s) in self.stages.iter().enumerate().take(last + 1) {
            let o = s.bias.dim(0)?;
            h = conv2d(&h, &s.weight, s.stride, 1)?
                .broadcast_add(&s.bias.reshape((1, o, 1, 1))?)?
                .relu()?;
            if self.layers.contains(&k) {
                out.push(h.clone());
            }
        }
        Ok(out)
    }

    /// Sum over loss layers of the feature MSE.
    pub fn loss(&self, generated: &Tensor, target: &Tensor) -> Result<Tensor> {
        same_shape(generated, target)?;
        let fg = self.features(generated)?;
        let ft = self.features(&target.detach())?;
        let mut acc = mse_loss(&fg[0], &ft[0].detach())?;
        for (a, b) in fg.iter().zip(&ft).skip(1) {
            acc = (acc + mse_loss(a, &b.detach())?)?;
        }
        Ok(acc)
    }
}

/// Gradient penalty on real images.
///
/// Returns `(penalty, surrogate)`. `penalty` is `gamma/2 * E||grad_x D(x)||^2`
/// (for logging). `surrogate` is a differentiable scalar whose gradient with
/// respect to the discriminator parameters matches that of `penalty`: with
/// `v = grad_x D(x)` held fixed, `gamma * (D(x + h v) - D(x - h v)) / (2 h)`
/// is `gamma * v . grad_x D(x)` up to O(h^2).
pub fn r1_penalty(bundle: &ModelBundle, real: &Tensor, gamma: f64) -> Result<(f64, Tensor)> {
    let x = Var::from_tensor(&real.detach())?;
    let logits = bundle.discriminate(x.as_tensor())?;
    let grads = logits.sum_all()?.backward()?;
    let v = grads
        .get(x.as_tensor())
        .ok_or_else(|| Error::Numeric("discriminator gradient is missing".into()))?
        .detach();
    let n = real.dim(0)? as f64;
    let sq = v.sqr()?.sum_all()?.to_dtype(DType::F64)?.to_scalar::<f64>()?;
    let penalty = 0.5 * gamma * sq / n;
    let vmax = v.abs()?.max_all()?.to_dtype(DType::F64)?.to_scalar::<f64>()?;
    if !penalty.is_finite() {
        return Err(Error::Numeric("non-finite gradient penalty".into()));
    }
    if vmax == 0.0 {
        return Ok((0.0, (logits.sum_all()? * 0.0)?));
    }
    let h = 1e-2 / vmax;
    let hv = (&v * h)?;
    let up = bundle.discriminate(&(real.detach() + &hv)?)?;
    let down = bundle.discriminate(&(real.detach() - &hv)?)?;
    let surrogate = ((up - down)?.mean_all()? * (gamma / (2.0 * h)))?;
    Ok((penalty, surrogate))
}
