use candle_core::{DType, Tensor};

use super::layers::{conv2d, EqLinear};
use super::params::{Init, ParamStore};
use crate::error::{Error, Result};

/// Guard added to the squared filter norm before demodulating.
pub const DEMOD_EPS: f64 = 1e-8;

fn check_finite(t: &Tensor, what: &str) -> Result<()> {
    let s = t.abs()?.sum_all()?.to_dtype(DType::F64)?.to_scalar::<f64>()?;
    if s.is_finite() {
        Ok(())
    } else {
        Err(Error::Numeric(format!("non-finite {what}")))
    }
}

/// Per-sample demodulation factors `(N, O)`:
/// `1 / sqrt(sum_{i,k} (w[o,i,k] s[n,i])^2 + eps)`.
fn demod_factors(weight: &Tensor, s: &Tensor) -> Result<Tensor> {
    let wsq = weight.sqr()?.sum(3)?.sum(2)?; // (O, I)
    let norm = s.sqr()?.matmul(&wsq.t()?)?; // (N, O)
    Ok((norm + DEMOD_EPS)?.sqrt()?.recip()?)
}

/// Convolution whose input channels are scaled per sample by `s` (the
/// post-affine style), with optional per-output-channel demodulation.
///
/// Computed as `d * conv(x * s, w)`, which equals convolving each sample
/// with its own effective filter `w * s * d`.
pub fn modulated_conv(weight: &Tensor, s: &Tensor, x: &Tensor, demodulate: bool) -> Result<Tensor> {
    check_finite(s, "style")?;
    let (n, i) = s.dims2()?;
    let (_, ci, k, _) = weight.dims4()?;
    if ci != i || x.dim(1)? != i || x.dim(0)? != n {
        return Err(Error::shape(format!(
            "modulated conv: weight {:?}, style {:?}, input {:?}",
            weight.dims(),
            s.dims(),
            x.dims()
        )));
    }
    let xs = x.broadcast_mul(&s.reshape((n, i, 1, 1))?)?;
    let y = conv2d(&xs, weight, 1, k / 2)?;
    if !demodulate {
        return Ok(y);
    }
    let d = demod_factors(weight, s)?;
    let o = d.dim(1)?;
    Ok(y.broadcast_mul(&d.reshape((n, o, 1, 1))?)?)
}

/// Explicit per-sample filters `(N, O, I, k, k)` that [`modulated_conv`]
/// applies implicitly.
pub fn effective_weights(weight: &Tensor, s: &Tensor, demodulate: bool) -> Result<Tensor> {
    check_finite(s, "style")?;
    let (n, i) = s.dims2()?;
    let (o, _, k, _) = weight.dims4()?;
    let w = weight
        .unsqueeze(0)?
        .broadcast_mul(&s.reshape((n, 1, i, 1, 1))?)?;
    if !demodulate {
        return Ok(w);
    }
    let d = demod_factors(weight, s)?;
    Ok(w.broadcast_mul(&d.reshape((n, o, 1, 1, 1))?)?.reshape((n, o, i, k, k))?)
}

/// Modulated convolution layer: affine style projection (bias initialised to
/// one), equalized-rate weights, output bias.
#[derive(Clone, Debug)]
pub struct ModConv {
    weight: Tensor,
    gain: f64,
    affine: EqLinear,
    bias: Tensor,
    demodulate: bool,
}

impl ModConv {
    pub fn new(
        ps: &mut ParamStore,
        name: &str,
        style_dim: usize,
        cin: usize,
        cout: usize,
        k: usize,
        demodulate: bool,
    ) -> Result<Self> {
        let weight = ps.get_or_init(&format!("{name}/weight"), &[cout, cin, k, k], Init::Normal)?;
        let bias = ps.get_or_init(&format!("{name}/bias"), &[cout], Init::Const(0.0))?;
        let affine = EqLinear::new(ps, &format!("{name}/affine"), style_dim, cin, 1.0)?;
        Ok(Self {
            weight: weight.as_tensor().clone(),
            gain: 1.0 / ((cin * k * k) as f64).sqrt(),
            affine,
            bias: bias.as_tensor().clone(),
            demodulate,
        })
    }

    /// Post-affine style `(N, cin)` for a motion feature `(N, style_dim)`.
    pub fn style(&self, m: &Tensor) -> Result<Tensor> {
        self.affine.forward(m)
    }

    pub fn scaled_weight(&self) -> Result<Tensor> {
        Ok((&self.weight * self.gain)?)
    }

    /// Modulated convolution without the output bias.
    pub fn conv(&self, x: &Tensor, m: &Tensor) -> Result<Tensor> {
        let s = self.style(m)?;
        modulated_conv(&self.scaled_weight()?, &s, x, self.demodulate)
    }

    pub fn add_bias(&self, y: &Tensor) -> Result<Tensor> {
        let o = self.bias.dim(0)?;
        Ok(y.broadcast_add(&self.bias.reshape((1, o, 1, 1))?)?)
    }

    pub fn forward(&self, x: &Tensor, m: &Tensor) -> Result<Tensor> {
        self.add_bias(&self.conv(x, m)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;

    fn rand(shape: &[usize], seed: u64) -> Tensor {
        let mut ps = ParamStore::new(seed, DType::F64, Device::Cpu);
        ps.get_or_init("t/x/v", shape, Init::Normal).unwrap().as_tensor().clone()
    }

    fn max_abs(a: &Tensor, b: &Tensor) -> f64 {
        (a - b).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f64>().unwrap()
    }

    #[test]
    fn unit_style_without_demod_is_plain_conv() {
        let w = rand(&[4, 3, 3, 3], 1);
        let x = rand(&[2, 3, 5, 5], 2);
        let s = Tensor::ones((2, 3), DType::F64, &Device::Cpu).unwrap();
        let y = modulated_conv(&w, &s, &x, false).unwrap();
        let plain = conv2d(&x, &w, 1, 1).unwrap();
        assert!(max_abs(&y, &plain) < 1e-12);
    }

    #[test]
    fn implicit_form_matches_effective_filters() {
        let w = rand(&[4, 3, 3, 3], 3);
        let x = rand(&[2, 3, 6, 6], 4);
        let s = rand(&[2, 3], 5);
        let y = modulated_conv(&w, &s, &x, true).unwrap();
        let eff = effective_weights(&w, &s, true).unwrap();
        for n in 0..2 {
            let yn = conv2d(&x.narrow(0, n, 1).unwrap(), &eff.get(n).unwrap(), 1, 1).unwrap();
            assert!(max_abs(&y.narrow(0, n, 1).unwrap(), &yn) < 1e-10);
        }
    }

    #[test]
    fn non_finite_style_is_rejected() {
        let w = rand(&[2, 2, 1, 1], 6);
        let x = rand(&[1, 2, 2, 2], 7);
        let s = Tensor::new(&[[1.0f64, f64::NAN]], &Device::Cpu).unwrap();
        assert!(matches!(modulated_conv(&w, &s, &x, true), Err(Error::Numeric(_))));
    }
}
