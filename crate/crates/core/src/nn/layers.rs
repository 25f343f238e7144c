use candle_core::{CpuStorage, CustomOp1, Layout, Shape, Tensor};

use super::params::{Init, ParamStore};
use crate::error::{Error, Result};

const SQRT2: f64 = std::f64::consts::SQRT_2;

/// Leaky ReLU (slope 0.2) scaled by sqrt(2) to keep unit variance.
pub fn lrelu(x: &Tensor) -> Result<Tensor> {
    let pos = (x.relu()? * (0.8 * SQRT2))?;
    Ok((pos + (x * (0.2 * SQRT2))?)?)
}

#[derive(Clone, Copy, Debug)]
struct Patches {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl Patches {
    /// Input column feeding output column `o` through kernel column `kx`.
    #[inline]
    fn src(&self, o: usize, kx: usize, len: usize) -> Option<usize> {
        let i = (o * self.stride + kx) as isize - self.pad as isize;
        (i >= 0 && (i as usize) < len).then_some(i as usize)
    }

    fn im2col<T: Copy + Default>(&self, x: &[T]) -> Vec<T> {
        let (k, p) = (self.k, self.ho * self.wo);
        let mut out = vec![T::default(); self.n * self.c * k * k * p];
        for n in 0..self.n {
            for c in 0..self.c {
                let plane = &x[(n * self.c + c) * self.h * self.w..][..self.h * self.w];
                for ky in 0..k {
                    for kx in 0..k {
                        let row = ((n * self.c + c) * k + ky) * k + kx;
                        let dst = &mut out[row * p..][..p];
                        for oy in 0..self.ho {
                            let Some(iy) = self.src(oy, ky, self.h) else { continue };
                            let line = &plane[iy * self.w..][..self.w];
                            let drow = &mut dst[oy * self.wo..][..self.wo];
                            for (ox, d) in drow.iter_mut().enumerate() {
                                if let Some(ix) = self.src(ox, kx, self.w) {
                                    *d = line[ix];
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }

    fn col2im<T: Copy + Default + std::ops::AddAssign>(&self, cols: &[T]) -> Vec<T> {
        let (k, p) = (self.k, self.ho * self.wo);
        let mut out = vec![T::default(); self.n * self.c * self.h * self.w];
        for n in 0..self.n {
            for c in 0..self.c {
                let plane = &mut out[(n * self.c + c) * self.h * self.w..][..self.h * self.w];
                for ky in 0..k {
                    for kx in 0..k {
                        let row = ((n * self.c + c) * k + ky) * k + kx;
                        let src = &cols[row * p..][..p];
                        for oy in 0..self.ho {
                            let Some(iy) = self.src(oy, ky, self.h) else { continue };
                            let line = &mut plane[iy * self.w..][..self.w];
                            let srow = &src[oy * self.wo..][..self.wo];
                            for (ox, v) in srow.iter().enumerate() {
                                if let Some(ix) = self.src(ox, kx, self.w) {
                                    line[ix] += *v;
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

fn storage_op(
    storage: &CpuStorage,
    layout: &Layout,
    f32_op: impl Fn(&[f32]) -> Vec<f32>,
    f64_op: impl Fn(&[f64]) -> Vec<f64>,
) -> candle_core::Result<CpuStorage> {
    let (start, end) = layout
        .contiguous_offsets()
        .ok_or_else(|| candle_core::Error::Msg("patch ops need contiguous input".into()))?;
    match storage {
        CpuStorage::F32(v) => Ok(CpuStorage::F32(f32_op(&v[start..end]))),
        CpuStorage::F64(v) => Ok(CpuStorage::F64(f64_op(&v[start..end]))),
        _ => Err(candle_core::Error::Msg("patch ops support f32 and f64 only".into())),
    }
}

struct Im2Col(Patches);
struct Col2Im(Patches);

impl CustomOp1 for Im2Col {
    fn name(&self) -> &'static str {
        "im2col"
    }

    fn cpu_fwd(&self, storage: &CpuStorage, layout: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let p = self.0;
        let out = storage_op(storage, layout, |x| p.im2col(x), |x| p.im2col(x))?;
        Ok((out, Shape::from((p.n, p.c * p.k * p.k, p.ho * p.wo))))
    }

    fn bwd(&self, _arg: &Tensor, _res: &Tensor, grad: &Tensor) -> candle_core::Result<Option<Tensor>> {
        Ok(Some(grad.contiguous()?.apply_op1_no_bwd(&Col2Im(self.0))?))
    }
}

impl CustomOp1 for Col2Im {
    fn name(&self) -> &'static str {
        "col2im"
    }

    fn cpu_fwd(&self, storage: &CpuStorage, layout: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let p = self.0;
        let out = storage_op(storage, layout, |x| p.col2im(x), |x| p.col2im(x))?;
        Ok((out, Shape::from((p.n, p.c, p.h, p.w))))
    }
}

/// Square-kernel convolution lowered to a matrix product over gathered
/// patches `(N, C*k*k, Ho*Wo)`.
pub fn conv2d(x: &Tensor, w: &Tensor, stride: usize, pad: usize) -> Result<Tensor> {
    let (n, c, h, wd) = x.dims4()?;
    let (o, ci, k, k2) = w.dims4()?;
    if ci != c || k != k2 {
        return Err(Error::shape(format!(
            "conv weight {:?} does not fit input {:?}",
            w.dims(),
            x.dims()
        )));
    }
    if stride == 0 || h + 2 * pad < k || wd + 2 * pad < k {
        return Err(Error::shape(format!(
            "kernel {k} with stride {stride} and padding {pad} does not fit {h}x{wd}"
        )));
    }
    if k == 1 && stride == 1 && pad == 0 {
        let y = w.reshape((o, c))?.broadcast_matmul(&x.reshape((n, c, h * wd))?)?;
        return Ok(y.reshape((n, o, h, wd))?);
    }
    let p = Patches {
        n,
        c,
        h,
        w: wd,
        k,
        stride,
        pad,
        ho: (h + 2 * pad - k) / stride + 1,
        wo: (wd + 2 * pad - k) / stride + 1,
    };
    let cols = x.contiguous()?.apply_op1(Im2Col(p))?;
    let y = w.reshape((o, c * k * k))?.broadcast_matmul(&cols)?;
    Ok(y.reshape((n, o, p.ho, p.wo))?)
}

/// Nearest-neighbour 2x upsampling.
pub fn upsample2x(x: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    let y = x
        .reshape((n, c, h, 1, w, 1))?
        .broadcast_as((n, c, h, 2, w, 2))?
        .reshape((n, c, 2 * h, 2 * w))?;
    Ok(y)
}

/// 2x2 average pooling.
pub fn avgpool2x(x: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::shape(format!("cannot halve odd size {h}x{w}")));
    }
    Ok(x.reshape((n, c, h / 2, 2, w / 2, 2))?.mean(5)?.mean(3)?)
}

/// Average pooling to a fixed output grid; bin `i` covers
/// `[floor(i*H/out), ceil((i+1)*H/out))`, so small inputs are replicated.
pub fn adaptive_avgpool(x: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    if h % out_h == 0 && w % out_w == 0 {
        let (n, c, ..) = x.dims4()?;
        return Ok(x
            .reshape((n, c, out_h, h / out_h, out_w, w / out_w))?
            .mean(5)?
            .mean(3)?);
    }
    let bin = |i: usize, len: usize, out: usize| {
        let a = i * len / out;
        let b = ((i + 1) * len).div_ceil(out);
        (a, b - a)
    };
    let mut rows = Vec::with_capacity(out_h);
    for i in 0..out_h {
        let (a, la) = bin(i, h, out_h);
        let band = x.narrow(2, a, la)?.mean_keepdim(2)?;
        let mut cells = Vec::with_capacity(out_w);
        for j in 0..out_w {
            let (b, lb) = bin(j, w, out_w);
            cells.push(band.narrow(3, b, lb)?.mean_keepdim(3)?);
        }
        rows.push(Tensor::cat(&cells, 3)?);
    }
    Ok(Tensor::cat(&rows, 2)?)
}

/// Convolution with weights stored at unit variance and scaled by
/// `1/sqrt(fan_in)` at run time.
#[derive(Clone, Debug)]
pub struct EqConv {
    weight: Tensor,
    bias: Option<Tensor>,
    gain: f64,
    stride: usize,
    pad: usize,
}

impl EqConv {
    pub fn new(
        ps: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        bias: bool,
    ) -> Result<Self> {
        let weight = ps.get_or_init(&format!("{name}/weight"), &[cout, cin, k, k], Init::Normal)?;
        let bias = if bias {
            Some(ps.get_or_init(&format!("{name}/bias"), &[cout], Init::Const(0.0))?)
        } else {
            None
        };
        Ok(Self {
            weight: weight.as_tensor().clone(),
            bias: bias.map(|b| b.as_tensor().clone()),
            gain: 1.0 / ((cin * k * k) as f64).sqrt(),
            stride,
            pad: k / 2,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let w = (&self.weight * self.gain)?;
        let y = conv2d(x, &w, self.stride, self.pad)?;
        match &self.bias {
            Some(b) => Ok(y.broadcast_add(&b.reshape((1, b.dim(0)?, 1, 1))?)?),
            None => Ok(y),
        }
    }
}

/// Fully connected layer with equalized learning rate.
#[derive(Clone, Debug)]
pub struct EqLinear {
    weight: Tensor,
    bias: Tensor,
    gain: f64,
}

impl EqLinear {
    pub fn new(ps: &mut ParamStore, name: &str, din: usize, dout: usize, bias_init: f64) -> Result<Self> {
        let weight = ps.get_or_init(&format!("{name}/weight"), &[dout, din], Init::Normal)?;
        let bias = ps.get_or_init(&format!("{name}/bias"), &[dout], Init::Const(bias_init))?;
        Ok(Self {
            weight: weight.as_tensor().clone(),
            bias: bias.as_tensor().clone(),
            gain: 1.0 / (din as f64).sqrt(),
        })
    }

    /// `x` is `(N, din)`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let w = (&self.weight * self.gain)?;
        Ok(x.matmul(&w.t()?)?.broadcast_add(&self.bias)?)
    }
}

/// Flattens all but the batch dimension.
pub fn flatten(x: &Tensor) -> Result<Tensor> {
    Ok(x.flatten_from(1)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device};

    fn rand(shape: &[usize], seed: u64) -> Tensor {
        let mut ps = ParamStore::new(seed, DType::F64, Device::Cpu);
        ps.get_or_init("t/x/v", shape, Init::Normal).unwrap().as_tensor().clone()
    }

    /// Direct nested-loop convolution.
    fn naive_conv(x: &Tensor, w: &Tensor, stride: usize, pad: usize) -> Vec<f64> {
        let (n, c, h, wd) = x.dims4().unwrap();
        let (o, _, k, _) = w.dims4().unwrap();
        let xv = x.flatten_all().unwrap().to_vec1::<f64>().unwrap();
        let wv = w.flatten_all().unwrap().to_vec1::<f64>().unwrap();
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (wd + 2 * pad - k) / stride + 1;
        let mut out = Vec::new();
        for b in 0..n {
            for oc in 0..o {
                for y in 0..ho {
                    for xx in 0..wo {
                        let mut acc = 0.0;
                        for ic in 0..c {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = (y * stride + ky) as i64 - pad as i64;
                                    let ix = (xx * stride + kx) as i64 - pad as i64;
                                    if iy < 0 || ix < 0 || iy >= h as i64 || ix >= wd as i64 {
                                        continue;
                                    }
                                    acc += xv[((b * c + ic) * h + iy as usize) * wd + ix as usize]
                                        * wv[((oc * c + ic) * k + ky) * k + kx];
                                }
                            }
                        }
                        out.push(acc);
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_direct_loops() {
        for (k, stride, pad) in [(3, 1, 1), (3, 2, 1), (1, 1, 0), (3, 1, 0), (1, 2, 0), (3, 2, 0)] {
            let x = rand(&[2, 3, 6, 8], 1);
            let w = rand(&[4, 3, k, k], 2);
            let got = conv2d(&x, &w, stride, pad).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap();
            let want = naive_conv(&x, &w, stride, pad);
            assert_eq!(got.len(), want.len());
            for (a, b) in got.iter().zip(&want) {
                assert!((a - b).abs() < 1e-10, "k{k} s{stride} p{pad}");
            }
        }
    }

    #[test]
    fn conv_gradients_match_direct_sums() {
        // d/dx sum(conv(x, w) * g) and d/dw of the same, against loops
        let x = candle_core::Var::from_tensor(&rand(&[1, 2, 5, 4], 8)).unwrap();
        let w = candle_core::Var::from_tensor(&rand(&[3, 2, 3, 3], 9)).unwrap();
        for stride in [1, 2] {
            let y = conv2d(x.as_tensor(), w.as_tensor(), stride, 1).unwrap();
            let g = rand(y.dims(), 10);
            let grads = (&y * &g).unwrap().sum_all().unwrap().backward().unwrap();
            let gx = grads.get(x.as_tensor()).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap();
            let gw = grads.get(w.as_tensor()).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap();
            let gv = g.flatten_all().unwrap().to_vec1::<f64>().unwrap();
            let f = |xx: &Tensor, ww: &Tensor| -> f64 {
                naive_conv(xx, ww, stride, 1).iter().zip(&gv).map(|(a, b)| a * b).sum()
            };
            // the objective is linear in each argument, so unit probes give exact partials
            let xv = x.as_tensor().flatten_all().unwrap().to_vec1::<f64>().unwrap();
            for i in [0, 7, 19, 39] {
                let mut e = vec![0.0; xv.len()];
                e[i] = 1.0;
                let probe = Tensor::from_vec(e, x.dims(), &Device::Cpu).unwrap();
                assert!((f(&probe, w.as_tensor()) - gx[i]).abs() < 1e-10, "dx[{i}] stride {stride}");
            }
            let wv = w.as_tensor().flatten_all().unwrap().to_vec1::<f64>().unwrap();
            for i in [0, 5, 26, 53] {
                let mut e = vec![0.0; wv.len()];
                e[i] = 1.0;
                let probe = Tensor::from_vec(e, w.dims(), &Device::Cpu).unwrap();
                assert!((f(x.as_tensor(), &probe) - gw[i]).abs() < 1e-10, "dw[{i}] stride {stride}");
            }
        }
    }

    #[test]
    fn pooling_and_upsampling_shapes() {
        let x = rand(&[1, 2, 4, 6], 3);
        assert_eq!(upsample2x(&x).unwrap().dims(), &[1, 2, 8, 12]);
        assert_eq!(avgpool2x(&x).unwrap().dims(), &[1, 2, 2, 3]);
        let up = avgpool2x(&upsample2x(&x).unwrap()).unwrap();
        let d = (up - &x).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f64>().unwrap();
        assert!(d < 1e-12);
    }

    #[test]
    fn adaptive_pool_replicates_small_inputs() {
        let x = Tensor::arange(0f64, 4.0, &Device::Cpu).unwrap().reshape((1, 1, 2, 2)).unwrap();
        let y = adaptive_avgpool(&x, 4, 4).unwrap();
        let v = y.flatten_all().unwrap().to_vec1::<f64>().unwrap();
        assert_eq!(&v[..4], &[0.0, 0.0, 1.0, 1.0]);
        assert_eq!(&v[12..], &[2.0, 2.0, 3.0, 3.0]);
        let z = adaptive_avgpool(&rand(&[1, 1, 8, 8], 4), 4, 4).unwrap();
        assert_eq!(z.dims(), &[1, 1, 4, 4]);
        let odd = adaptive_avgpool(&rand(&[1, 1, 6, 6], 5), 4, 4).unwrap();
        assert_eq!(odd.dims(), &[1, 1, 4, 4]);
    }

    #[test]
    fn lrelu_slopes() {
        let x = Tensor::new(&[-1.0f64, 2.0], &Device::Cpu).unwrap();
        let y = lrelu(&x).unwrap().to_vec1::<f64>().unwrap();
        assert!((y[0] + 0.2 * SQRT2).abs() < 1e-12);
        assert!((y[1] - 2.0 * SQRT2).abs() < 1e-12);
    }
}
