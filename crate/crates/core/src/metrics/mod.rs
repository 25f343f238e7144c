//! Image and sequence quality measures plus temporal diagnostics.
//!
//! All images are `[-1, 1]`. The flow estimator is a classical
//! coarse-to-fine Horn-Schunck solver, so tOF values are comparable within
//! this crate only.

mod flow;

use ndarray::{s, Array1, Array2, Array3, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{Image, Mask};

pub use flow::{estimate_flow, estimate_flow_with, Flow, FlowParams};

/// Side of the SSIM Gaussian window.
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
/// Dynamic range of `[-1, 1]` pixels.
pub const SSIM_RANGE: f64 = 2.0;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn check_pair(a: &[Image], b: &[Image]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::shape(format!(
            "sequences have {} and {} frames",
            a.len(),
            b.len()
        )));
    }
    if let Some((x, y)) = a.iter().zip(b).find(|(x, y)| x.dim() != y.dim()) {
        return Err(Error::shape(format!(
            "frame shapes differ: {:?} vs {:?}",
            x.dim(),
            y.dim()
        )));
    }
    Ok(())
}

/// Mean squared difference over frames, channels and pixels.
pub fn mse(a: &[Image], b: &[Image]) -> Result<f64> {
    check_pair(a, b)?;
    let mut acc = 0.0;
    let mut n = 0usize;
    for (x, y) in a.iter().zip(b) {
        acc += ndarray::Zip::from(x)
            .and(y)
            .fold(0.0, |s, &p, &q| s + (f64::from(p) - f64::from(q)).powi(2));
        n += x.len();
    }
    if n == 0 {
        return Err(Error::shape("mse of empty sequences"));
    }
    Ok(acc / n as f64)
}

fn gaussian_kernel() -> Array1<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let k = Array1::from_shape_fn(SSIM_WINDOW, |i| {
        let d = i as f64 - r;
        (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
    });
    let total = k.sum();
    k / total
}

/// Separable Gaussian filter without padding.
fn filter_valid(a: &Array2<f64>, k: &Array1<f64>) -> Array2<f64> {
    let (h, w) = a.dim();
    let n = k.len();
    let rows = Array2::from_shape_fn((h, w + 1 - n), |(y, x)| (0..n).map(|i| k[i] * a[[y, x + i]]).sum::<f64>());
    Array2::from_shape_fn((h + 1 - n, w + 1 - n), |(y, x)| {
        (0..n).map(|i| k[i] * rows[[y + i, x]]).sum()
    })
}

/// SSIM map of one channel pair over the valid window positions.
fn ssim_map(x: &Array2<f64>, y: &Array2<f64>) -> Array2<f64> {
    let k = gaussian_kernel();
    let c1 = (SSIM_K1 * SSIM_RANGE).powi(2);
    let c2 = (SSIM_K2 * SSIM_RANGE).powi(2);
    let mx = filter_valid(x, &k);
    let my = filter_valid(y, &k);
    let sxx = filter_valid(&(x * x), &k) - &mx * &mx;
    let syy = filter_valid(&(y * y), &k) - &my * &my;
    let sxy = filter_valid(&(x * y), &k) - &mx * &my;
    let num = (&mx * &my * 2.0 + c1) * (sxy * 2.0 + c2);
    let den = (&mx * &mx + &my * &my + c1) * (sxx + syy + c2);
    num / den
}

/// Mean local SSIM (11x11 Gaussian window, sigma 1.5), averaged over channels.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::shape(format!(
            "ssim inputs differ in shape: {:?} vs {:?}",
            a.dim(),
            b.dim()
        )));
    }
    let (c, h, w) = a.dim();
    if h < SSIM_WINDOW || w < SSIM_WINDOW || c == 0 {
        return Err(Error::shape(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {h}x{w}"
        )));
    }
    let mut acc = 0.0;
    for ch in 0..c {
        let x = a.index_axis(Axis(0), ch).mapv(f64::from);
        let y = b.index_axis(Axis(0), ch).mapv(f64::from);
        acc += ssim_map(&x, &y).mean().expect("non-empty map");
    }
    Ok(acc / c as f64)
}

/// Frame-averaged SSIM.
pub fn ssim_sequence(a: &[Image], b: &[Image]) -> Result<f64> {
    check_pair(a, b)?;
    if a.is_empty() {
        return Err(Error::shape("ssim of empty sequences"));
    }
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += ssim(x, y)?;
    }
    Ok(acc / a.len() as f64)
}

/// Flow between every consecutive frame pair.
pub fn sequence_flows(seq: &[Image]) -> Result<Vec<Flow>> {
    seq.windows(2).map(|w| estimate_flow(&w[0], &w[1])).collect()
}

/// Mean end-point error between flows of generated and true pairs.
pub fn tof_from_flows(generated: &[Flow], truth: &[Flow]) -> Result<f64> {
    if generated.len() != truth.len() || generated.is_empty() {
        return Err(Error::shape("tof needs equally many, and at least one, flow pairs"));
    }
    let total: f64 = generated.iter().zip(truth).map(|(g, t)| g.mean_epe(t)).sum();
    Ok(total / generated.len() as f64)
}

/// Temporal optical-flow error of a generated sequence against the truth.
pub fn tof(generated: &[Image], truth: &[Image]) -> Result<f64> {
    check_pair(generated, truth)?;
    if generated.len() < 2 {
        return Err(Error::shape("tof needs at least 2 frames"));
    }
    tof_from_flows(&sequence_flows(generated)?, &sequence_flows(truth)?)
}

/// Column `col` and row `row` of the first `span` frames, stacked along
/// time: `(C, H, span)` and `(C, span, W)`.
pub fn slice_plot(seq: &[Image], row: usize, col: usize, span: usize) -> Result<(Image, Image)> {
    let first = seq.first().ok_or_else(|| Error::shape("slice plot of an empty sequence"))?;
    let (c, h, w) = first.dim();
    if span == 0 || span > seq.len() {
        return Err(Error::config(format!(
            "slice span {span} must be in 1..={}",
            seq.len()
        )));
    }
    if row >= h || col >= w {
        return Err(Error::Index {
            index: if row >= h { row } else { col },
            len: if row >= h { h } else { w },
        });
    }
    let mut vertical = Array3::zeros((c, h, span));
    let mut horizontal = Array3::zeros((c, span, w));
    for (t, img) in seq.iter().take(span).enumerate() {
        if img.dim() != (c, h, w) {
            return Err(Error::shape("slice plot frames differ in shape"));
        }
        vertical.slice_mut(s![.., .., t]).assign(&img.slice(s![.., .., col]));
        horizontal.slice_mut(s![.., t, ..]).assign(&img.slice(s![.., row, ..]));
    }
    Ok((vertical, horizontal))
}

/// Mean absolute frame-to-frame change inside `mask` (whole frame when
/// `None`), averaged over consecutive pairs.
pub fn temporal_jitter_score(seq: &[Image], mask: Option<&Mask>) -> Result<f64> {
    if seq.len() < 2 {
        return Err(Error::shape("jitter score needs at least 2 frames"));
    }
    let (c, h, w) = seq[0].dim();
    if let Some(m) = mask {
        if m.dim() != (h, w) {
            return Err(Error::shape(format!(
                "mask is {:?} but frames are {h}x{w}",
                m.dim()
            )));
        }
    }
    let count = mask.map_or(h * w, |m| m.iter().filter(|&&v| v).count());
    if count == 0 {
        return Err(Error::config("jitter mask selects no pixel"));
    }
    let mut total = 0.0;
    for pair in seq.windows(2) {
        if pair[1].dim() != (c, h, w) {
            return Err(Error::shape("jitter frames differ in shape"));
        }
        let mut acc = 0.0;
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    if mask.is_none_or(|m| m[[y, x]]) {
                        acc += (f64::from(pair[1][[ch, y, x]]) - f64::from(pair[0][[ch, y, x]])).abs();
                    }
                }
            }
        }
        total += acc / (count * c) as f64;
    }
    Ok(total / (seq.len() - 1) as f64)
}

/// Summary written by the `evaluate` command.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mse: f64,
    pub ssim: f64,
    pub tof: f64,
    pub jitter: f64,
}

/// Every summary metric of a generated sequence against the truth; the
/// jitter score is taken on the generated frames.
pub fn evaluate(generated: &[Image], truth: &[Image], mask: Option<&Mask>) -> Result<Metrics> {
    Ok(Metrics {
        mse: mse(generated, truth)?,
        ssim: ssim_sequence(generated, truth)?,
        tof: tof(generated, truth)?,
        jitter: temporal_jitter_score(generated, mask)?,
    })
}
