use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{grayscale, Image};

/// Solver settings of [`estimate_flow_with`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowParams {
    /// Smoothness weight for intensities in `[-1, 1]`.
    pub alpha: f64,
    /// Relaxation sweeps per warp.
    pub iterations: usize,
    /// Warps per pyramid level.
    pub warps: usize,
    /// The coarsest pyramid level keeps at least this many pixels per side.
    pub min_level_side: usize,
}

impl Default for FlowParams {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            iterations: 150,
            warps: 3,
            min_level_side: 32,
        }
    }
}

/// Dense displacement field in pixels per frame: `u` along x, `v` along y.
#[derive(Clone, Debug, PartialEq)]
pub struct Flow {
    pub u: Array2<f64>,
    pub v: Array2<f64>,
}

impl Flow {
    pub fn zeros(h: usize, w: usize) -> Self {
        Self {
            u: Array2::zeros((h, w)),
            v: Array2::zeros((h, w)),
        }
    }

    pub fn dim(&self) -> (usize, usize) {
        self.u.dim()
    }

    pub fn mean(&self) -> (f64, f64) {
        (self.u.mean().unwrap_or(0.0), self.v.mean().unwrap_or(0.0))
    }

    /// Mean end-point error against another field of the same size.
    pub fn mean_epe(&self, other: &Flow) -> f64 {
        let n = self.u.len().max(1) as f64;
        ndarray::Zip::from(&self.u)
            .and(&self.v)
            .and(&other.u)
            .and(&other.v)
            .fold(0.0, |acc, a, b, c, d| acc + (a - c).hypot(b - d))
            / n
    }

    /// Colour-wheel rendering in `[0, 1]`: hue is direction, saturation is
    /// magnitude relative to `max_mag` (the field maximum when `None`).
    pub fn to_color(&self, max_mag: Option<f64>) -> Image {
        let (h, w) = self.dim();
        let peak = max_mag.unwrap_or_else(|| {
            self.u
                .iter()
                .zip(&self.v)
                .map(|(a, b)| a.hypot(*b))
                .fold(0.0, f64::max)
        });
        let mut out = Array3::zeros((3, h, w));
        for y in 0..h {
            for x in 0..w {
                let (a, b) = (self.u[[y, x]], self.v[[y, x]]);
                let s = if peak > 0.0 { (a.hypot(b) / peak).min(1.0) } else { 0.0 };
                let hue = (b.atan2(a) / std::f64::consts::TAU).rem_euclid(1.0) * 6.0;
                let rgb = hsv(hue, s);
                for c in 0..3 {
                    out[[c, y, x]] = rgb[c] as f32;
                }
            }
        }
        out
    }
}

fn hsv(h6: f64, s: f64) -> [f64; 3] {
    let f = h6.fract();
    let (p, q, t) = (1.0 - s, 1.0 - s * f, 1.0 - s * (1.0 - f));
    match h6 as usize % 6 {
        0 => [1.0, t, p],
        1 => [q, 1.0, p],
        2 => [p, 1.0, t],
        3 => [p, q, 1.0],
        4 => [t, p, 1.0],
        _ => [1.0, p, q],
    }
}

fn to_f64(img: &Array2<f32>) -> Array2<f64> {
    img.mapv(f64::from)
}

/// Binomial blur followed by 2x decimation on pixel-pair centres; an odd
/// trailing row or column is dropped.
fn downsample(a: &Array2<f64>) -> Array2<f64> {
    const TAPS: [f64; 4] = [1.0 / 8.0, 3.0 / 8.0, 3.0 / 8.0, 1.0 / 8.0];
    let (h, w) = a.dim();
    let rows = Array2::from_shape_fn((h, w / 2), |(y, x)| {
        (0..4).map(|i| TAPS[i] * clamp_at(a, y as isize, 2 * x as isize + i as isize - 1)).sum::<f64>()
    });
    Array2::from_shape_fn((h / 2, w / 2), |(y, x)| {
        (0..4).map(|i| TAPS[i] * clamp_at(&rows, 2 * y as isize + i as isize - 1, x as isize)).sum::<f64>()
    })
}

/// Bilinear sample with edge clamping.
fn sample(a: &Array2<f64>, x: f64, y: f64) -> f64 {
    let (h, w) = a.dim();
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let top = a[[y0, x0]] * (1.0 - fx) + a[[y0, x1]] * fx;
    let bot = a[[y1, x0]] * (1.0 - fx) + a[[y1, x1]] * fx;
    top * (1.0 - fy) + bot * fy
}

/// Resizes a field to `(h, w)` and rescales its vectors by the size ratio.
fn upsample_flow(f: &Flow, h: usize, w: usize) -> Flow {
    let (fh, fw) = f.dim();
    let (sy, sx) = (fh as f64 / h as f64, fw as f64 / w as f64);
    let grid = |a: &Array2<f64>, scale: f64| {
        Array2::from_shape_fn((h, w), |(y, x)| {
            scale * sample(a, (x as f64 + 0.5) * sx - 0.5, (y as f64 + 0.5) * sy - 0.5)
        })
    };
    Flow {
        u: grid(&f.u, 1.0 / sx),
        v: grid(&f.v, 1.0 / sy),
    }
}

fn clamp_at(a: &Array2<f64>, y: isize, x: isize) -> f64 {
    let (h, w) = a.dim();
    a[[y.clamp(0, h as isize - 1) as usize, x.clamp(0, w as isize - 1) as usize]]
}

/// Weighted 8-neighbour average used by the relaxation step.
fn local_mean(a: &Array2<f64>) -> Array2<f64> {
    let (h, w) = a.dim();
    Array2::from_shape_fn((h, w), |(y, x)| {
        let (y, x) = (y as isize, x as isize);
        let edge = clamp_at(a, y - 1, x) + clamp_at(a, y + 1, x) + clamp_at(a, y, x - 1) + clamp_at(a, y, x + 1);
        let corner = clamp_at(a, y - 1, x - 1)
            + clamp_at(a, y - 1, x + 1)
            + clamp_at(a, y + 1, x - 1)
            + clamp_at(a, y + 1, x + 1);
        edge / 6.0 + corner / 12.0
    })
}

/// One level of warped Horn-Schunck refinement, updating `flow` in place.
fn refine_level(prev: &Array2<f64>, next: &Array2<f64>, flow: &mut Flow, params: &FlowParams) {
    let (h, w) = prev.dim();
    let a2 = params.alpha * params.alpha;
    for _ in 0..params.warps {
        let warped = Array2::from_shape_fn((h, w), |(y, x)| {
            sample(next, x as f64 + flow.u[[y, x]], y as f64 + flow.v[[y, x]])
        });
        let avg = (&warped + prev) * 0.5;
        let ix = Array2::from_shape_fn((h, w), |(y, x)| {
            let (y, x) = (y as isize, x as isize);
            0.5 * (clamp_at(&avg, y, x + 1) - clamp_at(&avg, y, x - 1))
        });
        let iy = Array2::from_shape_fn((h, w), |(y, x)| {
            let (y, x) = (y as isize, x as isize);
            0.5 * (clamp_at(&avg, y + 1, x) - clamp_at(&avg, y - 1, x))
        });
        let it = &warped - prev;
        // pixels whose match leaves the frame keep only the smoothness term
        let inside = Array2::from_shape_fn((h, w), |(y, x)| {
            let (sx, sy) = (x as f64 + flow.u[[y, x]], y as f64 + flow.v[[y, x]]);
            sx >= 0.0 && sy >= 0.0 && sx <= (w - 1) as f64 && sy <= (h - 1) as f64
        });
        let mut du = Array2::<f64>::zeros((h, w));
        let mut dv = Array2::<f64>::zeros((h, w));
        for _ in 0..params.iterations {
            // smoothness acts on the total field, so relax around the current estimate
            let mu = local_mean(&(&flow.u + &du)) - &flow.u;
            let mv = local_mean(&(&flow.v + &dv)) - &flow.v;
            for y in 0..h {
                for x in 0..w {
                    let (gx, gy, gt) = if inside[[y, x]] {
                        (ix[[y, x]], iy[[y, x]], it[[y, x]])
                    } else {
                        (0.0, 0.0, 0.0)
                    };
                    let (ub, vb) = (mu[[y, x]], mv[[y, x]]);
                    let r = (gx * ub + gy * vb + gt) / (a2 + gx * gx + gy * gy);
                    du[[y, x]] = ub - gx * r;
                    dv[[y, x]] = vb - gy * r;
                }
            }
        }
        flow.u += &du;
        flow.v += &dv;
    }
}

/// Coarse-to-fine Horn-Schunck flow from `prev` to `next` on luma, with
/// fixed iteration counts, so the result is deterministic.
pub fn estimate_flow(prev: &Image, next: &Image) -> Result<Flow> {
    estimate_flow_with(prev, next, &FlowParams::default())
}

pub fn estimate_flow_with(prev: &Image, next: &Image, params: &FlowParams) -> Result<Flow> {
    if prev.dim() != next.dim() {
        return Err(Error::shape(format!(
            "flow frames differ in shape: {:?} vs {:?}",
            prev.dim(),
            next.dim()
        )));
    }
    let (_, h, w) = prev.dim();
    if h < 2 || w < 2 {
        return Err(Error::shape("flow needs frames of at least 2x2 pixels"));
    }
    let mut p = vec![to_f64(&grayscale(prev))];
    let mut n = vec![to_f64(&grayscale(next))];
    while {
        let (lh, lw) = p.last().expect("non-empty").dim();
        lh / 2 >= params.min_level_side && lw / 2 >= params.min_level_side
    } {
        let dp = downsample(p.last().expect("non-empty"));
        let dn = downsample(n.last().expect("non-empty"));
        p.push(dp);
        n.push(dn);
    }
    let (ch, cw) = p.last().expect("non-empty").dim();
    let mut flow = Flow::zeros(ch, cw);
    for level in (0..p.len()).rev() {
        let (lh, lw) = p[level].dim();
        if flow.dim() != (lh, lw) {
            flow = upsample_flow(&flow, lh, lw);
        }
        refine_level(&p[level], &n[level], &mut flow, params);
    }
    Ok(flow)
}
