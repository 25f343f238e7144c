use ndarray::Array2;

use super::figure::{FigureSpec, Texture};
use super::garment::{simulate_garment, GarmentState};
use super::script::MotionScript;
use crate::data::{DenseUVMap, FrameRecord, Keypoint, KeypointSet, SequenceDataset};
use crate::error::{Error, Result};
use crate::imaging::{Image, Mask};

type P2 = (f64, f64);

/// Image samples per pixel along each axis for the color image.
const SUPERSAMPLE: usize = 2;

#[derive(Clone, Copy, Debug)]
enum Surface {
    /// 1-based body part index.
    Body(usize),
    Garment,
}

#[derive(Clone, Copy, Debug)]
struct Tri {
    v: [P2; 3],
    uv: [P2; 3],
    surface: Surface,
    color: [f32; 3],
    texture: Texture,
}

impl Tri {
    /// Barycentric weights of `p`, or `None` when outside.
    fn weights(&self, p: P2) -> Option<[f64; 3]> {
        let [a, b, c] = self.v;
        let det = (b.1 - c.1) * (a.0 - c.0) + (c.0 - b.0) * (a.1 - c.1);
        if det.abs() < 1e-12 {
            return None;
        }
        let w0 = ((b.1 - c.1) * (p.0 - c.0) + (c.0 - b.0) * (p.1 - c.1)) / det;
        let w1 = ((c.1 - a.1) * (p.0 - c.0) + (a.0 - c.0) * (p.1 - c.1)) / det;
        let w2 = 1.0 - w0 - w1;
        const EPS: f64 = -1e-9;
        (w0 >= EPS && w1 >= EPS && w2 >= EPS).then_some([w0, w1, w2])
    }

    fn uv_at(&self, w: [f64; 3]) -> P2 {
        let u = w[0] * self.uv[0].0 + w[1] * self.uv[1].0 + w[2] * self.uv[2].0;
        let v = w[0] * self.uv[0].1 + w[1] * self.uv[1].1 + w[2] * self.uv[2].1;
        (u.clamp(0.0, 1.0), v.clamp(0.0, 1.0))
    }

    fn bbox(&self, w: usize, h: usize) -> Option<(usize, usize, usize, usize)> {
        let xs = self.v.map(|p| p.0);
        let ys = self.v.map(|p| p.1);
        let min = |a: [f64; 3]| a.iter().copied().fold(f64::INFINITY, f64::min);
        let max = |a: [f64; 3]| a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let (x0, x1) = (min(xs).floor() - 1.0, max(xs).ceil() + 1.0);
        let (y0, y1) = (min(ys).floor() - 1.0, max(ys).ceil() + 1.0);
        if x1 < 0.0 || y1 < 0.0 || x0 >= w as f64 || y0 >= h as f64 {
            return None;
        }
        Some((
            x0.max(0.0) as usize,
            y0.max(0.0) as usize,
            (x1 as usize).min(w - 1),
            (y1 as usize).min(h - 1),
        ))
    }
}

fn quad(corners: [P2; 4], uvs: [P2; 4], surface: Surface, color: [f32; 3], texture: Texture) -> [Tri; 2] {
    [
        Tri {
            v: [corners[0], corners[1], corners[2]],
            uv: [uvs[0], uvs[1], uvs[2]],
            surface,
            color,
            texture,
        },
        Tri {
            v: [corners[0], corners[2], corners[3]],
            uv: [uvs[0], uvs[2], uvs[3]],
            surface,
            color,
            texture,
        },
    ]
}

/// Pixel placement of figure units.
struct Frame {
    h: usize,
    anchor: P2,
}

impl Frame {
    fn new(spec: &FigureSpec, w: usize, h: usize) -> Self {
        Self {
            h,
            anchor: (spec.pelvis_anchor.0 * w as f64, spec.pelvis_anchor.1 * h as f64),
        }
    }

    fn px(&self, p: P2) -> P2 {
        (self.anchor.0 + p.0 * self.h as f64, self.anchor.1 + p.1 * self.h as f64)
    }
}

/// Bone quads for every joint whose bone endpoints are known, in pixels.
fn body_tris(spec: &FigureSpec, joints_px: &[Option<P2>], scale: f64, parts: &[usize]) -> Vec<Tri> {
    let mut out = Vec::new();
    for &j in parts {
        let js = &spec.joints[j];
        let Some(p) = js.parent else { continue };
        let (Some(a), Some(b)) = (joints_px[p], joints_px[j]) else {
            continue;
        };
        let (dx, dy) = (b.0 - a.0, b.1 - a.1);
        let len = (dx * dx + dy * dy).sqrt();
        if len < 1e-9 {
            continue;
        }
        let (ux, uy) = (dx / len, dy / len);
        let (nx, ny) = (-uy, ux);
        let half = js.width * scale / 2.0;
        let ext = js.width * scale / 3.0;
        let s = (a.0 - ux * ext, a.1 - uy * ext);
        let e = (b.0 + ux * ext, b.1 + uy * ext);
        let corners = [
            (s.0 - nx * half, s.1 - ny * half),
            (e.0 - nx * half, e.1 - ny * half),
            (e.0 + nx * half, e.1 + ny * half),
            (s.0 + nx * half, s.1 + ny * half),
        ];
        out.extend(quad(
            corners,
            [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)],
            Surface::Body(j),
            js.color,
            js.texture,
        ));
    }
    out
}

fn garment_tris(spec: &FigureSpec, g: &GarmentState, frame: &Frame) -> Vec<Tri> {
    let n = g.waist.len();
    let u = |j: usize| j as f64 / (n - 1) as f64;
    (0..n - 1)
        .flat_map(|j| {
            quad(
                [
                    frame.px(g.waist[j]),
                    frame.px(g.waist[j + 1]),
                    frame.px(g.hem[j + 1]),
                    frame.px(g.hem[j]),
                ],
                [(u(j), 0.0), (u(j + 1), 0.0), (u(j + 1), 1.0), (u(j), 1.0)],
                Surface::Garment,
                spec.garment.color,
                spec.garment.texture,
            )
        })
        .collect()
}

fn back_and_front(spec: &FigureSpec) -> (Vec<usize>, Vec<usize>) {
    let all = 1..spec.joints.len();
    let back = all.clone().filter(|j| !spec.front_parts.contains(j)).collect();
    let front = all.filter(|j| spec.front_parts.contains(j)).collect();
    (back, front)
}

fn render_uv(spec: &FigureSpec, tris: &[Tri], w: usize, h: usize) -> Result<DenseUVMap> {
    let mut uv = Image::zeros((3, h, w));
    let parts = spec.num_parts() as f64;
    for t in tris {
        let Surface::Body(part) = t.surface else { continue };
        let Some((x0, y0, x1, y1)) = t.bbox(w, h) else { continue };
        for y in y0..=y1 {
            for x in x0..=x1 {
                if let Some(wt) = t.weights((x as f64, y as f64)) {
                    let (u, v) = t.uv_at(wt);
                    uv[[0, y, x]] = (part as f64 / parts) as f32;
                    uv[[1, y, x]] = u as f32;
                    uv[[2, y, x]] = v as f32;
                }
            }
        }
    }
    DenseUVMap::new(uv)
}

fn render_color(spec: &FigureSpec, layers: &[Tri], w: usize, h: usize) -> Image {
    let ss = SUPERSAMPLE;
    let (sw, sh) = (w * ss, h * ss);
    let mut buf = vec![spec.background; sw * sh];
    let step = 1.0 / ss as f64;
    for t in layers {
        let Some((x0, y0, x1, y1)) = t.bbox(w, h) else { continue };
        for y in y0..=y1 {
            for x in x0..=x1 {
                for sy in 0..ss {
                    for sx in 0..ss {
                        let p = (
                            x as f64 - 0.5 + (sx as f64 + 0.5) * step,
                            y as f64 - 0.5 + (sy as f64 + 0.5) * step,
                        );
                        if let Some(wt) = t.weights(p) {
                            let (u, v) = t.uv_at(wt);
                            let f = t.texture.factor(u, v) as f32;
                            buf[(y * ss + sy) * sw + x * ss + sx] = t.color.map(|c| c * f);
                        }
                    }
                }
            }
        }
    }
    let mut img = Image::zeros((3, h, w));
    let norm = 1.0 / (ss * ss) as f32;
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let mut acc = 0.0;
                for sy in 0..ss {
                    for sx in 0..ss {
                        acc += buf[(y * ss + sy) * sw + x * ss + sx][c];
                    }
                }
                img[[c, y, x]] = acc * norm * 2.0 - 1.0;
            }
        }
    }
    img
}

fn coverage_mask(tris: &[Tri], w: usize, h: usize) -> Mask {
    let mut m = Array2::from_elem((h, w), false);
    for t in tris {
        let Some((x0, y0, x1, y1)) = t.bbox(w, h) else { continue };
        for y in y0..=y1 {
            for x in x0..=x1 {
                if t.weights((x as f64, y as f64)).is_some() {
                    m[[y, x]] = true;
                }
            }
        }
    }
    m
}

/// Rendered sequence plus the simulation ground truth behind it.
#[derive(Clone, Debug)]
pub struct RenderedSequence {
    pub dataset: SequenceDataset,
    pub garment: Vec<GarmentState>,
    /// Pixels covered by the garment polygon (ignoring occlusion).
    pub garment_masks: Vec<Mask>,
    /// Pixels covered by any body part.
    pub body_masks: Vec<Mask>,
}

/// Renders the script into a dataset with exact keypoints and body dense-UV.
pub fn render_sequence(
    spec: &FigureSpec,
    script: &MotionScript,
    width: usize,
    height: usize,
) -> Result<SequenceDataset> {
    Ok(render_annotated(spec, script, width, height)?.dataset)
}

/// [`render_sequence`] that also returns garment states and coverage masks.
pub fn render_annotated(
    spec: &FigureSpec,
    script: &MotionScript,
    width: usize,
    height: usize,
) -> Result<RenderedSequence> {
    spec.validate()?;
    if width == 0 || height == 0 || script.fps == 0 {
        return Err(Error::config("render size and fps must be positive"));
    }
    let frame = Frame::new(spec, width, height);
    let scale = height as f64;
    let garment = simulate_garment(spec, script);
    let (back, front) = back_and_front(spec);
    let names = spec.joint_names();
    let mut frames = Vec::with_capacity(script.len());
    let mut garment_masks = Vec::with_capacity(script.len());
    let mut body_masks = Vec::with_capacity(script.len());
    for (pose, g) in script.frames.iter().zip(&garment) {
        let joints: Vec<Option<P2>> = spec
            .forward_kinematics(pose.root, &pose.angles)
            .into_iter()
            .map(|p| Some(frame.px(p)))
            .collect();
        let back_tris = body_tris(spec, &joints, scale, &back);
        let front_tris = body_tris(spec, &joints, scale, &front);
        let skirt = garment_tris(spec, g, &frame);
        let body: Vec<Tri> = back_tris.iter().chain(&front_tris).copied().collect();
        let layers: Vec<Tri> = back_tris
            .iter()
            .chain(&skirt)
            .chain(&front_tris)
            .copied()
            .collect();
        let keypoints = KeypointSet::new(
            names
                .iter()
                .zip(&joints)
                .map(|(n, p)| {
                    let p = p.expect("all joints placed");
                    Keypoint::new(n.clone(), p.0, p.1, 1.0)
                })
                .collect(),
        );
        frames.push(FrameRecord {
            image: render_color(spec, &layers, width, height),
            keypoints,
            uv: render_uv(spec, &body, width, height)?,
        });
        garment_masks.push(coverage_mask(&skirt, width, height));
        body_masks.push(coverage_mask(&body, width, height));
    }
    Ok(RenderedSequence {
        dataset: SequenceDataset::new(frames, script.fps, width, height)?,
        garment,
        garment_masks,
        body_masks,
    })
}

/// Body dense-UV map drawn from (possibly corrupted) keypoints, skipping
/// bones with a missing endpoint. Keypoint names must follow `spec`.
pub fn render_body_uv(
    spec: &FigureSpec,
    kp: &KeypointSet,
    width: usize,
    height: usize,
) -> Result<DenseUVMap> {
    let joints: Vec<Option<P2>> = spec
        .joints
        .iter()
        .map(|j| {
            kp.get(&j.name)
                .filter(|k| k.is_visible())
                .map(|k| (k.x, k.y))
        })
        .collect();
    let (back, front) = back_and_front(spec);
    let order: Vec<usize> = back.into_iter().chain(front).collect();
    let tris = body_tris(spec, &joints, height as f64, &order);
    render_uv(spec, &tris, width, height)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::ScriptParams;

    #[test]
    fn still_script_renders_identical_frames() {
        let f = FigureSpec::default();
        let seq = render_sequence(&f, &MotionScript::still(&f, 5, 24), 32, 32).unwrap();
        for fr in seq.frames() {
            assert_eq!(fr, seq.frame(0));
        }
    }

    #[test]
    fn same_seed_same_dataset() {
        let f = FigureSpec::default();
        let p = ScriptParams {
            frames: 6,
            ..ScriptParams::default()
        };
        let s = MotionScript::generate(&f, &p).unwrap();
        assert_eq!(
            render_sequence(&f, &s, 32, 32).unwrap(),
            render_sequence(&f, &s, 32, 32).unwrap()
        );
    }

    #[test]
    fn uv_map_invariants_hold() {
        let f = FigureSpec::default();
        let s = MotionScript::generate(&f, &ScriptParams { frames: 3, ..ScriptParams::default() }).unwrap();
        let seq = render_sequence(&f, &s, 48, 48).unwrap();
        for fr in seq.frames() {
            let d = fr.uv.data();
            let mut body = 0;
            for y in 0..48 {
                for x in 0..48 {
                    let i = d[[0, y, x]];
                    if i == 0.0 {
                        assert_eq!((d[[1, y, x]], d[[2, y, x]]), (0.0, 0.0));
                    } else {
                        body += 1;
                        let part = i * f.num_parts() as f32;
                        assert!((part - part.round()).abs() < 1e-4);
                    }
                }
            }
            assert!(body > 50);
            assert!(fr.image.iter().all(|v| (-1.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn keypoints_match_forward_kinematics_and_bone_quads() {
        let f = FigureSpec::default();
        let s = MotionScript::generate(&f, &ScriptParams { frames: 4, ..ScriptParams::default() }).unwrap();
        let seq = render_sequence(&f, &s, 64, 64).unwrap();
        for (t, fr) in seq.frames().iter().enumerate() {
            let fk = f.forward_kinematics(s.frames[t].root, &s.frames[t].angles);
            for (k, p) in fr.keypoints.joints.iter().zip(&fk) {
                let px = (0.5 * 64.0 + p.0 * 64.0, 0.5 * 64.0 + p.1 * 64.0);
                assert!((k.x - px.0).abs() < 1e-9 && (k.y - px.1).abs() < 1e-9);
            }
            // the body map is a pure function of the keypoints
            let rerendered = render_body_uv(&f, &fr.keypoints, 64, 64).unwrap();
            assert_eq!(&rerendered, &fr.uv);
        }
    }

    #[test]
    fn dropped_joints_remove_parts_from_uv() {
        let f = FigureSpec::default();
        let seq = render_sequence(&f, &MotionScript::still(&f, 1, 24), 64, 64).unwrap();
        let mut kp = seq.frame(0).keypoints.clone();
        let full = render_body_uv(&f, &kp, 64, 64).unwrap();
        let wrist = f.joint_index("r_wrist").unwrap();
        kp.joints[wrist].confidence = 0.0;
        let partial = render_body_uv(&f, &kp, 64, 64).unwrap();
        let count = |m: &DenseUVMap| m.data().iter().take(64 * 64).filter(|&&v| v > 0.0).count();
        assert!(count(&partial) < count(&full));
    }

    #[test]
    fn zero_height_figure_is_config_error() {
        let f = FigureSpec {
            height: 0.0,
            ..FigureSpec::default()
        };
        let s = MotionScript::still(&FigureSpec::default(), 2, 24);
        assert!(matches!(render_sequence(&f, &s, 16, 16), Err(Error::Config(_))));
    }

    #[test]
    fn garment_shape_depends_on_history() {
        // two scripts reach the same body state at frame 30 via different paths
        let f = FigureSpec::default();
        let mut a = MotionScript::still(&f, 31, 24);
        let b = MotionScript::constant_velocity(&f, 31, 24, 0.2);
        let end = b.frames[30].root;
        for fr in &mut a.frames {
            fr.root = end;
        }
        let ra = render_annotated(&f, &a, 48, 48).unwrap();
        let rb = render_annotated(&f, &b, 48, 48).unwrap();
        assert_eq!(ra.dataset.frame(30).keypoints, rb.dataset.frame(30).keypoints);
        assert_ne!(ra.garment[30].hem, rb.garment[30].hem);
        assert_ne!(ra.dataset.frame(30).image, rb.dataset.frame(30).image);
    }
}
