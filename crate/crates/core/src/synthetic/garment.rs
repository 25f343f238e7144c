use super::figure::FigureSpec;
use super::script::MotionScript;

type P2 = (f64, f64);

/// Garment polygon of one frame, in the same image-height units as
/// [`FigureSpec::forward_kinematics`].
#[derive(Clone, Debug, PartialEq)]
pub struct GarmentState {
    /// Waistband points from the right hip side to the left.
    pub waist: Vec<P2>,
    /// Hem particles, same order as `waist`.
    pub hem: Vec<P2>,
    pub velocity: Vec<P2>,
}

impl GarmentState {
    /// Closed outline: waist left-to-right, then hem back.
    pub fn outline(&self) -> Vec<P2> {
        self.waist
            .iter()
            .copied()
            .chain(self.hem.iter().rev().copied())
            .collect()
    }

    /// Area centroid of the outline.
    pub fn centroid(&self) -> P2 {
        polygon_centroid(&self.outline())
    }
}

pub fn polygon_centroid(pts: &[P2]) -> P2 {
    let mut a = 0.0;
    let (mut cx, mut cy) = (0.0, 0.0);
    for i in 0..pts.len() {
        let (x0, y0) = pts[i];
        let (x1, y1) = pts[(i + 1) % pts.len()];
        let cross = x0 * y1 - x1 * y0;
        a += cross;
        cx += (x0 + x1) * cross;
        cy += (y0 + y1) * cross;
    }
    if a.abs() < 1e-15 {
        let n = pts.len() as f64;
        return (
            pts.iter().map(|p| p.0).sum::<f64>() / n,
            pts.iter().map(|p| p.1).sum::<f64>() / n,
        );
    }
    (cx / (3.0 * a), cy / (3.0 * a))
}

fn lerp(a: P2, b: P2, t: f64) -> P2 {
    (a.0 + (b.0 - a.0) * t, a.1 + (b.1 - a.1) * t)
}

struct Anchors {
    waist: Vec<P2>,
    rest: Vec<P2>,
}

fn anchors(spec: &FigureSpec, joints: &[P2]) -> Anchors {
    let g = &spec.garment;
    let pelvis = joints[0];
    let hip = |name: &str| {
        let h = joints[spec.joint_index(name).expect("validated figure")];
        let (dx, dy) = (h.0 - pelvis.0, h.1 - pelvis.1);
        let len = (dx * dx + dy * dy).sqrt().max(1e-12);
        (h.0 + dx / len * g.waist_extension, h.1 + dy / len * g.waist_extension)
    };
    let (r, l) = (hip("r_hip"), hip("l_hip"));
    let n = g.hem_nodes;
    let t = |j: usize| j as f64 / (n - 1) as f64;
    Anchors {
        waist: (0..n).map(|j| lerp(r, l, t(j))).collect(),
        rest: (0..n)
            .map(|j| {
                (
                    pelvis.0 - g.hem_half_width + 2.0 * g.hem_half_width * t(j),
                    pelvis.1 + g.drop,
                )
            })
            .collect(),
    }
}

/// Runs the hem springs over the whole script.
///
/// Each hem particle obeys `a = -k (p - rest) - c v`, where `rest` follows
/// the pelvis and damping acts on the absolute velocity. A body moving at a
/// steady speed therefore leaves the hem `c v / k` behind it, and the hem
/// shape at any frame depends on the velocity history.
pub fn simulate_garment(spec: &FigureSpec, script: &MotionScript) -> Vec<GarmentState> {
    let g = &spec.garment;
    let poses: Vec<Vec<P2>> = script
        .frames
        .iter()
        .map(|f| spec.forward_kinematics(f.root, &f.angles))
        .collect();
    let mut out = Vec::with_capacity(poses.len());
    let Some(first) = poses.first() else {
        return out;
    };
    let a0 = anchors(spec, first);
    let mut pos = a0.rest.clone();
    let mut vel = vec![(0.0, 0.0); pos.len()];
    out.push(GarmentState {
        waist: a0.waist,
        hem: pos.clone(),
        velocity: vel.clone(),
    });
    let dt = 1.0 / (script.fps as f64 * g.substeps as f64);
    for t in 1..poses.len() {
        let prev = anchors(spec, &poses[t - 1]).rest;
        let next = anchors(spec, &poses[t]);
        for s in 0..g.substeps {
            let w = (s + 1) as f64 / g.substeps as f64;
            for j in 0..pos.len() {
                let rest = lerp(prev[j], next.rest[j], w);
                let ax = -g.stiffness * (pos[j].0 - rest.0) - g.damping * vel[j].0;
                let ay = -g.stiffness * (pos[j].1 - rest.1) - g.damping * vel[j].1;
                vel[j] = (vel[j].0 + dt * ax, vel[j].1 + dt * ay);
                pos[j] = (pos[j].0 + dt * vel[j].0, pos[j].1 + dt * vel[j].1);
            }
        }
        out.push(GarmentState {
            waist: next.waist,
            hem: pos.clone(),
            velocity: vel.clone(),
        });
    }
    out
}
