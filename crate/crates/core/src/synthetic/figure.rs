use serde::{Deserialize, Serialize};

use crate::data::body;
use crate::error::{Error, Result};

/// Procedural surface pattern, evaluated in part-local UV coordinates so it
/// moves with the part.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Texture {
    Plain,
    Grid,
    Glyphs,
    Noise,
}

impl Texture {
    /// Brightness factor in `[0.6, 1]`.
    pub fn factor(self, u: f64, v: f64) -> f64 {
        match self {
            Texture::Plain => 1.0,
            Texture::Grid => {
                let line = |t: f64, n: f64| {
                    let f = (t * n).fract();
                    f < 0.18 || f > 0.82
                };
                if line(u, 5.0) || line(v, 4.0) {
                    0.8
                } else {
                    1.0
                }
            }
            Texture::Glyphs => {
                // rows of blocky "characters" with gaps between them
                let (cu, cv) = ((u * 6.0).floor(), (v * 8.0).floor());
                let (fu, fv) = ((u * 6.0).fract(), (v * 8.0).fract());
                let on = hash2(cu as i64, (cv / 2.0).floor() as i64) > 0.35;
                if on && cv as i64 % 2 == 0 && fu > 0.15 && fu < 0.85 && fv > 0.2 {
                    0.65
                } else {
                    1.0
                }
            }
            Texture::Noise => 0.75 + 0.25 * hash2((u * 9.0).floor() as i64, (v * 9.0).floor() as i64),
        }
    }
}

fn hash2(a: i64, b: i64) -> f64 {
    let mut h = (a as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (b as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    h ^= h >> 31;
    h = h.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    h ^= h >> 29;
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// One joint of the body tree. The bone from `parent` to this joint carries
/// the joint's length, width and appearance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointSpec {
    pub name: String,
    pub parent: Option<usize>,
    /// Bone length in image-height units.
    pub length: f64,
    /// Bone direction in the rest pose (radians, image axes, y down).
    pub rest_angle: f64,
    /// Bone thickness in image-height units.
    pub width: f64,
    pub color: [f32; 3],
    pub texture: Texture,
}

/// Skirt hanging from the hips, simulated as independent damped springs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GarmentSpec {
    pub hem_nodes: usize,
    /// How far the waistband extends past each hip joint.
    pub waist_extension: f64,
    /// Hem rest position below the pelvis.
    pub drop: f64,
    /// Hem rest half-width around the pelvis.
    pub hem_half_width: f64,
    /// Spring stiffness, s^-2.
    pub stiffness: f64,
    /// Velocity damping, s^-1.
    pub damping: f64,
    pub substeps: usize,
    pub color: [f32; 3],
    pub texture: Texture,
}

impl Default for GarmentSpec {
    fn default() -> Self {
        Self {
            hem_nodes: 6,
            waist_extension: 0.025,
            drop: 0.2,
            hem_half_width: 0.13,
            stiffness: 40.0,
            damping: 6.0,
            substeps: 8,
            color: [1.0, 0.6, 0.1],
            texture: Texture::Grid,
        }
    }
}

/// Articulated figure: a joint tree rooted at the pelvis plus a garment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FigureSpec {
    /// Pelvis-to-head-top length; must equal the summed spine chain.
    pub height: f64,
    pub joints: Vec<JointSpec>,
    pub garment: GarmentSpec,
    pub background: [f32; 3],
    /// Rest pelvis position as fractions of image width and height.
    pub pelvis_anchor: (f64, f64),
    /// Bones drawn after the garment (the rest are drawn before it).
    pub front_parts: Vec<usize>,
}

const SKIN: [f32; 3] = [0.85, 0.65, 0.5];
const SHIRT: [f32; 3] = [0.2, 0.35, 0.8];
const TROUSERS: [f32; 3] = [0.25, 0.25, 0.3];

impl Default for FigureSpec {
    fn default() -> Self {
        use std::f64::consts::{FRAC_PI_2, PI};
        let j = |name: &str, parent: usize, length: f64, angle: f64, width: f64, color, texture| {
            JointSpec {
                name: name.to_string(),
                parent: Some(parent),
                length,
                rest_angle: angle,
                width,
                color,
                texture,
            }
        };
        let joints = vec![
            JointSpec {
                name: "pelvis".into(),
                parent: None,
                length: 0.0,
                rest_angle: 0.0,
                width: 0.0,
                color: SHIRT,
                texture: Texture::Plain,
            },
            j("neck", 0, 0.28, -FRAC_PI_2, 0.12, SHIRT, Texture::Glyphs),
            j("head", 1, 0.10, -FRAC_PI_2, 0.075, SKIN, Texture::Plain),
            j("r_shoulder", 1, 0.07, PI, 0.045, SHIRT, Texture::Plain),
            j("r_elbow", 3, 0.12, FRAC_PI_2 + 0.25, 0.04, SKIN, Texture::Plain),
            j("r_wrist", 4, 0.11, FRAC_PI_2 + 0.1, 0.035, SKIN, Texture::Plain),
            j("l_shoulder", 1, 0.07, 0.0, 0.045, SHIRT, Texture::Plain),
            j("l_elbow", 6, 0.12, FRAC_PI_2 - 0.25, 0.04, SKIN, Texture::Plain),
            j("l_wrist", 7, 0.11, FRAC_PI_2 - 0.1, 0.035, SKIN, Texture::Plain),
            j("r_hip", 0, 0.05, PI, 0.06, TROUSERS, Texture::Plain),
            j("r_knee", 9, 0.19, FRAC_PI_2 + 0.05, 0.055, TROUSERS, Texture::Plain),
            j("r_ankle", 10, 0.18, FRAC_PI_2, 0.045, TROUSERS, Texture::Plain),
            j("l_hip", 0, 0.05, 0.0, 0.06, TROUSERS, Texture::Plain),
            j("l_knee", 12, 0.19, FRAC_PI_2 - 0.05, 0.055, TROUSERS, Texture::Plain),
            j("l_ankle", 13, 0.18, FRAC_PI_2, 0.045, TROUSERS, Texture::Plain),
        ];
        Self {
            height: 0.38,
            joints,
            garment: GarmentSpec::default(),
            background: [0.35, 0.4, 0.45],
            pelvis_anchor: (0.5, 0.5),
            front_parts: vec![1, 2, 3, 4, 5, 6, 7, 8],
        }
    }
}

impl FigureSpec {
    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.joints.iter().position(|j| j.name == name)
    }

    pub fn joint_names(&self) -> Vec<String> {
        self.joints.iter().map(|j| j.name.clone()).collect()
    }

    /// Number of dense-UV body parts (one per bone).
    pub fn num_parts(&self) -> usize {
        self.joints.len() - 1
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.height > 0.0) {
            return Err(Error::config(format!(
                "figure height must be positive, got {}",
                self.height
            )));
        }
        match self.joints.first() {
            Some(j) if j.name == "pelvis" && j.parent.is_none() => {}
            _ => return Err(Error::config("joint 0 must be the parentless pelvis")),
        }
        for (i, j) in self.joints.iter().enumerate().skip(1) {
            match j.parent {
                Some(p) if p < i => {}
                _ => {
                    return Err(Error::config(format!(
                        "joint '{}' must have a parent listed before it",
                        j.name
                    )))
                }
            }
            if !(j.length > 0.0) || j.width < 0.0 {
                return Err(Error::config(format!("joint '{}' has degenerate geometry", j.name)));
            }
        }
        let head = self
            .joint_index("head")
            .ok_or_else(|| Error::config("figure has no 'head' joint"))?;
        let mut chain = 0.0;
        let mut k = head;
        while let Some(p) = self.joints[k].parent {
            chain += self.joints[k].length;
            k = p;
        }
        if (chain - self.height).abs() > 1e-9 {
            return Err(Error::config(format!(
                "spine-to-head chain sums to {chain}, declared height is {}",
                self.height
            )));
        }
        for name in body::ANKLES.iter().chain(&["r_hip", "l_hip"]) {
            if self.joint_index(name).is_none() {
                return Err(Error::config(format!("figure lacks joint '{name}'")));
            }
        }
        if self.garment.hem_nodes < 2 || self.garment.substeps == 0 {
            return Err(Error::config("garment needs at least 2 hem nodes and 1 substep"));
        }
        Ok(())
    }

    /// Joint positions in image-height units for a pelvis offset and per-joint
    /// angle deltas (a delta rotates the joint's bone and its whole subtree).
    pub fn forward_kinematics(&self, root: (f64, f64), deltas: &[f64]) -> Vec<(f64, f64)> {
        let n = self.joints.len();
        let mut pos = vec![(0.0, 0.0); n];
        let mut acc = vec![0.0; n];
        pos[0] = root;
        acc[0] = deltas.first().copied().unwrap_or(0.0);
        for i in 1..n {
            let j = &self.joints[i];
            let p = j.parent.expect("validated tree");
            acc[i] = acc[p] + deltas.get(i).copied().unwrap_or(0.0);
            let a = j.rest_angle + acc[i];
            pos[i] = (pos[p].0 + j.length * a.cos(), pos[p].1 + j.length * a.sin());
        }
        pos
    }
}
