use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::figure::FigureSpec;
use crate::error::{Error, Result};

/// Body state of one frame: pelvis offset from its anchor (image-height
/// units) and per-joint angle deltas in radians.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FramePose {
    pub root: (f64, f64),
    pub angles: Vec<f64>,
}

/// Per-frame body states at a fixed frame rate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotionScript {
    pub fps: u32,
    pub frames: Vec<FramePose>,
}

/// Knobs of the procedural dance generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScriptParams {
    pub frames: usize,
    pub fps: u32,
    /// Peak horizontal pelvis excursion.
    pub sway_amplitude: f64,
    /// Frames per constant-speed sway stroke.
    pub sway_stroke: usize,
    /// Phase shift of the sway, in frames.
    pub sway_phase: usize,
    pub bob_amplitude: f64,
    pub arm_swing: f64,
    pub leg_swing: f64,
    pub lean: f64,
    /// Period of limb oscillations, in frames.
    pub limb_period: f64,
    /// Per-frame innovation of the mean-reverting angle walk.
    pub walk_sigma: f64,
    /// Every joint delta is clamped to `[-angle_limit, angle_limit]`.
    pub angle_limit: f64,
    pub seed: u64,
}

impl Default for ScriptParams {
    fn default() -> Self {
        Self {
            frames: 200,
            fps: 24,
            sway_amplitude: 0.3,
            sway_stroke: 48,
            sway_phase: 26,
            bob_amplitude: 0.01,
            arm_swing: 0.5,
            leg_swing: 0.18,
            lean: 0.08,
            limb_period: 24.0,
            walk_sigma: 0.01,
            angle_limit: 1.2,
            seed: 7,
        }
    }
}

/// Triangle wave in `[-1, 1]` with turning points at integer `s`.
fn triangle(s: f64) -> f64 {
    let m = s.rem_euclid(2.0);
    1.0 - 2.0 * (m - 1.0).abs()
}

impl MotionScript {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Seeded composition of a triangle-wave sway, sinusoidal limb swings and
    /// a small mean-reverting random walk on the arm angles.
    pub fn generate(spec: &FigureSpec, p: &ScriptParams) -> Result<Self> {
        if p.sway_stroke == 0 || p.fps == 0 || !(p.limb_period > 0.0) {
            return Err(Error::config("script periods and fps must be positive"));
        }
        let n = spec.joints.len();
        let idx = |name: &str| spec.joint_index(name);
        let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
        let walk = Normal::new(0.0, p.walk_sigma.max(0.0))
            .map_err(|e| Error::config(e.to_string()))?;
        let mut drift = [0.0f64; 2];
        let tau = std::f64::consts::TAU;
        let frames = (0..p.frames)
            .map(|t| {
                let tf = t as f64;
                let s = (tf + p.sway_phase as f64) / p.sway_stroke as f64;
                let x = p.sway_amplitude * triangle(s);
                let y = p.bob_amplitude * (tau * tf / p.limb_period).sin();
                let phase = tau * tf / p.limb_period;
                for d in &mut drift {
                    *d = 0.9 * *d + walk.sample(&mut rng);
                }
                let mut angles = vec![0.0; n];
                let mut set = |name: &str, v: f64| {
                    if let Some(i) = idx(name) {
                        angles[i] = v.clamp(-p.angle_limit, p.angle_limit);
                    }
                };
                set("neck", p.lean * (tau * s / 2.0).sin());
                set("r_elbow", p.arm_swing * phase.sin() + drift[0]);
                set("l_elbow", -p.arm_swing * phase.sin() + drift[1]);
                set("r_wrist", 0.5 * p.arm_swing * (phase + 0.8).sin());
                set("l_wrist", -0.5 * p.arm_swing * (phase + 0.8).sin());
                set("r_knee", p.leg_swing * phase.sin());
                set("l_knee", -p.leg_swing * phase.sin());
                set("r_ankle", 0.5 * p.leg_swing * (phase - 0.6).sin().max(0.0));
                set("l_ankle", -0.5 * p.leg_swing * (phase - 0.6).sin().max(0.0));
                FramePose {
                    root: (x, y),
                    angles,
                }
            })
            .collect();
        Ok(Self { fps: p.fps, frames })
    }

    /// Every frame in the rest pose.
    pub fn still(spec: &FigureSpec, frames: usize, fps: u32) -> Self {
        Self::constant_velocity(spec, frames, fps, 0.0)
    }

    /// Rest pose translated horizontally at `vx` image-height units per second.
    pub fn constant_velocity(spec: &FigureSpec, frames: usize, fps: u32, vx: f64) -> Self {
        let n = spec.joints.len();
        Self {
            fps,
            frames: (0..frames)
                .map(|t| FramePose {
                    root: (vx * t as f64 / fps as f64, 0.0),
                    angles: vec![0.0; n],
                })
                .collect(),
        }
    }
}
