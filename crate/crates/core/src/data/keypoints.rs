use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// One detected landmark in pixel coordinates. Pixel `(col, row)` has its
/// center at `(x, y) = (col, row)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    pub name: String,
    pub x: f64,
    pub y: f64,
    /// Detection confidence in `[0, 1]`. Zero marks a missing detection.
    #[serde(rename = "c")]
    pub confidence: f64,
}

impl Keypoint {
    pub fn new(name: impl Into<String>, x: f64, y: f64, confidence: f64) -> Self {
        Self {
            name: name.into(),
            x,
            y,
            confidence,
        }
    }

    pub fn is_visible(&self) -> bool {
        self.confidence > 0.0
    }
}

/// Skeleton joints plus optional face and hand landmarks of one frame.
///
/// Joint order is fixed across a dataset; lookups by name are provided for
/// configuration-driven code such as bone definitions.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct KeypointSet {
    pub joints: Vec<Keypoint>,
    #[serde(default)]
    pub face: Vec<Keypoint>,
    #[serde(default)]
    pub hands: Vec<Keypoint>,
}

impl KeypointSet {
    pub fn new(joints: Vec<Keypoint>) -> Self {
        Self {
            joints,
            face: Vec::new(),
            hands: Vec::new(),
        }
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.joints.iter().position(|j| j.name == name)
    }

    pub fn get(&self, name: &str) -> Option<&Keypoint> {
        self.joints.iter().find(|j| j.name == name)
    }

    pub fn visible(&self) -> impl Iterator<Item = &Keypoint> {
        self.joints.iter().filter(|j| j.is_visible())
    }

    pub fn visible_count(&self) -> usize {
        self.visible().count()
    }

    /// True when no joint or landmark has positive confidence.
    pub fn is_empty(&self) -> bool {
        self.joints
            .iter()
            .chain(&self.face)
            .chain(&self.hands)
            .all(|k| !k.is_visible())
    }

    /// `(min_x, min_y, max_x, max_y)` over visible joints.
    pub fn bounds(&self) -> Option<(f64, f64, f64, f64)> {
        self.visible().fold(None, |acc, k| {
            Some(match acc {
                None => (k.x, k.y, k.x, k.y),
                Some((a, b, c, d)) => (a.min(k.x), b.min(k.y), c.max(k.x), d.max(k.y)),
            })
        })
    }

    /// Vertical extent of the visible joints.
    pub fn height(&self) -> Option<f64> {
        self.bounds().map(|(_, y0, _, y1)| y1 - y0)
    }

    /// Horizontal extent of the visible joints.
    pub fn width(&self) -> Option<f64> {
        self.bounds().map(|(x0, _, x1, _)| x1 - x0)
    }

    /// Applies `f` to every joint and landmark position; confidences are kept.
    pub fn map_positions(&self, mut f: impl FnMut(f64, f64) -> (f64, f64)) -> Self {
        let mut map = |ks: &[Keypoint]| {
            ks.iter()
                .map(|k| {
                    let (x, y) = f(k.x, k.y);
                    Keypoint { x, y, ..k.clone() }
                })
                .collect()
        };
        Self {
            joints: map(&self.joints),
            face: map(&self.face),
            hands: map(&self.hands),
        }
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json_string()?)?;
        Ok(())
    }
}

/// Joint layout of the built-in body model (used by the synthetic dancer and
/// as the default rasterization skeleton).
pub mod body {
    pub const JOINTS: [&str; 15] = [
        "pelvis",
        "neck",
        "head",
        "r_shoulder",
        "r_elbow",
        "r_wrist",
        "l_shoulder",
        "l_elbow",
        "l_wrist",
        "r_hip",
        "r_knee",
        "r_ankle",
        "l_hip",
        "l_knee",
        "l_ankle",
    ];

    pub const BONES: [(&str, &str); 14] = [
        ("pelvis", "neck"),
        ("neck", "head"),
        ("neck", "r_shoulder"),
        ("r_shoulder", "r_elbow"),
        ("r_elbow", "r_wrist"),
        ("neck", "l_shoulder"),
        ("l_shoulder", "l_elbow"),
        ("l_elbow", "l_wrist"),
        ("pelvis", "r_hip"),
        ("r_hip", "r_knee"),
        ("r_knee", "r_ankle"),
        ("pelvis", "l_hip"),
        ("l_hip", "l_knee"),
        ("l_knee", "l_ankle"),
    ];

    /// Left/right limb chains that a mislabeled detection can swap.
    pub const LIMB_PAIRS: [[(&str, &str); 3]; 2] = [
        [
            ("r_shoulder", "l_shoulder"),
            ("r_elbow", "l_elbow"),
            ("r_wrist", "l_wrist"),
        ],
        [("r_hip", "l_hip"), ("r_knee", "l_knee"), ("r_ankle", "l_ankle")],
    ];

    pub const ANKLES: [&str; 2] = ["r_ankle", "l_ankle"];
}
