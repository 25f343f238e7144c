//! Motion transfer from a source actor's poses to the trained target actor.

use serde::{Deserialize, Serialize};

use crate::data::{body, DenseUVMap, KeypointSet, SequenceDataset, SplitTag};
use crate::error::{Error, Result};
use crate::imaging::Image;

/// Median skeleton extent and ground line of a set of frames, in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkeletonStats {
    pub height: f64,
    pub width: f64,
    /// Median y of the lowest visible ankle.
    pub ground_y: f64,
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

/// Largest y among the visible ankles.
pub fn lowest_ankle(kp: &KeypointSet) -> Option<f64> {
    body::ANKLES
        .iter()
        .filter_map(|n| kp.get(n).filter(|k| k.is_visible()).map(|k| k.y))
        .max_by(f64::total_cmp)
}

impl SkeletonStats {
    pub fn from_keypoints<'a>(frames: impl IntoIterator<Item = &'a KeypointSet>) -> Result<Self> {
        let (mut hs, mut ws, mut gs) = (Vec::new(), Vec::new(), Vec::new());
        for kp in frames {
            if let Some((x0, y0, x1, y1)) = kp.bounds() {
                hs.push(y1 - y0);
                ws.push(x1 - x0);
            }
            gs.extend(lowest_ankle(kp));
        }
        match (median(hs), median(ws), median(gs)) {
            (Some(height), Some(width), Some(ground_y)) if height > 0.0 => Ok(Self {
                height,
                width,
                ground_y,
            }),
            _ => Err(Error::config(
                "skeleton statistics need frames with visible joints, ankles and non-zero height",
            )),
        }
    }

    /// Statistics of the train split (every frame when the sequence is untagged).
    pub fn from_dataset(seq: &SequenceDataset) -> Result<Self> {
        let idx = match seq.split() {
            Some(_) => seq.indices(SplitTag::Train),
            None => (0..seq.len()).collect(),
        };
        Self::from_keypoints(idx.iter().map(|&i| &seq.frame(i).keypoints))
    }
}

/// Per-axis scale about a pivot, then a translation: `x' = px + sx (x - px)`,
/// `y' = gy + sy (y - py)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignTransform {
    pub sx: f64,
    pub sy: f64,
    pub pivot_x: f64,
    pub pivot_y: f64,
    pub target_y: f64,
}

impl AlignTransform {
    pub fn identity() -> Self {
        Self {
            sx: 1.0,
            sy: 1.0,
            pivot_x: 0.0,
            pivot_y: 0.0,
            target_y: 0.0,
        }
    }

    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        (
            self.pivot_x + self.sx * (x - self.pivot_x),
            self.target_y + self.sy * (y - self.pivot_y),
        )
    }

    pub fn invert(&self, x: f64, y: f64) -> (f64, f64) {
        (
            self.pivot_x + (x - self.pivot_x) / self.sx,
            self.pivot_y + (y - self.target_y) / self.sy,
        )
    }

    pub fn keypoints(&self, kp: &KeypointSet) -> KeypointSet {
        kp.map_positions(|x, y| self.apply(x, y))
    }

    /// Resamples a dense-UV map through the transform (nearest neighbour).
    pub fn warp_uv(&self, uv: &DenseUVMap) -> DenseUVMap {
        let src = uv.data();
        let (c, h, w) = src.dim();
        let out = Image::from_shape_fn((c, h, w), |(ch, r, col)| {
            let (x, y) = self.invert(col as f64, r as f64);
            let (xi, yi) = (x.round(), y.round());
            if xi < 0.0 || yi < 0.0 || xi >= w as f64 || yi >= h as f64 {
                0.0
            } else {
                src[[ch, yi as usize, xi as usize]]
            }
        });
        DenseUVMap::new(out).expect("resampling keeps values in range")
    }
}

/// Alignment result; `height_only` marks the ankle-less fallback.
#[derive(Clone, Debug, PartialEq)]
pub struct Aligned {
    pub keypoints: KeypointSet,
    pub transform: AlignTransform,
    pub height_only: bool,
}

fn frame_transform(kp: &KeypointSet, target: &SkeletonStats, ground_y: f64) -> Result<(AlignTransform, bool)> {
    let (x0, y0, x1, y1) = kp
        .bounds()
        .ok_or_else(|| Error::config("source skeleton has no visible joints"))?;
    let (h, w) = (y1 - y0, x1 - x0);
    if !(h > 0.0) {
        return Err(Error::config("source skeleton has zero height"));
    }
    let sy = target.height / h;
    let pivot_x = 0.5 * (x0 + x1);
    Ok(match lowest_ankle(kp) {
        Some(ankle) => (
            AlignTransform {
                sx: if w > 0.0 { target.width / w } else { 1.0 },
                sy,
                pivot_x,
                pivot_y: ankle,
                target_y: ground_y,
            },
            false,
        ),
        // no ankle to stand on the ground: scale uniformly about the lowest joint
        None => (
            AlignTransform {
                sx: sy,
                sy,
                pivot_x,
                pivot_y: y1,
                target_y: y1,
            },
            true,
        ),
    })
}

/// Scales the skeleton to the target's median height and width and moves it
/// so the lowest ankle sits on `ground_y`. Confidences are preserved.
pub fn align_skeleton(source: &KeypointSet, target: &SkeletonStats, ground_y: f64) -> Result<Aligned> {
    let (transform, height_only) = frame_transform(source, target, ground_y)?;
    Ok(Aligned {
        keypoints: transform.keypoints(source),
        transform,
        height_only,
    })
}

/// One transform for the whole sequence, built from the source's own median
/// statistics; `per_frame` aligns every frame separately instead.
pub fn align_sequence(
    source: &[KeypointSet],
    target: &SkeletonStats,
    ground_y: f64,
    per_frame: bool,
) -> Result<Vec<Aligned>> {
    if per_frame {
        return source.iter().map(|kp| align_skeleton(kp, target, ground_y)).collect();
    }
    let stats = SkeletonStats::from_keypoints(source)?;
    let centers: Vec<f64> = source
        .iter()
        .filter_map(|k| k.bounds().map(|(x0, _, x1, _)| 0.5 * (x0 + x1)))
        .collect();
    let transform = AlignTransform {
        sx: if stats.width > 0.0 { target.width / stats.width } else { 1.0 },
        sy: target.height / stats.height,
        pivot_x: median(centers).unwrap_or(0.0),
        pivot_y: stats.ground_y,
        target_y: ground_y,
    };
    Ok(source
        .iter()
        .map(|kp| Aligned {
            keypoints: transform.keypoints(kp),
            transform,
            height_only: false,
        })
        .collect())
}

/// Aligned copy of a source sequence: keypoints and dense-UV maps go through
/// the same transform; images are kept.
pub fn align_dataset(
    source: &SequenceDataset,
    target: &SkeletonStats,
    ground_y: f64,
    per_frame: bool,
) -> Result<(SequenceDataset, Vec<Aligned>)> {
    let kps: Vec<_> = source.frames().iter().map(|f| f.keypoints.clone()).collect();
    let aligned = align_sequence(&kps, target, ground_y, per_frame)?;
    let mut out = source.clone();
    for (f, a) in out.frames_mut().iter_mut().zip(&aligned) {
        f.uv = a.transform.warp_uv(&f.uv);
        f.keypoints = a.keypoints.clone();
    }
    Ok((out, aligned))
}

/// Root-mean-square joint distance over joints visible in both sets,
/// matched by name; `None` when they share no visible joint.
pub fn keypoint_distance(a: &KeypointSet, b: &KeypointSet) -> Option<f64> {
    let mut acc = 0.0;
    let mut n = 0usize;
    for ka in a.visible() {
        if let Some(kb) = b.get(&ka.name).filter(|k| k.is_visible()) {
            acc += (ka.x - kb.x).powi(2) + (ka.y - kb.y).powi(2);
            n += 1;
        }
    }
    (n > 0).then(|| (acc / n as f64).sqrt())
}

/// Train frame whose keypoints are closest to the query; ties go to the
/// lower index.
pub fn nearest_neighbor_baseline(query: &KeypointSet, train: &SequenceDataset) -> Result<usize> {
    let idx = match train.split() {
        Some(_) => train.indices(SplitTag::Train),
        None => (0..train.len()).collect(),
    };
    if idx.is_empty() {
        return Err(Error::config("nearest-neighbour search needs a non-empty train split"));
    }
    let mut best: Option<(usize, f64)> = None;
    for i in idx {
        if let Some(d) = keypoint_distance(query, &train.frame(i).keypoints) {
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((i, d));
            }
        }
    }
    best.map(|(i, _)| i)
        .ok_or_else(|| Error::NoMatch("query shares no visible joint with any train frame".into()))
}

/// Mean per-pair joint displacement after scaling each skeleton to height 1.
/// Pairs where either frame has no visible extent are dropped.
pub fn motion_speed_of(frames: &[KeypointSet]) -> Result<f64> {
    if frames.len() < 2 {
        return Err(Error::config("motion speed needs at least 2 frames"));
    }
    let norm = |kp: &KeypointSet| kp.height().filter(|&h| h > 0.0);
    let mut total = 0.0;
    let mut pairs = 0usize;
    for w in frames.windows(2) {
        let (Some(ha), Some(hb)) = (norm(&w[0]), norm(&w[1])) else { continue };
        let mut acc = 0.0;
        let mut n = 0usize;
        for ka in w[0].visible() {
            if let Some(kb) = w[1].get(&ka.name).filter(|k| k.is_visible()) {
                acc += (ka.x / ha - kb.x / hb).hypot(ka.y / ha - kb.y / hb);
                n += 1;
            }
        }
        if n > 0 {
            total += acc / n as f64;
            pairs += 1;
        }
    }
    if pairs == 0 {
        return Err(Error::config("no frame pair has joints visible in both frames"));
    }
    Ok(total / pairs as f64)
}

pub fn motion_speed(seq: &SequenceDataset) -> Result<f64> {
    let kps: Vec<_> = seq.frames().iter().map(|f| f.keypoints.clone()).collect();
    motion_speed_of(&kps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{FrameRecord, Keypoint};

    fn keypoint_dataset(kps: Vec<KeypointSet>, w: usize, h: usize) -> SequenceDataset {
        let frames = kps
            .into_iter()
            .map(|keypoints| FrameRecord {
                image: Image::zeros((3, h, w)),
                keypoints,
                uv: DenseUVMap::zeros(w, h),
            })
            .collect();
        SequenceDataset::new(frames, 24, w, h).unwrap()
    }

    fn skeleton(scale: f64, dx: f64, dy: f64) -> KeypointSet {
        let pts = [
            (0.0, 0.0),
            (0.0, -10.0),
            (0.0, -14.0),
            (-3.0, -10.0),
            (-5.0, -6.0),
            (-6.0, -2.0),
            (3.0, -10.0),
            (5.0, -6.0),
            (6.0, -2.0),
            (-2.0, 0.0),
            (-2.5, 6.0),
            (-2.5, 12.0),
            (2.0, 0.0),
            (2.5, 6.0),
            (2.0, 11.0),
        ];
        KeypointSet::new(
            body::JOINTS
                .iter()
                .zip(pts)
                .map(|(n, (x, y))| Keypoint::new(*n, dx + scale * x, dy + scale * y, 0.9))
                .collect(),
        )
    }

    #[test]
    fn matching_source_is_unchanged() {
        let kp = skeleton(1.0, 30.0, 40.0);
        let stats = SkeletonStats::from_keypoints([&kp]).unwrap();
        let a = align_skeleton(&kp, &stats, stats.ground_y).unwrap();
        assert!(!a.height_only);
        for (p, q) in a.keypoints.joints.iter().zip(&kp.joints) {
            assert!((p.x - q.x).abs() < 1e-6 && (p.y - q.y).abs() < 1e-6);
            assert_eq!(p.confidence, q.confidence);
        }
    }

    #[test]
    fn double_size_source_is_halved() {
        let target = SkeletonStats::from_keypoints([&skeleton(1.0, 0.0, 0.0)]).unwrap();
        let src = skeleton(2.0, 10.0, 5.0);
        let a = align_skeleton(&src, &target, 50.0).unwrap();
        for (u, v) in body::BONES {
            let len = |k: &KeypointSet| {
                let (p, q) = (k.get(u).unwrap(), k.get(v).unwrap());
                (p.x - q.x).hypot(p.y - q.y)
            };
            assert!((len(&a.keypoints) - 0.5 * len(&src)).abs() < 1e-9, "{u}-{v}");
        }
        assert!((lowest_ankle(&a.keypoints).unwrap() - 50.0).abs() < 1e-9);
    }

    #[test]
    fn missing_ankles_fall_back_to_height_only() {
        let target = SkeletonStats::from_keypoints([&skeleton(1.0, 0.0, 0.0)]).unwrap();
        let mut src = skeleton(2.0, 0.0, 0.0);
        for n in body::ANKLES {
            let i = src.index_of(n).unwrap();
            src.joints[i].confidence = 0.0;
        }
        let a = align_skeleton(&src, &target, 50.0).unwrap();
        assert!(a.height_only);
        assert_eq!(a.transform.sx, a.transform.sy);
    }

    #[test]
    fn global_alignment_shares_one_transform() {
        let target = SkeletonStats::from_keypoints([&skeleton(1.0, 0.0, 0.0)]).unwrap();
        let src: Vec<_> = (0..5).map(|i| skeleton(2.0, i as f64, 0.0)).collect();
        let out = align_sequence(&src, &target, 40.0, false).unwrap();
        assert!(out.windows(2).all(|w| w[0].transform == w[1].transform));
        assert!((lowest_ankle(&out[2].keypoints).unwrap() - 40.0).abs() < 1e-9);
    }

    #[test]
    fn equidistant_frames_pick_lower_index() {
        let frames: Vec<_> = (0..12)
            .map(|i| {
                let dx = match i {
                    5 => -1.0,
                    9 => 1.0,
                    _ => 50.0,
                };
                skeleton(1.0, dx, 0.0)
            })
            .collect();
        let seq = keypoint_dataset(frames, 32, 32);
        assert_eq!(nearest_neighbor_baseline(&skeleton(1.0, 0.0, 0.0), &seq).unwrap(), 5);
        assert_eq!(nearest_neighbor_baseline(&skeleton(1.0, 50.0, 0.0), &seq).unwrap(), 0);
    }

    #[test]
    fn disjoint_joints_are_no_match() {
        let seq = keypoint_dataset(vec![skeleton(1.0, 0.0, 0.0)], 8, 8);
        let q = KeypointSet::new(vec![Keypoint::new("tail", 0.0, 0.0, 1.0)]);
        assert!(matches!(nearest_neighbor_baseline(&q, &seq), Err(Error::NoMatch(_))));
    }

    #[test]
    fn constant_displacement_speed() {
        // height is 26 px, so a 0.26 px shift is 0.01 normalized
        let a = skeleton(1.0, 0.0, 0.0);
        let b = skeleton(1.0, 0.26, 0.0);
        assert!((motion_speed_of(&[a.clone(), b]).unwrap() - 0.01).abs() < 1e-12);
        assert_eq!(motion_speed_of(&[a.clone(), a.clone(), a]).unwrap(), 0.0);
    }

    #[test]
    fn empty_frames_are_skipped() {
        let a = skeleton(1.0, 0.0, 0.0);
        let b = skeleton(1.0, 0.26, 0.0);
        let empty = KeypointSet::new(vec![]);
        let s = motion_speed_of(&[a, b, empty]).unwrap();
        assert!((s - 0.01).abs() < 1e-12);
    }
}
