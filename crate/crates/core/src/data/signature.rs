use ndarray::{s, ArrayView3, Axis};
use serde::{Deserialize, Serialize};

use super::dataset::SequenceDataset;
use super::keypoints::KeypointSet;
use super::raster::{rasterize_keypoints, RasterStyle};
use crate::error::{Error, Result};
use crate::imaging::{concat_channels, normalize_unit, Image};

/// Past-frame offsets of the motion window, nearest first.
pub const DEFAULT_OFFSETS: [usize; 10] = [1, 2, 3, 4, 6, 8, 10, 13, 16, 20];

/// Motion-window lengths of the window ablation, in frames.
pub const WINDOW_PRESETS: [usize; 5] = [0, 5, 10, 20, 40];

/// Offsets sampled for a named window length; 0 means no motion signature.
pub fn window_preset(frames: usize) -> Result<Vec<usize>> {
    match frames {
        0 => Ok(Vec::new()),
        5 => Ok(vec![1, 2, 3, 4]),
        10 => Ok(vec![1, 2, 3, 4, 6, 8, 10]),
        20 => Ok(DEFAULT_OFFSETS.to_vec()),
        40 => Ok(vec![1, 2, 3, 4, 6, 8, 10, 13, 16, 20, 24, 29, 34, 40, 47, 56]),
        other => Err(Error::config(format!(
            "no motion-window preset for {other} frames (choose from {WINDOW_PRESETS:?})"
        ))),
    }
}

/// Channels of one pose signature: 3 dense-UV + 3 keypoint rendering.
pub const POSE_CHANNELS: usize = 6;

/// Dense body correspondence map: part index, U, V, each in `[0, 1]`.
/// Background pixels are exactly zero in all channels.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseUVMap {
    data: Image,
}

impl DenseUVMap {
    pub fn new(data: Image) -> Result<Self> {
        if data.dim().0 != 3 {
            return Err(Error::shape(format!(
                "dense-UV map needs 3 channels, got {}",
                data.dim().0
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::config(format!("dense-UV value {v} outside [0, 1]")));
        }
        Ok(Self { data })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            data: Image::zeros((3, height, width)),
        }
    }

    pub fn data(&self) -> &Image {
        &self.data
    }

    pub fn width(&self) -> usize {
        self.data.dim().2
    }

    pub fn height(&self) -> usize {
        self.data.dim().1
    }
}

/// Six-channel per-frame pose input: normalized dense-UV followed by the
/// normalized keypoint rendering, values in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PoseSignature {
    data: Image,
}

impl PoseSignature {
    /// Concatenates a dense-UV map and a keypoint rendering, both in `[0, 1]`.
    pub fn from_parts(uv: &DenseUVMap, keypoint_rgb: &Image) -> Result<Self> {
        if keypoint_rgb.dim() != uv.data.dim() {
            return Err(Error::shape(format!(
                "dense-UV map is {:?} but keypoint rendering is {:?}",
                uv.data.dim(),
                keypoint_rgb.dim()
            )));
        }
        let data = concat_channels(&[&normalize_unit(&uv.data), &normalize_unit(keypoint_rgb)])?;
        Ok(Self { data })
    }

    /// Wraps already-normalized data, checking only the channel count.
    pub fn from_normalized(data: Image) -> Result<Self> {
        if data.dim().0 != POSE_CHANNELS {
            return Err(Error::shape(format!(
                "pose signature needs {POSE_CHANNELS} channels, got {}",
                data.dim().0
            )));
        }
        Ok(Self { data })
    }

    pub fn data(&self) -> &Image {
        &self.data
    }

    pub fn width(&self) -> usize {
        self.data.dim().2
    }

    pub fn height(&self) -> usize {
        self.data.dim().1
    }
}

/// Stack of pose signatures sampled from a motion window, nearest offset first.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionSignature {
    data: Image,
    offsets: Vec<usize>,
}

impl MotionSignature {
    pub fn data(&self) -> &Image {
        &self.data
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn num_blocks(&self) -> usize {
        self.offsets.len()
    }

    /// Channels `6k..6k+6`.
    pub fn block(&self, k: usize) -> ArrayView3<'_, f32> {
        self.data
            .slice(s![k * POSE_CHANNELS..(k + 1) * POSE_CHANNELS, .., ..])
    }

    fn stack(blocks: &[&PoseSignature], offsets: &[usize], width: usize, height: usize) -> Self {
        let data = if blocks.is_empty() {
            Image::zeros((0, height, width))
        } else {
            let views: Vec<_> = blocks.iter().map(|b| b.data.view()).collect();
            ndarray::concatenate(Axis(0), &views).expect("pose signatures share a shape")
        };
        Self {
            data,
            offsets: offsets.to_vec(),
        }
    }
}

/// How window indices outside the sequence are resolved.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryPolicy {
    /// Clamp to the first (or, looking forward, the last) frame.
    #[default]
    Clamp,
    /// Reject windows that leave the sequence.
    Strict,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Direction {
    Past,
    Future,
}

fn window_index(
    i: usize,
    offset: usize,
    len: usize,
    dir: Direction,
    boundary: BoundaryPolicy,
) -> Result<usize> {
    let raw = match dir {
        Direction::Past => i as i64 - offset as i64,
        Direction::Future => i as i64 + offset as i64,
    };
    if (0..len as i64).contains(&raw) {
        return Ok(raw as usize);
    }
    match boundary {
        BoundaryPolicy::Clamp => Ok(raw.clamp(0, len as i64 - 1) as usize),
        BoundaryPolicy::Strict => Err(Error::Index {
            index: raw.max(0) as usize,
            len,
        }),
    }
}

fn check_offsets(offsets: &[usize]) -> Result<()> {
    if offsets.iter().any(|&o| o == 0) || offsets.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::config(format!(
            "motion offsets must be strictly increasing positive integers, got {offsets:?}"
        )));
    }
    Ok(())
}

fn track_signature(
    track: &[PoseSignature],
    i: usize,
    offsets: &[usize],
    boundary: BoundaryPolicy,
    dir: Direction,
) -> Result<MotionSignature> {
    check_offsets(offsets)?;
    let len = track.len();
    if i >= len {
        return Err(Error::Index { index: i, len });
    }
    let blocks = offsets
        .iter()
        .map(|&o| window_index(i, o, len, dir, boundary).map(|j| &track[j]))
        .collect::<Result<Vec<_>>>()?;
    Ok(MotionSignature::stack(
        &blocks,
        offsets,
        track[i].width(),
        track[i].height(),
    ))
}

/// Frame indices whose pose signatures make up the motion signature of
/// frame `i`: `i - offset` for each offset, or `i + offset` when `reverse`.
pub fn motion_window(
    i: usize,
    offsets: &[usize],
    len: usize,
    boundary: BoundaryPolicy,
    reverse: bool,
) -> Result<Vec<usize>> {
    check_offsets(offsets)?;
    if i >= len {
        return Err(Error::Index { index: i, len });
    }
    let dir = if reverse { Direction::Future } else { Direction::Past };
    offsets
        .iter()
        .map(|&o| window_index(i, o, len, dir, boundary))
        .collect()
}

/// Motion signature of frame `i` from precomputed pose signatures.
pub fn motion_signature_from_track(
    track: &[PoseSignature],
    i: usize,
    offsets: &[usize],
    boundary: BoundaryPolicy,
) -> Result<MotionSignature> {
    track_signature(track, i, offsets, boundary, Direction::Past)
}

/// Renders the keypoints at the dense-UV resolution and stacks both halves.
pub fn build_pose_signature(
    uv: &DenseUVMap,
    kp: &KeypointSet,
    style: &RasterStyle,
) -> Result<PoseSignature> {
    let rgb = rasterize_keypoints(kp, uv.width(), uv.height(), style)?;
    PoseSignature::from_parts(uv, &rgb)
}

fn signatures_at(
    seq: &SequenceDataset,
    i: usize,
    offsets: &[usize],
    boundary: BoundaryPolicy,
    style: &RasterStyle,
    dir: Direction,
) -> Result<MotionSignature> {
    check_offsets(offsets)?;
    let len = seq.len();
    if i >= len {
        return Err(Error::Index { index: i, len });
    }
    let sigs = offsets
        .iter()
        .map(|&o| {
            let j = window_index(i, o, len, dir, boundary)?;
            seq.pose_signature(j, style)
        })
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<_> = sigs.iter().collect();
    Ok(MotionSignature::stack(&refs, offsets, seq.width(), seq.height()))
}

/// Pose signatures of frames `i - offset` for each offset, nearest first.
pub fn build_motion_signature(
    seq: &SequenceDataset,
    i: usize,
    offsets: &[usize],
    boundary: BoundaryPolicy,
    style: &RasterStyle,
) -> Result<MotionSignature> {
    signatures_at(seq, i, offsets, boundary, style, Direction::Past)
}

/// Future frames `i + offset` placed where the past frames would go, so the
/// encoded motion runs in reverse.
pub fn backward_motion_signature(
    seq: &SequenceDataset,
    i: usize,
    offsets: &[usize],
    boundary: BoundaryPolicy,
    style: &RasterStyle,
) -> Result<MotionSignature> {
    signatures_at(seq, i, offsets, boundary, style, Direction::Future)
}

/// Backward signature from precomputed pose signatures.
pub fn backward_signature_from_track(
    track: &[PoseSignature],
    i: usize,
    offsets: &[usize],
    boundary: BoundaryPolicy,
) -> Result<MotionSignature> {
    track_signature(track, i, offsets, boundary, Direction::Future)
}

/// A still motion: the same pose repeated in every block.
pub fn frozen_motion_signature(p: &PoseSignature, offsets: &[usize]) -> MotionSignature {
    let blocks = vec![p; offsets.len()];
    MotionSignature::stack(&blocks, offsets, p.width(), p.height())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{body, FrameRecord, Keypoint};

    fn kp_at(x: f64) -> KeypointSet {
        KeypointSet::new(
            body::JOINTS
                .iter()
                .enumerate()
                .map(|(j, n)| Keypoint::new(*n, x + j as f64, 4.0 + 1.5 * j as f64, 1.0))
                .collect(),
        )
    }

    fn moving_seq(n: usize, w: usize, h: usize) -> SequenceDataset {
        let frames = (0..n)
            .map(|i| {
                let mut uv = Image::zeros((3, h, w));
                uv[[0, i % h, i % w]] = 0.5;
                FrameRecord {
                    image: Image::zeros((3, h, w)),
                    keypoints: kp_at(1.0 + (i % 7) as f64),
                    uv: DenseUVMap::new(uv).unwrap(),
                }
            })
            .collect();
        SequenceDataset::new(frames, 24, w, h).unwrap()
    }

    #[test]
    fn zero_inputs_give_constant_minus_one() {
        let uv = DenseUVMap::zeros(16, 12);
        let kp = KeypointSet::new(vec![]);
        let style = RasterStyle {
            bones: vec![],
            ..RasterStyle::default()
        };
        let p = build_pose_signature(&uv, &kp, &style).unwrap();
        assert_eq!(p.data().dim(), (6, 12, 16));
        assert!(p.data().iter().all(|&v| v == -1.0));
    }

    #[test]
    fn first_three_channels_are_normalized_uv() {
        let uv = DenseUVMap::new(Image::from_shape_fn((3, 8, 8), |(c, y, x)| {
            ((c + y + x) % 5) as f32 / 4.0
        }))
        .unwrap();
        let p = build_pose_signature(&uv, &kp_at(1.0), &RasterStyle::default()).unwrap();
        assert_eq!(
            p.data().slice(s![0..3, .., ..]).to_owned(),
            normalize_unit(uv.data())
        );
    }

    #[test]
    fn mismatched_parts_are_a_shape_error() {
        let uv = DenseUVMap::zeros(8, 8);
        let rgb = Image::zeros((3, 8, 9));
        assert!(matches!(
            PoseSignature::from_parts(&uv, &rgb),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn dense_uv_range_is_enforced() {
        let mut d = Image::zeros((3, 2, 2));
        d[[1, 0, 0]] = 1.5;
        assert!(DenseUVMap::new(d).is_err());
    }

    #[test]
    fn clamp_at_frame_zero_repeats_first_pose() {
        let seq = moving_seq(30, 16, 16);
        let style = RasterStyle::default();
        let m = build_motion_signature(&seq, 0, &DEFAULT_OFFSETS, BoundaryPolicy::Clamp, &style)
            .unwrap();
        assert_eq!(m.data().dim(), (60, 16, 16));
        let p0 = seq.pose_signature(0, &style).unwrap();
        for k in 0..10 {
            assert_eq!(m.block(k), p0.data().view());
        }
    }

    #[test]
    fn window_blocks_match_offset_frames() {
        let seq = moving_seq(40, 16, 16);
        let style = RasterStyle::default();
        let i = 27;
        let m = build_motion_signature(&seq, i, &DEFAULT_OFFSETS, BoundaryPolicy::Clamp, &style)
            .unwrap();
        for (k, o) in DEFAULT_OFFSETS.iter().enumerate() {
            let p = seq.pose_signature(i - o, &style).unwrap();
            assert_eq!(m.block(k), p.data().view(), "block {k}");
        }
    }

    #[test]
    fn strict_policy_rejects_short_history() {
        let seq = moving_seq(30, 8, 8);
        let r = build_motion_signature(
            &seq,
            5,
            &DEFAULT_OFFSETS,
            BoundaryPolicy::Strict,
            &RasterStyle::default(),
        );
        assert!(matches!(r, Err(Error::Index { .. })));
    }

    #[test]
    fn backward_uses_future_frames() {
        let seq = moving_seq(50, 16, 16);
        let style = RasterStyle::default();
        let i = seq.len() - 21;
        let m =
            backward_motion_signature(&seq, i, &DEFAULT_OFFSETS, BoundaryPolicy::Clamp, &style)
                .unwrap();
        let p = seq.pose_signature(i + 20, &style).unwrap();
        assert_eq!(m.block(9), p.data().view());
        let p = seq.pose_signature(i + 1, &style).unwrap();
        assert_eq!(m.block(0), p.data().view());
    }

    #[test]
    fn palindrome_makes_backward_equal_forward() {
        let w = 12;
        let center = 25;
        let frames = (0..51)
            .map(|i: usize| {
                let d = (i as i64 - center as i64).unsigned_abs() as f64;
                FrameRecord {
                    image: Image::zeros((3, w, w)),
                    keypoints: kp_at(d * 0.1),
                    uv: DenseUVMap::zeros(w, w),
                }
            })
            .collect();
        let seq = SequenceDataset::new(frames, 24, w, w).unwrap();
        let style = RasterStyle::default();
        let f = build_motion_signature(&seq, center, &DEFAULT_OFFSETS, BoundaryPolicy::Clamp, &style)
            .unwrap();
        let b =
            backward_motion_signature(&seq, center, &DEFAULT_OFFSETS, BoundaryPolicy::Clamp, &style)
                .unwrap();
        assert_eq!(f, b);
    }

    #[test]
    fn constant_sequence_matches_frozen_signature() {
        let w = 10;
        let frames = (0..30)
            .map(|_| FrameRecord {
                image: Image::zeros((3, w, w)),
                keypoints: kp_at(2.0),
                uv: DenseUVMap::zeros(w, w),
            })
            .collect();
        let seq = SequenceDataset::new(frames, 24, w, w).unwrap();
        let style = RasterStyle::default();
        let p = seq.pose_signature(4, &style).unwrap();
        let frozen = frozen_motion_signature(&p, &DEFAULT_OFFSETS);
        assert_eq!(frozen.data().dim(), (60, w, w));
        for i in [0, 5, 21, 29] {
            let fwd =
                build_motion_signature(&seq, i, &DEFAULT_OFFSETS, BoundaryPolicy::Clamp, &style)
                    .unwrap();
            assert_eq!(fwd, frozen);
        }
        let bwd =
            backward_motion_signature(&seq, 3, &DEFAULT_OFFSETS, BoundaryPolicy::Clamp, &style)
                .unwrap();
        assert_eq!(bwd, frozen);
    }

    #[test]
    fn window_presets_are_valid_offset_lists() {
        for w in WINDOW_PRESETS {
            check_offsets(&window_preset(w).unwrap()).unwrap();
        }
        assert_eq!(window_preset(20).unwrap(), DEFAULT_OFFSETS);
        assert!(window_preset(0).unwrap().is_empty());
        assert!(window_preset(7).is_err());
    }

    #[test]
    fn offsets_must_increase() {
        let seq = moving_seq(30, 8, 8);
        let r = build_motion_signature(
            &seq,
            25,
            &[1, 3, 3],
            BoundaryPolicy::Clamp,
            &RasterStyle::default(),
        );
        assert!(matches!(r, Err(Error::Config(_))));
    }
}
