use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::keypoints::KeypointSet;
use super::raster::RasterStyle;
use super::signature::{build_pose_signature, DenseUVMap, PoseSignature};
use crate::error::{Error, Result};
use crate::imaging::{denormalize, normalize_unit, read_png_unit, write_png_unit, Image};

/// One time step: ground-truth image in `[-1, 1]` and its pose inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameRecord {
    pub image: Image,
    pub keypoints: KeypointSet,
    pub uv: DenseUVMap,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitTag {
    Train,
    Gap,
    Test,
}

/// Contiguous train / gap / test partition sizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub gap: usize,
    pub test: usize,
}

impl SplitCounts {
    pub fn total(&self) -> usize {
        self.train + self.gap + self.test
    }

    pub fn tag(&self, i: usize) -> SplitTag {
        if i < self.train {
            SplitTag::Train
        } else if i < self.train + self.gap {
            SplitTag::Gap
        } else {
            SplitTag::Test
        }
    }
}

/// Consecutive frames of one actor at a fixed frame rate.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceDataset {
    frames: Vec<FrameRecord>,
    fps: u32,
    width: usize,
    height: usize,
    split: Option<SplitCounts>,
}

impl SequenceDataset {
    pub fn new(frames: Vec<FrameRecord>, fps: u32, width: usize, height: usize) -> Result<Self> {
        for (i, f) in frames.iter().enumerate() {
            if f.image.dim() != (3, height, width) {
                return Err(Error::shape(format!(
                    "frame {i} image is {:?}, expected (3, {height}, {width})",
                    f.image.dim()
                )));
            }
            if (f.uv.height(), f.uv.width()) != (height, width) {
                return Err(Error::shape(format!(
                    "frame {i} dense-UV map is {}x{}, expected {width}x{height}",
                    f.uv.width(),
                    f.uv.height()
                )));
            }
        }
        Ok(Self {
            frames,
            fps,
            width,
            height,
            split: None,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn fps(&self) -> u32 {
        self.fps
    }

    pub fn frames(&self) -> &[FrameRecord] {
        &self.frames
    }

    pub fn frame(&self, i: usize) -> &FrameRecord {
        &self.frames[i]
    }

    pub fn frames_mut(&mut self) -> &mut [FrameRecord] {
        &mut self.frames
    }

    pub fn split(&self) -> Option<SplitCounts> {
        self.split
    }

    /// Attaches a split; counts must cover the sequence exactly.
    pub fn with_split(mut self, split: SplitCounts) -> Result<Self> {
        if split.total() != self.len() {
            return Err(Error::config(format!(
                "split covers {} frames but the sequence has {}",
                split.total(),
                self.len()
            )));
        }
        self.split = Some(split);
        Ok(self)
    }

    /// Split tag of frame `i`; untagged sequences count as all-train.
    pub fn tag(&self, i: usize) -> SplitTag {
        self.split.map_or(SplitTag::Train, |s| s.tag(i))
    }

    pub fn indices(&self, tag: SplitTag) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.tag(i) == tag).collect()
    }

    /// First `n` frames, keeping fps and dropping the split.
    pub fn truncated(&self, n: usize) -> Self {
        Self {
            frames: self.frames[..n.min(self.len())].to_vec(),
            split: None,
            ..self.clone()
        }
    }

    pub fn pose_signature(&self, i: usize, style: &RasterStyle) -> Result<PoseSignature> {
        let f = self.frames.get(i).ok_or(Error::Index {
            index: i,
            len: self.len(),
        })?;
        build_pose_signature(&f.uv, &f.keypoints, style)
    }

    /// Pose signatures of every frame, in order.
    pub fn pose_track(&self, style: &RasterStyle) -> Result<Vec<PoseSignature>> {
        (0..self.len()).map(|i| self.pose_signature(i, style)).collect()
    }
}

/// Contents of `meta.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub fps: u32,
    pub width: usize,
    pub height: usize,
    /// When set, the I channel of `densepose/*.png` stores raw part indices
    /// `0..=iuv_parts` (DensePose convention) instead of a `[0, 1]` value.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iuv_parts: Option<u32>,
}

fn frame_name(i: usize, ext: &str) -> String {
    format!("{i:06}.{ext}")
}

/// Writes `frames/`, `keypoints/`, `densepose/` and `meta.json` under `dir`.
pub fn save_dataset(seq: &SequenceDataset, dir: &Path) -> Result<()> {
    for sub in ["frames", "keypoints", "densepose"] {
        std::fs::create_dir_all(dir.join(sub))?;
    }
    let meta = DatasetMeta {
        fps: seq.fps,
        width: seq.width,
        height: seq.height,
        iuv_parts: None,
    };
    std::fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&meta)?)?;
    for (i, f) in seq.frames.iter().enumerate() {
        write_png_unit(&dir.join("frames").join(frame_name(i, "png")), &denormalize(&f.image))?;
        f.keypoints
            .write(&dir.join("keypoints").join(frame_name(i, "json")))?;
        write_png_unit(&dir.join("densepose").join(frame_name(i, "png")), f.uv.data())?;
    }
    Ok(())
}

fn decode_iuv(raw: Image, parts: Option<u32>) -> Result<DenseUVMap> {
    let mut uv = raw;
    let (_, h, w) = uv.dim();
    for y in 0..h {
        for x in 0..w {
            if uv[[0, y, x]] == 0.0 {
                for c in 0..3 {
                    uv[[c, y, x]] = 0.0;
                }
            } else if let Some(n) = parts {
                let idx = (uv[[0, y, x]] * 255.0).round();
                uv[[0, y, x]] = (idx / n as f32).min(1.0);
            }
        }
    }
    DenseUVMap::new(uv)
}

fn numbered_files(dir: &Path, ext: &str) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == ext))
        .collect();
    out.sort();
    Ok(out)
}

fn read_meta(dir: &Path) -> Result<DatasetMeta> {
    let path = dir.join("meta.json");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::Dataset {
        path: path.clone(),
        message: e.to_string(),
    })?;
    serde_json::from_str(&text).map_err(|e| Error::Dataset {
        path,
        message: e.to_string(),
    })
}

/// Loads a dataset directory. Use [`validate_dataset_dir`] for a full report.
pub fn load_dataset(dir: &Path) -> Result<SequenceDataset> {
    let issues = validate_dataset_dir(dir);
    if let Some(first) = issues.first() {
        return Err(Error::Dataset {
            path: dir.to_path_buf(),
            message: format!("{} problem(s); first: {first}", issues.len()),
        });
    }
    let meta = read_meta(dir)?;
    let n = numbered_files(&dir.join("frames"), "png")?.len();
    let frames = (0..n)
        .map(|i| {
            let image = normalize_unit(&read_png_unit(&dir.join("frames").join(frame_name(i, "png")))?);
            let keypoints = KeypointSet::read(&dir.join("keypoints").join(frame_name(i, "json")))?;
            let raw = read_png_unit(&dir.join("densepose").join(frame_name(i, "png")))?;
            Ok(FrameRecord {
                image,
                keypoints,
                uv: decode_iuv(raw, meta.iuv_parts)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    SequenceDataset::new(frames, meta.fps, meta.width, meta.height)
}

/// Checks the directory schema and returns one line per problem, each
/// prefixed by the offending path (and `line:column` for JSON errors).
pub fn validate_dataset_dir(dir: &Path) -> Vec<String> {
    let mut issues = Vec::new();
    let meta_path = dir.join("meta.json");
    let meta = match std::fs::read_to_string(&meta_path) {
        Err(e) => {
            issues.push(format!("{}: {e}", meta_path.display()));
            None
        }
        Ok(text) => match serde_json::from_str::<DatasetMeta>(&text) {
            Ok(m) => Some(m),
            Err(e) => {
                issues.push(format!(
                    "{}:{}:{}: {e}",
                    meta_path.display(),
                    e.line(),
                    e.column()
                ));
                None
            }
        },
    };
    let mut counts = Vec::new();
    for (sub, ext) in [("frames", "png"), ("keypoints", "json"), ("densepose", "png")] {
        let d = dir.join(sub);
        match numbered_files(&d, ext) {
            Err(e) => issues.push(format!("{}: {e}", d.display())),
            Ok(files) => {
                for (i, f) in files.iter().enumerate() {
                    let expected = frame_name(i, ext);
                    if f.file_name().and_then(|n| n.to_str()) != Some(expected.as_str()) {
                        issues.push(format!(
                            "{}: expected {expected} (frames must be numbered consecutively from 0)",
                            f.display()
                        ));
                        break;
                    }
                }
                counts.push((sub, files));
            }
        }
    }
    if counts.len() == 3 {
        let n = counts[0].1.len();
        for (sub, files) in &counts[1..] {
            if files.len() != n {
                issues.push(format!(
                    "{}: {} files but frames/ has {n}",
                    dir.join(sub).display(),
                    files.len()
                ));
            }
        }
        for f in &counts[1].1 {
            let res = std::fs::read_to_string(f)
                .map_err(|e| e.to_string())
                .and_then(|t| {
                    serde_json::from_str::<KeypointSet>(&t)
                        .map_err(|e| format!("{}:{}: {e}", e.line(), e.column()))
                });
            if let Err(msg) = res {
                issues.push(format!("{}:{msg}", f.display()));
            }
        }
        if let Some(meta) = &meta {
            for (sub, files) in [&counts[0], &counts[2]] {
                for f in files {
                    match image::image_dimensions(f) {
                        Ok((w, h)) if (w as usize, h as usize) == (meta.width, meta.height) => {}
                        Ok((w, h)) => issues.push(format!(
                            "{}: {w}x{h} does not match meta.json {}x{} ({sub})",
                            f.display(),
                            meta.width,
                            meta.height
                        )),
                        Err(e) => issues.push(format!("{}: {e}", f.display())),
                    }
                }
            }
        }
    }
    issues
}
