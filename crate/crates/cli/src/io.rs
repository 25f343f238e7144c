use std::path::{Path, PathBuf};

use dynamo_core::imaging::{normalize_unit, read_png_unit, write_png_signed, Image, Mask};
use dynamo_core::{Error, Result};

/// PNG files of a directory in name order. A dataset directory is read
/// through its `frames/` subdirectory.
pub fn frame_paths(dir: &Path) -> Result<Vec<PathBuf>> {
    let dir = if dir.join("frames").is_dir() {
        dir.join("frames")
    } else {
        dir.to_path_buf()
    };
    let mut out: Vec<PathBuf> = std::fs::read_dir(&dir)
        .map_err(|e| Error::config(format!("cannot read {}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "png"))
        .collect();
    out.sort();
    if out.is_empty() {
        return Err(Error::config(format!("no PNG frames in {}", dir.display())));
    }
    Ok(out)
}

/// Frames of a directory in `[-1, 1]`.
pub fn read_frames(dir: &Path) -> Result<Vec<Image>> {
    frame_paths(dir)?
        .iter()
        .map(|p| Ok(normalize_unit(&read_png_unit(p)?)))
        .collect()
}

/// Pixels whose luma exceeds one half.
pub fn read_mask(path: &Path) -> Result<Mask> {
    let img = read_png_unit(path)?;
    let g = dynamo_core::imaging::grayscale(&img);
    Ok(g.mapv(|v| v > 0.5))
}

pub fn write_frames(dir: &Path, frames: &[Image], first: usize) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (k, f) in frames.iter().enumerate() {
        write_png_signed(&dir.join(format!("{:06}.png", first + k)), f)?;
    }
    Ok(())
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}
