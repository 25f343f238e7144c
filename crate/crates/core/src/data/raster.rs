use serde::{Deserialize, Serialize};

use super::keypoints::{body, KeypointSet};
use crate::error::{Error, Result};
use crate::imaging::Image;

/// Deterministic skeleton rendering scheme.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RasterStyle {
    /// Bones as `(from, to)` joint labels.
    pub bones: Vec<(String, String)>,
    /// Per-bone RGB colors in `[0, 1]`, cycled when shorter than `bones`.
    pub palette: Vec<[f32; 3]>,
    /// Stroke width in pixels. `None` means `max(2, width / 256)`.
    pub line_width: Option<f32>,
    /// Joints below this confidence are omitted along with their bones.
    pub confidence_threshold: f64,
    /// Draw face and hand landmarks when present.
    pub draw_landmarks: bool,
    pub landmark_color: [f32; 3],
}

impl Default for RasterStyle {
    fn default() -> Self {
        Self {
            bones: body::BONES
                .iter()
                .map(|(a, b)| (a.to_string(), b.to_string()))
                .collect(),
            palette: default_palette(body::BONES.len()),
            line_width: None,
            confidence_threshold: 0.05,
            draw_landmarks: true,
            landmark_color: [1.0, 1.0, 1.0],
        }
    }
}

impl RasterStyle {
    pub fn stroke_width(&self, width: usize) -> f32 {
        self.line_width
            .unwrap_or_else(|| (width as f32 / 256.0).max(2.0))
    }

    /// Resolves bone labels against the joint order of `kp`.
    fn resolve(&self, kp: &KeypointSet) -> Result<Vec<(usize, usize)>> {
        self.bones
            .iter()
            .map(|(a, b)| {
                let find = |n: &str| {
                    kp.index_of(n).ok_or_else(|| {
                        Error::config(format!("bone ({a}, {b}) names unknown joint '{n}'"))
                    })
                };
                Ok((find(a)?, find(b)?))
            })
            .collect()
    }
}

/// Evenly spaced saturated hues.
fn default_palette(n: usize) -> Vec<[f32; 3]> {
    (0..n)
        .map(|i| {
            let h = i as f32 / n as f32 * 6.0;
            let x = 1.0 - ((h % 2.0) - 1.0).abs();
            match h as usize {
                0 => [1.0, x, 0.0],
                1 => [x, 1.0, 0.0],
                2 => [0.0, 1.0, x],
                3 => [0.0, x, 1.0],
                4 => [x, 0.0, 1.0],
                _ => [1.0, 0.0, x],
            }
        })
        .collect()
}

fn segment_distance(px: f32, py: f32, ax: f32, ay: f32, bx: f32, by: f32) -> f32 {
    let (dx, dy) = (bx - ax, by - ay);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((px - ax) * dx + (py - ay) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (cx, cy) = (ax + t * dx, ay + t * dy);
    ((px - cx).powi(2) + (py - cy).powi(2)).sqrt()
}

/// Anti-aliased round-capped stroke, composited with per-channel max so the
/// result does not depend on drawing order.
fn stroke(img: &mut Image, a: (f32, f32), b: (f32, f32), radius: f32, color: [f32; 3]) {
    let (_, h, w) = img.dim();
    let reach = radius + 1.0;
    let x0 = (a.0.min(b.0) - reach).floor().max(0.0) as usize;
    let y0 = (a.1.min(b.1) - reach).floor().max(0.0) as usize;
    let x1 = (a.0.max(b.0) + reach).ceil().min(w as f32 - 1.0);
    let y1 = (a.1.max(b.1) + reach).ceil().min(h as f32 - 1.0);
    if x1 < 0.0 || y1 < 0.0 {
        return;
    }
    for y in y0..=y1 as usize {
        for x in x0..=x1 as usize {
            let d = segment_distance(x as f32, y as f32, a.0, a.1, b.0, b.1);
            let cover = (radius + 0.5 - d).clamp(0.0, 1.0);
            if cover > 0.0 {
                for (c, &col) in color.iter().enumerate() {
                    let v = &mut img[[c, y, x]];
                    *v = v.max(cover * col);
                }
            }
        }
    }
}

/// Renders a keypoint set as a 3-channel `[0, 1]` image on a black canvas.
pub fn rasterize_keypoints(
    kp: &KeypointSet,
    width: usize,
    height: usize,
    style: &RasterStyle,
) -> Result<Image> {
    if width == 0 || height == 0 {
        return Err(Error::config(format!(
            "raster canvas must be non-empty, got {width}x{height}"
        )));
    }
    if style.palette.is_empty() {
        return Err(Error::config("raster palette is empty"));
    }
    let bones = style.resolve(kp)?;
    let mut img = Image::zeros((3, height, width));
    let radius = style.stroke_width(width) / 2.0;
    let ok = |c: f64| c >= style.confidence_threshold && c > 0.0;

    for (i, &(a, b)) in bones.iter().enumerate() {
        let (ja, jb) = (&kp.joints[a], &kp.joints[b]);
        if !ok(ja.confidence) || !ok(jb.confidence) {
            continue;
        }
        let color = style.palette[i % style.palette.len()];
        stroke(
            &mut img,
            (ja.x as f32, ja.y as f32),
            (jb.x as f32, jb.y as f32),
            radius,
            color,
        );
    }
    if style.draw_landmarks {
        for k in kp.face.iter().chain(&kp.hands) {
            if ok(k.confidence) {
                let p = (k.x as f32, k.y as f32);
                stroke(&mut img, p, p, radius * 0.5, style.landmark_color);
            }
        }
    }
    Ok(img)
}
