//! Channel-major image buffers and their conversions.
//!
//! Every image-like quantity in the crate is an `Array3<f32>` laid out as
//! `(channels, height, width)`. Model-facing images live in `[-1, 1]`; raw
//! dense-UV maps and keypoint renderings live in `[0, 1]` until normalized.

use std::path::Path;

use candle_core::{DType, Device, Tensor};
use ndarray::{Array2, Array3, Axis};

use crate::error::{Error, Result};

/// `(channels, height, width)` image.
pub type Image = Array3<f32>;

/// Per-pixel boolean mask, `(height, width)`.
pub type Mask = Array2<bool>;

/// Maps `[0, 1]` to `[-1, 1]`.
pub fn normalize_unit(img: &Image) -> Image {
    img.mapv(|v| v * 2.0 - 1.0)
}

/// Maps `[-1, 1]` back to `[0, 1]`.
pub fn denormalize(img: &Image) -> Image {
    img.mapv(|v| (v + 1.0) * 0.5)
}

pub fn dims(img: &Image) -> (usize, usize, usize) {
    img.dim()
}

/// Stacks same-shaped images into an `(N, C, H, W)` tensor.
pub fn to_tensor(images: &[&Image], dtype: DType, device: &Device) -> Result<Tensor> {
    let first = images
        .first()
        .ok_or_else(|| Error::shape("cannot build a tensor from zero images"))?;
    let (c, h, w) = first.dim();
    let mut data = Vec::with_capacity(images.len() * c * h * w);
    for img in images {
        if img.dim() != (c, h, w) {
            return Err(Error::shape(format!(
                "batch mixes image shapes {:?} and {:?}",
                (c, h, w),
                img.dim()
            )));
        }
        match img.as_slice() {
            Some(s) => data.extend_from_slice(s),
            None => data.extend(img.iter().copied()),
        }
    }
    let t = Tensor::from_vec(data, (images.len(), c, h, w), device)?;
    Ok(t.to_dtype(dtype)?)
}

/// Splits an `(N, C, H, W)` tensor into images.
pub fn from_tensor(t: &Tensor) -> Result<Vec<Image>> {
    let (n, c, h, w) = t.dims4()?;
    let flat = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
    let per = c * h * w;
    (0..n)
        .map(|i| {
            Array3::from_shape_vec((c, h, w), flat[i * per..(i + 1) * per].to_vec())
                .map_err(|e| Error::shape(e.to_string()))
        })
        .collect()
}

/// Concatenates images along the channel axis.
pub fn concat_channels(parts: &[&Image]) -> Result<Image> {
    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
    ndarray::concatenate(Axis(0), &views).map_err(|e| Error::shape(e.to_string()))
}

/// Reads an 8-bit RGB PNG into `[0, 1]`.
pub fn read_png_unit(path: &Path) -> Result<Image> {
    let rgb = image::open(path)?.to_rgb8();
    let (w, h) = rgb.dimensions();
    let mut out = Array3::<f32>::zeros((3, h as usize, w as usize));
    for (x, y, px) in rgb.enumerate_pixels() {
        for c in 0..3 {
            out[[c, y as usize, x as usize]] = px[c] as f32 / 255.0;
        }
    }
    Ok(out)
}

/// Writes a 3-channel `[0, 1]` image as an 8-bit RGB PNG (values are clamped).
pub fn write_png_unit(path: &Path, img: &Image) -> Result<()> {
    let (c, h, w) = img.dim();
    if c != 3 && c != 1 {
        return Err(Error::shape(format!("cannot write {c}-channel image as PNG")));
    }
    let mut buf = image::RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let px = std::array::from_fn(|k| {
                let v = img[[if c == 1 { 0 } else { k }, y, x]];
                (v.clamp(0.0, 1.0) * 255.0).round() as u8
            });
            buf.put_pixel(x as u32, y as u32, image::Rgb(px));
        }
    }
    buf.save(path)?;
    Ok(())
}

/// Writes a `[-1, 1]` image as PNG.
pub fn write_png_signed(path: &Path, img: &Image) -> Result<()> {
    write_png_unit(path, &denormalize(img))
}

/// Luma (Rec. 601 weights) of a 3-channel image, or the single channel.
pub fn grayscale(img: &Image) -> Array2<f32> {
    let (c, _, _) = img.dim();
    if c == 1 {
        return img.index_axis(Axis(0), 0).to_owned();
    }
    let r = img.index_axis(Axis(0), 0);
    let g = img.index_axis(Axis(0), 1);
    let b = img.index_axis(Axis(0), 2);
    let mut out = r.mapv(|v| 0.299 * v);
    out.zip_mut_with(&g, |o, &v| *o += 0.587 * v);
    out.zip_mut_with(&b, |o, &v| *o += 0.114 * v);
    out
}

pub fn all_finite(img: &Image) -> bool {
    img.iter().all(|v| v.is_finite())
}
