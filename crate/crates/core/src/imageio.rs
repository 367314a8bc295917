//! PNG encoding of image tensors. The wire and disk format is 8-bit RGB (or
//! grayscale for masks and heatmaps); `[-1, 1]` maps linearly onto `0..=255`.

use std::io::Cursor;
use std::path::Path;

use image::{imageops::FilterType, DynamicImage, GrayImage, ImageFormat, RgbImage};

use crate::error::{Error, Result};
use crate::film::ImageTensor;

pub fn to_u8(v: f32) -> u8 {
    (((v.clamp(-1.0, 1.0) + 1.0) * 0.5) * 255.0).round() as u8
}

pub fn from_u8(v: u8) -> f32 {
    f32::from(v) / 255.0 * 2.0 - 1.0
}

pub fn to_rgb(img: &ImageTensor) -> Result<RgbImage> {
    if img.c != 3 {
        return Err(Error::shape(format!("expected 3 channels, got {}", img.c)));
    }
    let p = img.h * img.w;
    let mut buf = Vec::with_capacity(3 * p);
    for i in 0..p {
        for k in 0..3 {
            buf.push(to_u8(img.values[k * p + i]));
        }
    }
    RgbImage::from_raw(img.w as u32, img.h as u32, buf)
        .ok_or_else(|| Error::shape("image buffer size mismatch"))
}

pub fn from_dynamic(img: &DynamicImage) -> ImageTensor {
    let rgb = img.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let p = h * w;
    let mut values = vec![0.0f32; 3 * p];
    for (i, px) in rgb.pixels().enumerate() {
        for k in 0..3 {
            values[k * p + i] = from_u8(px.0[k]);
        }
    }
    ImageTensor { c: 3, h, w, values }
}

pub fn encode_png(img: &ImageTensor) -> Result<Vec<u8>> {
    let rgb = to_rgb(img)?;
    let mut out = Cursor::new(Vec::new());
    rgb.write_to(&mut out, ImageFormat::Png)
        .map_err(|e| Error::format("png", e))?;
    Ok(out.into_inner())
}

/// Decode PNG bytes, resizing to `size = (h, w)` when given and different.
pub fn decode_png(bytes: &[u8], size: Option<(usize, usize)>) -> Result<ImageTensor> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)
        .map_err(|e| Error::format("png", e))?;
    Ok(from_dynamic(&resize_dynamic(img, size)))
}

fn resize_dynamic(img: DynamicImage, size: Option<(usize, usize)>) -> DynamicImage {
    match size {
        Some((h, w)) if (img.height() as usize, img.width() as usize) != (h, w) => {
            img.resize_exact(w as u32, h as u32, FilterType::Triangle)
        }
        _ => img,
    }
}

pub fn save_png(img: &ImageTensor, path: &Path) -> Result<()> {
    to_rgb(img)?
        .save_with_format(path, ImageFormat::Png)
        .map_err(|e| Error::format(format!("png {}", path.display()), e))
}

/// Load any image file supported by the decoder, resized to `size`.
pub fn load_image(path: &Path, size: Option<(usize, usize)>) -> Result<ImageTensor> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let img = image::load_from_memory(&bytes)
        .map_err(|e| Error::format(format!("image {}", path.display()), e))?;
    Ok(from_dynamic(&resize_dynamic(img, size)))
}

/// Values in `[0, 1]` as an 8-bit grayscale PNG.
pub fn encode_gray_png(values: &[f32], h: usize, w: usize) -> Result<Vec<u8>> {
    let buf: Vec<u8> = values
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let img = GrayImage::from_raw(w as u32, h as u32, buf)
        .ok_or_else(|| Error::shape("heatmap buffer size mismatch"))?;
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png)
        .map_err(|e| Error::format("png", e))?;
    Ok(out.into_inner())
}

pub fn decode_gray_png(bytes: &[u8]) -> Result<(Vec<f32>, usize, usize)> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)
        .map_err(|e| Error::format("png", e))?
        .to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok((img.pixels().map(|p| f32::from(p.0[0]) / 255.0).collect(), h, w))
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
