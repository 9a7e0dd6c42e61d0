//! PNG and tensor conversions. Pixels are CHW `f32` in [0,1].

use std::io::Cursor;
use std::path::Path;

use image::{imageops::FilterType, ImageFormat, RgbImage};
use tch::{Kind, Tensor};

use crate::error::{HisdError, Result};

/// Loads an image as CHW floats, resized to `size`×`size` when needed.
pub fn load_chw(path: &Path, size: u32) -> Result<Vec<f32>> {
    let img = image::open(path)?.to_rgb8();
    Ok(rgb_to_chw(&fit(img, size)))
}

fn fit(img: RgbImage, size: u32) -> RgbImage {
    if img.width() == size && img.height() == size {
        img
    } else {
        image::imageops::resize(&img, size, size, FilterType::Triangle)
    }
}

pub fn rgb_to_chw(img: &RgbImage) -> Vec<f32> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut out = vec![0f32; 3 * w * h];
    for (x, y, p) in img.enumerate_pixels() {
        for c in 0..3 {
            out[c * w * h + y as usize * w + x as usize] = p[c] as f32 / 255.0;
        }
    }
    out
}

/// Quantizes to 8 bits (round to nearest).
pub fn chw_to_rgb(pixels: &[f32], width: u32, height: u32) -> RgbImage {
    let plane = (width * height) as usize;
    assert_eq!(pixels.len(), 3 * plane, "pixel buffer does not match {width}x{height}");
    RgbImage::from_fn(width, height, |x, y| {
        let k = (y * width + x) as usize;
        let q = |c: usize| (pixels[c * plane + k].clamp(0.0, 1.0) * 255.0).round() as u8;
        image::Rgb([q(0), q(1), q(2)])
    })
}

/// `1 × 3 × H × W` tensor from a decoded image.
pub fn image_to_tensor(img: &RgbImage) -> Tensor {
    Tensor::from_slice(&rgb_to_chw(img)).view([1, 3, img.height() as i64, img.width() as i64])
}

/// First image of a `B × 3 × H × W` tensor.
pub fn tensor_to_image(t: &Tensor) -> Result<RgbImage> {
    let size = t.size();
    if size.len() != 4 || size[1] != 3 {
        return Err(HisdError::Shape(format!("expected B×3×H×W image tensor, got {size:?}")));
    }
    let first = t.get(0).to_kind(Kind::Float).contiguous();
    let v = Vec::<f32>::try_from(first.flatten(0, -1))?;
    Ok(chw_to_rgb(&v, size[3] as u32, size[2] as u32))
}

pub fn read_image(path: &Path) -> Result<RgbImage> {
    Ok(image::open(path)?.to_rgb8())
}

pub fn write_png(img: &RgbImage, path: &Path) -> Result<()> {
    img.save_with_format(path, ImageFormat::Png)?;
    Ok(())
}

pub fn encode_png(img: &RgbImage) -> Result<Vec<u8>> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png)?;
    Ok(buf.into_inner())
}

pub fn decode_png(bytes: &[u8]) -> Result<RgbImage> {
    Ok(image::load_from_memory(bytes)?.to_rgb8())
}
