//! PNG / PPM / PGM reading and writing. 8-bit samples map to `v / 255` on
//! read and `round(v * 255)` on write.

use super::{ImagePlane, ImagingError, Result};
use image::{DynamicImage, GrayImage, RgbImage};
use std::path::Path;

fn codec(path: &Path, source: image::ImageError) -> ImagingError {
    ImagingError::Codec {
        path: path.display().to_string(),
        source,
    }
}

pub fn to_u8(v: f64) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

pub fn from_u8(v: u8) -> f64 {
    v as f64 / 255.0
}

/// Decodes any supported raster into an RGB plane.
pub fn read_rgb(path: &Path) -> Result<ImagePlane> {
    let img = image::open(path).map_err(|e| codec(path, e))?.to_rgb8();
    let (w, h) = img.dimensions();
    ImagePlane::new(
        h as usize,
        w as usize,
        3,
        img.into_raw().into_iter().map(from_u8).collect(),
    )
}

/// Decodes any supported raster into a single-channel plane.
pub fn read_gray(path: &Path) -> Result<ImagePlane> {
    let img = image::open(path).map_err(|e| codec(path, e))?.to_luma8();
    let (w, h) = img.dimensions();
    ImagePlane::new(
        h as usize,
        w as usize,
        1,
        img.into_raw().into_iter().map(from_u8).collect(),
    )
}

pub fn to_dynamic(img: &ImagePlane) -> DynamicImage {
    let raw: Vec<u8> = img.data().iter().map(|&v| to_u8(v)).collect();
    let (w, h) = (img.width() as u32, img.height() as u32);
    if img.channels() == 1 {
        DynamicImage::ImageLuma8(GrayImage::from_raw(w, h, raw).expect("buffer size"))
    } else {
        DynamicImage::ImageRgb8(RgbImage::from_raw(w, h, raw).expect("buffer size"))
    }
}

/// Writes PNG, PPM or PGM, chosen by extension.
pub fn write(img: &ImagePlane, path: &Path) -> Result<()> {
    to_dynamic(img).save(path).map_err(|e| codec(path, e))
}
