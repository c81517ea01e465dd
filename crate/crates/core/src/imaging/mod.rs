//! Rasters in `[0, 1]` and the preprocessing chain applied to every lesion
//! image: bilinear resize, median filtering, hair removal, Shades-of-Gray
//! color constancy, and the pixelwise-mean content canvas.

mod color;
mod content;
mod hair;
pub mod io;
mod median;
mod resize;

pub use color::shades_of_gray;
pub use content::build_content_image;
pub use hair::{hair_mask, remove_hair, remove_hair_with, HairParams};
pub use median::median_filter;
pub use resize::resize_bilinear;

use crate::ndtensor::DenseTensor;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImagingError {
    #[error("channel count must be 1 or 3, got {0}")]
    Channels(usize),
    #[error("image dimensions must be positive, got {0}×{1}")]
    Empty(usize, usize),
    #[error("expected {expected} samples, got {actual}")]
    DataLength { expected: usize, actual: usize },
    #[error("{0}")]
    Precondition(String),
    #[error("image {index} is {actual:?}, expected {expected:?}")]
    ShapeMismatch {
        index: usize,
        expected: (usize, usize, usize),
        actual: (usize, usize, usize),
    },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("codec error on {path}: {source}")]
    Codec {
        path: String,
        #[source]
        source: image::ImageError,
    },
}

pub type Result<T> = std::result::Result<T, ImagingError>;

/// `H×W×C` raster, channel-interleaved, every sample clamped to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImagePlane {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ImagePlane {
    /// Builds a plane, clamping every sample into `[0, 1]`. NaN becomes 0.
    pub fn new(height: usize, width: usize, channels: usize, mut data: Vec<f64>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(ImagingError::Channels(channels));
        }
        if height == 0 || width == 0 {
            return Err(ImagingError::Empty(height, width));
        }
        let expected = height * width * channels;
        if data.len() != expected {
            return Err(ImagingError::DataLength {
                expected,
                actual: data.len(),
            });
        }
        data.iter_mut().for_each(|v| *v = clamp_unit(*v));
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Result<Self> {
        Self::new(height, width, channels, vec![value; height * width * channels])
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Self::new(height, width, channels, data)
    }

    /// Clamps a real-valued tensor of shape `H×W×C` into a plane.
    pub fn from_tensor(t: &DenseTensor) -> Result<Self> {
        let (h, w, c) = t
            .hwc("ImagePlane::from_tensor")
            .map_err(|e| ImagingError::Precondition(e.to_string()))?;
        Self::new(h, w, c, t.data().to_vec())
    }

    pub fn to_tensor(&self) -> DenseTensor {
        DenseTensor::new(vec![self.height, self.width, self.channels], self.data.clone())
            .expect("plane extents are positive")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f64) {
        self.data[(y * self.width + x) * self.channels + c] = clamp_unit(v);
    }

    pub fn pixel(&self, y: usize, x: usize) -> &[f64] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    /// Single channel `c` as its own 1-channel plane.
    pub fn channel(&self, c: usize) -> ImagePlane {
        let data = self.data.iter().skip(c).step_by(self.channels).copied().collect();
        Self {
            height: self.height,
            width: self.width,
            channels: 1,
            data,
        }
    }

    /// Rec. 601 luma for RGB planes; 1-channel planes are returned as is.
    pub fn to_gray(&self) -> ImagePlane {
        if self.channels == 1 {
            return self.clone();
        }
        let data = self
            .data
            .chunks_exact(3)
            .map(|p| clamp_unit(0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]))
            .collect();
        Self {
            height: self.height,
            width: self.width,
            channels: 1,
            data,
        }
    }
}

pub(crate) fn clamp_unit(v: f64) -> f64 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(0.0, 1.0)
    }
}
