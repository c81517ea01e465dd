//! Binary lesion masks: Otsu thresholding, blob/hole cleanup, and the
//! per-layer normalized mask pyramid that guides style statistics.

mod clean;
mod otsu;
mod pyramid;

pub use clean::{clean_mask, fill_holes, largest_component, majority_blur};
pub use otsu::{otsu_threshold, otsu_threshold_bin};
pub use pyramid::{build_mask_pyramid, layer_block, MaskPyramid, PoolingMode, PyramidLevel};

use crate::imaging::{self, ImagePlane, ImagingError};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SegmentationError {
    #[error("degenerate histogram: every pixel falls in one intensity bin")]
    DegenerateHistogram,
    #[error("mask has no foreground pixels")]
    EmptyMask,
    #[error("otsu thresholding needs a 1-channel image, got {0} channels")]
    NotGray(usize),
    #[error("mask values must be 0 or 1")]
    NotBinary,
    #[error("unknown layer name {0:?}")]
    UnknownLayer(String),
    #[error("mask {mask:?} cannot be pooled {pools} times")]
    TooSmall { mask: (usize, usize), pools: usize },
    #[error(transparent)]
    Imaging(#[from] ImagingError),
}

pub type Result<T> = std::result::Result<T, SegmentationError>;

/// Row-major `{0, 1}` raster.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width || height == 0 || width == 0 {
            return Err(SegmentationError::Imaging(ImagingError::DataLength {
                expected: height * width,
                actual: data.len(),
            }));
        }
        if data.iter().any(|&v| v > 1) {
            return Err(SegmentationError::NotBinary);
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(u8::from(f(y, x)));
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x] == 1
    }

    pub fn set(&mut self, y: usize, x: usize, v: bool) {
        self.data[y * self.width + x] = u8::from(v);
    }

    pub fn count(&self) -> usize {
        self.data.iter().map(|&v| v as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    /// Foreground pixel coordinates in row-major order.
    pub fn pixels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.data
            .iter()
            .enumerate()
            .filter(|(_, &v)| v == 1)
            .map(|(i, _)| (i / self.width, i % self.width))
    }

    /// Any nonzero sample is foreground.
    pub fn from_plane(plane: &ImagePlane) -> Self {
        let gray = plane.to_gray();
        Self::from_fn(gray.height(), gray.width(), |y, x| gray.get(y, x, 0) > 0.0)
    }

    pub fn to_plane(&self) -> ImagePlane {
        ImagePlane::new(
            self.height,
            self.width,
            1,
            self.data.iter().map(|&v| v as f64).collect(),
        )
        .expect("mask extents are positive")
    }

    pub fn read(path: &Path) -> Result<Self> {
        Ok(Self::from_plane(&imaging::io::read_gray(path)?))
    }

    /// Single-channel PNG, 0 = background, 255 = foreground.
    pub fn write(&self, path: &Path) -> Result<()> {
        Ok(imaging::io::write(&self.to_plane(), path)?)
    }
}
