//! CP decomposition of stacked images: `X ≈ Σ_r a_r ∘ b_r ∘ c_r` fitted by
//! alternating least squares, plus projection of held-out images onto the
//! trained `(B, C)` space.
//!
//! Unfolding convention: entry `X[n, i, j]` sits in column `i + I·j` of the
//! mode-1 unfolding, and row `i + I·j` of the Khatri-Rao product `C ∗ B`
//! holds `C[j, r]·B[i, r]`, so that `X₍₁₎ = A (C ∗ B)ᵀ`.

mod als;
mod io;
mod report;

pub use als::{cp_als, khatri_rao, project_test, CpOptions};
pub use io::{read_loadings_csv, write_loadings_csv};
pub use report::{rank_clusters_report, write_cluster_csv, ClusterReport, ClusterRow};

use crate::imaging::ImagePlane;
use nalgebra::DMatrix;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CpError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("rank must be at least 1")]
    Rank,
    #[error("non-finite value during sweep {sweep}")]
    NonFinite { sweep: usize },
    #[error("model file: {0}")]
    Format(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(String),
}

pub type Result<T> = std::result::Result<T, CpError>;

/// `N × I × J` tensor stored row-major (`j` fastest), with one id per slab.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedTensor {
    dims: [usize; 3],
    data: Vec<f64>,
    ids: Vec<String>,
}

impl StackedTensor {
    pub fn new(dims: [usize; 3], data: Vec<f64>, ids: Vec<String>) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) || dims.iter().product::<usize>() != data.len() {
            return Err(CpError::Shape(format!("{} values for dims {dims:?}", data.len())));
        }
        if ids.len() != dims[0] {
            return Err(CpError::Shape(format!("{} ids for {} slabs", ids.len(), dims[0])));
        }
        Ok(Self { dims, data, ids })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn get(&self, n: usize, i: usize, j: usize) -> f64 {
        self.data[(n * self.dims[1] + i) * self.dims[2] + j]
    }

    /// Slab `n` as an `I×J` row-major slice.
    pub fn slab(&self, n: usize) -> &[f64] {
        let len = self.dims[1] * self.dims[2];
        &self.data[n * len..(n + 1) * len]
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Mode-1 unfolding, `N × (I·J)`, column `i + I·j`.
    pub fn mode1_unfold(&self) -> DMatrix<f64> {
        let [n, ni, nj] = self.dims;
        DMatrix::from_fn(n, ni * nj, |row, col| self.get(row, col % ni, col / ni))
    }

    /// Inverse of [`mode1_unfold`](Self::mode1_unfold).
    pub fn mode1_fold(m: &DMatrix<f64>, ni: usize, nj: usize, ids: Vec<String>) -> Result<Self> {
        if m.ncols() != ni * nj {
            return Err(CpError::Shape(format!("{} columns cannot fold to {ni}×{nj}", m.ncols())));
        }
        let n = m.nrows();
        let mut data = vec![0.0; n * ni * nj];
        for row in 0..n {
            for i in 0..ni {
                for j in 0..nj {
                    data[(row * ni + i) * nj + j] = m[(row, i + ni * j)];
                }
            }
        }
        Self::new([n, ni, nj], data, ids)
    }
}

/// Concatenates the channels of each `H×W×3` image along the width, R | G | B:
/// `X[n, i, j + W·c] = image_n[i, j, c]`.
pub fn stack_images(images: &[ImagePlane], ids: Vec<String>) -> Result<StackedTensor> {
    let first = images.first().ok_or_else(|| CpError::Shape("no images to stack".into()))?;
    let (h, w, c) = first.dims();
    let mut data = Vec::with_capacity(images.len() * h * w * c);
    for img in images {
        if img.dims() != (h, w, c) {
            return Err(CpError::Shape(format!("image {:?} differs from {:?}", img.dims(), (h, w, c))));
        }
        for y in 0..h {
            for ch in 0..c {
                for x in 0..w {
                    data.push(img.get(y, x, ch));
                }
            }
        }
    }
    StackedTensor::new([images.len(), h, w * c], data, ids)
}

/// Splits every slab back into `channels` images.
pub fn unstack(x: &StackedTensor, channels: usize) -> Result<Vec<ImagePlane>> {
    let [n, h, wc] = x.dims();
    if channels == 0 || wc % channels != 0 {
        return Err(CpError::Shape(format!("width {wc} is not a multiple of {channels} channels")));
    }
    let w = wc / channels;
    (0..n)
        .map(|k| {
            ImagePlane::from_fn(h, w, channels, |y, xx, c| x.get(k, y, xx + w * c))
                .map_err(|e| CpError::Shape(e.to_string()))
        })
        .collect()
}

/// Fitted factors. `B` and `C` columns have unit norm with the largest-magnitude
/// entry positive; all scale lives in `A`. Components are ordered by
/// decreasing `A` column norm.
#[derive(Debug, Clone, PartialEq)]
pub struct CpModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    /// Fit `1 − ‖X − X̂‖/‖X‖` after every sweep of the kept restart.
    pub fit_trace: Vec<f64>,
    pub seed: u64,
    pub ids: Vec<String>,
}

impl CpModel {
    pub fn rank(&self) -> usize {
        self.a.ncols()
    }

    pub fn fit(&self) -> f64 {
        self.fit_trace.last().copied().unwrap_or(0.0)
    }

    /// Dense reconstruction `Σ_r a_r ∘ b_r ∘ c_r`.
    pub fn reconstruct(&self) -> StackedTensor {
        let (n, ni, nj) = (self.a.nrows(), self.b.nrows(), self.c.nrows());
        let mut data = vec![0.0; n * ni * nj];
        for r in 0..self.rank() {
            for k in 0..n {
                for i in 0..ni {
                    let s = self.a[(k, r)] * self.b[(i, r)];
                    if s == 0.0 {
                        continue;
                    }
                    let row = &mut data[(k * ni + i) * nj..(k * ni + i + 1) * nj];
                    for (v, cj) in row.iter_mut().zip(self.c.column(r).iter()) {
                        *v += s * cj;
                    }
                }
            }
        }
        StackedTensor::new([n, ni, nj], data, self.ids.clone()).expect("consistent factor shapes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stacking_layout() {
        let img = ImagePlane::filled(4, 5, 3, 0.5).unwrap();
        let x = stack_images(std::slice::from_ref(&img), vec!["a".into()]).unwrap();
        assert_eq!(x.dims(), [1, 4, 15]);
        assert!(x.data().iter().all(|&v| v == 0.5));
        let rgb = ImagePlane::from_fn(4, 5, 3, |_, _, c| [0.1, 0.2, 0.3][c]).unwrap();
        let x = stack_images(&[rgb.clone(), img.clone()], vec!["a".into(), "b".into()]).unwrap();
        for i in 0..4 {
            for j in 0..15 {
                assert_eq!(x.get(0, i, j), [0.1, 0.2, 0.3][j / 5]);
            }
        }
        assert_eq!(unstack(&x, 3).unwrap(), vec![rgb, img]);
    }

    #[test]
    fn stacking_errors() {
        let a = ImagePlane::filled(4, 5, 3, 0.5).unwrap();
        let b = ImagePlane::filled(4, 6, 3, 0.5).unwrap();
        assert!(stack_images(&[a.clone(), b], vec!["a".into(), "b".into()]).is_err());
        assert!(stack_images(&[a], vec![]).is_err());
        assert!(stack_images(&[], vec![]).is_err());
    }

    #[test]
    fn unfold_pinned_layout() {
        let x = StackedTensor::new([2, 2, 2], (1..=8).map(f64::from).collect(), vec!["p".into(), "q".into()]).unwrap();
        let m = x.mode1_unfold();
        assert_eq!(m.row(0).iter().copied().collect::<Vec<_>>(), [1.0, 3.0, 2.0, 4.0]);
        assert_eq!(m.row(1).iter().copied().collect::<Vec<_>>(), [5.0, 7.0, 6.0, 8.0]);
        assert_eq!(StackedTensor::mode1_fold(&m, 2, 2, x.ids().to_vec()).unwrap(), x);
    }

    #[test]
    fn fold_round_trip_random() {
        let data: Vec<f64> = (0..3 * 4 * 5).map(|v| (v as f64 * 0.37).sin()).collect();
        let ids: Vec<String> = (0..3).map(|i| i.to_string()).collect();
        let x = StackedTensor::new([3, 4, 5], data, ids.clone()).unwrap();
        assert_eq!(StackedTensor::mode1_fold(&x.mode1_unfold(), 4, 5, ids).unwrap(), x);
    }
}
