use super::{BinaryMask, Result, SegmentationError};
use crate::imaging::ImagePlane;
use std::cmp::Ordering;

pub const BINS: usize = 256;

pub fn bin_of(v: f64) -> usize {
    ((v * BINS as f64).floor().max(0.0) as usize).min(BINS - 1)
}

/// Between-class criterion for "bins <= k" vs the rest, kept as an exact
/// fraction `(s0·N − S·n0)² / (n0·n1)`, proportional to the inter-class
/// variance.
#[derive(Clone, Copy)]
struct Score {
    num: u128,
    den: u128,
}

impl Score {
    fn cmp(&self, other: &Score) -> Ordering {
        match (self.num.checked_mul(other.den), other.num.checked_mul(self.den)) {
            (Some(a), Some(b)) => a.cmp(&b),
            _ => {
                let a = self.num as f64 / self.den as f64;
                let b = other.num as f64 / other.den as f64;
                a.total_cmp(&b)
            }
        }
    }
}

/// Threshold bin `k` maximizing inter-class variance over a 256-bin
/// histogram; the lowest `k` wins ties. Pixels in bins `<= k` form the darker
/// class.
pub fn otsu_threshold_bin(gray: &ImagePlane) -> Result<usize> {
    if gray.channels() != 1 {
        return Err(SegmentationError::NotGray(gray.channels()));
    }
    let mut hist = [0u64; BINS];
    for &v in gray.data() {
        hist[bin_of(v)] += 1;
    }
    if hist.iter().filter(|&&c| c > 0).count() < 2 {
        return Err(SegmentationError::DegenerateHistogram);
    }
    let n: u64 = hist.iter().sum();
    let s: u64 = hist.iter().enumerate().map(|(b, &c)| b as u64 * c).sum();
    let (mut n0, mut s0) = (0u64, 0u64);
    let mut best: Option<(usize, Score)> = None;
    for (k, &count) in hist.iter().enumerate().take(BINS - 1) {
        n0 += count;
        s0 += k as u64 * count;
        let n1 = n - n0;
        if n0 == 0 || n1 == 0 {
            continue;
        }
        let diff = (s0 as i128 * n as i128 - s as i128 * n0 as i128).unsigned_abs();
        let score = Score {
            num: diff * diff,
            den: n0 as u128 * n1 as u128,
        };
        if best.is_none_or(|(_, b)| score.cmp(&b) == Ordering::Greater) {
            best = Some((k, score));
        }
    }
    Ok(best.expect("two occupied bins give a valid split").0)
}

/// Otsu segmentation; the darker class is the lesion.
pub fn otsu_threshold(gray: &ImagePlane) -> Result<BinaryMask> {
    let k = otsu_threshold_bin(gray)?;
    Ok(BinaryMask::from_fn(gray.height(), gray.width(), |y, x| {
        bin_of(gray.get(y, x, 0)) <= k
    }))
}
