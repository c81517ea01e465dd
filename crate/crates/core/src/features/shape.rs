use super::{FeatureError, Result};
use crate::segmentation::BinaryMask;

/// Centroid and second central moments of a mask, with `x` the column and
/// `y` the row index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShapeMoments {
    pub x0: f64,
    pub y0: f64,
    pub m11: f64,
    pub m20: f64,
    pub m02: f64,
    /// Angle of the minimum-inertia axis from the x axis, in `(−π/2, π/2]`.
    pub theta: f64,
    pub area: usize,
}

pub fn compute_moments(mask: &BinaryMask) -> Result<ShapeMoments> {
    let area = mask.count();
    if area == 0 {
        return Err(FeatureError::EmptyMask);
    }
    let n = area as f64;
    let (mut sx, mut sy) = (0.0, 0.0);
    for (y, x) in mask.pixels() {
        sx += x as f64;
        sy += y as f64;
    }
    let (x0, y0) = (sx / n, sy / n);
    let (mut m11, mut m20, mut m02) = (0.0, 0.0, 0.0);
    for (y, x) in mask.pixels() {
        let (dx, dy) = (x as f64 - x0, y as f64 - y0);
        m11 += dx * dy;
        m20 += dx * dx;
        m02 += dy * dy;
    }
    let theta = if m11 == 0.0 && m20 == m02 {
        0.0
    } else {
        0.5 * (2.0 * m11).atan2(m20 - m02)
    };
    Ok(ShapeMoments {
        x0,
        y0,
        m11,
        m20,
        m02,
        theta,
        area,
    })
}

/// Rotates the foreground by `angle` (counter-clockwise in `x`-right,
/// `y`-down pixel coordinates) about the mask centroid, by inverse
/// nearest-neighbour lookup. The canvas is the bounding box of the rotated
/// input rectangle, so `angle == 0` reproduces the input exactly.
pub fn rotate_mask(mask: &BinaryMask, angle: f64) -> Result<BinaryMask> {
    let m = compute_moments(mask)?;
    if angle == 0.0 {
        return Ok(mask.clone());
    }
    let (s, c) = angle.sin_cos();
    let (h, w) = (mask.height() as f64, mask.width() as f64);
    let fwd = |x: f64, y: f64| {
        let (dx, dy) = (x - m.x0, y - m.y0);
        (m.x0 + c * dx - s * dy, m.y0 + s * dx + c * dy)
    };
    let corners = [(-0.5, -0.5), (w - 0.5, -0.5), (-0.5, h - 0.5), (w - 0.5, h - 0.5)].map(|(x, y)| fwd(x, y));
    let fold = |f: fn(f64, f64) -> f64, init: f64, pick: fn(&(f64, f64)) -> f64| corners.iter().map(pick).fold(init, f);
    let (xmin, xmax) = (fold(f64::min, f64::INFINITY, |p| p.0), fold(f64::max, f64::NEG_INFINITY, |p| p.0));
    let (ymin, ymax) = (fold(f64::min, f64::INFINITY, |p| p.1), fold(f64::max, f64::NEG_INFINITY, |p| p.1));
    let ox = (xmin + 0.5).round();
    let oy = (ymin + 0.5).round();
    let out_w = ((xmax - 0.5).round() - ox) as usize + 1;
    let out_h = ((ymax - 0.5).round() - oy) as usize + 1;
    Ok(BinaryMask::from_fn(out_h, out_w, |j, i| {
        let (dx, dy) = (i as f64 + ox - m.x0, j as f64 + oy - m.y0);
        let sx = (m.x0 + c * dx + s * dy).round();
        let sy = (m.y0 - s * dx + c * dy).round();
        sx >= 0.0 && sy >= 0.0 && sx < w && sy < h && mask.get(sy as usize, sx as usize)
    }))
}

fn iou(a: &BinaryMask, rows: bool, axis: usize) -> f64 {
    // reflect the part before the axis line onto the part after it
    let (h, w) = (a.height(), a.width());
    let (mut inter, mut union) = (0usize, 0usize);
    let extent = if rows { h } else { w };
    for k in axis + 1..extent {
        let mirror = (2 * axis).checked_sub(k);
        for o in 0..if rows { w } else { h } {
            let at = |kk: usize| if rows { a.get(kk, o) } else { a.get(o, kk) };
            let after = at(k);
            let before = mirror.is_some_and(at);
            inter += usize::from(after && before);
            union += usize::from(after || before);
        }
    }
    // mirrored pixels that land beyond the canvas still count in the union
    for k in 0..axis {
        if 2 * axis - k >= extent {
            for o in 0..if rows { w } else { h } {
                union += usize::from(if rows { a.get(k, o) } else { a.get(o, k) });
            }
        }
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// Shape asymmetry about the horizontal line `row` and the vertical line
/// `col`: IoU of the flipped upper (left) part with the lower (right) part.
/// Pixels on the axis lines belong to neither part.
pub fn sai_about(mask: &BinaryMask, row: usize, col: usize) -> (f64, f64) {
    (iou(mask, true, row), iou(mask, false, col))
}

/// [`sai_about`] through the centroid, rounded to the nearest pixel line.
pub fn sai(rotated: &BinaryMask) -> Result<(f64, f64)> {
    let m = compute_moments(rotated)?;
    Ok(sai_about(rotated, m.y0.round() as usize, m.x0.round() as usize))
}

/// Ratio `λ_min / λ_max` of the inertia matrix `[[m20, m11], [m11, m02]]`.
pub fn lengthening(m: &ShapeMoments) -> Result<f64> {
    if m.area < 4 {
        return Err(FeatureError::Degenerate(format!("area {} is too small for an inertia ratio", m.area)));
    }
    let half_tr = 0.5 * (m.m20 + m.m02);
    let root = (0.25 * (m.m20 - m.m02).powi(2) + m.m11 * m.m11).sqrt();
    let (lo, hi) = ((half_tr - root).max(0.0), half_tr + root);
    if hi == 0.0 {
        return Err(FeatureError::Degenerate("all foreground pixels coincide".into()));
    }
    Ok(lo / hi)
}

/// Foreground pixels whose 3×3 neighbourhood (zero outside the image)
/// contains background.
pub fn border_pixels(mask: &BinaryMask) -> usize {
    let (h, w) = (mask.height() as isize, mask.width() as isize);
    mask.pixels()
        .filter(|&(y, x)| {
            (-1..=1).any(|dy| {
                (-1..=1).any(|dx| {
                    let (ny, nx) = (y as isize + dy, x as isize + dx);
                    ny < 0 || nx < 0 || ny >= h || nx >= w || !mask.get(ny as usize, nx as usize)
                })
            })
        })
        .count()
}

/// `P² / (4πA)` with `P` the border-pixel count and `A` the area.
pub fn border_irregularity(mask: &BinaryMask) -> Result<f64> {
    let a = mask.count();
    if a == 0 {
        return Err(FeatureError::EmptyMask);
    }
    let p = border_pixels(mask) as f64;
    Ok(p * p / (4.0 * std::f64::consts::PI * a as f64))
}

/// Height and width of the tight bounding box.
pub fn diameter(mask: &BinaryMask) -> Result<(usize, usize)> {
    let mut it = mask.pixels();
    let (y, x) = it.next().ok_or(FeatureError::EmptyMask)?;
    let (mut r0, mut r1, mut c0, mut c1) = (y, y, x, x);
    for (y, x) in it {
        r0 = r0.min(y);
        r1 = r1.max(y);
        c0 = c0.min(x);
        c1 = c1.max(x);
    }
    Ok((r1 - r0 + 1, c1 - c0 + 1))
}
