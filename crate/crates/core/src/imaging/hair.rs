//! DullRazor-style hair removal.
//!
//! Thin dark structures are found with a generalized grayscale closing (the
//! pointwise maximum of closings by three linear structuring elements at 0°,
//! 45° and 90°), applied to each channel separately. Pixels whose closing
//! rises above the original by more than the threshold in any channel form
//! the candidate mask; only 8-connected candidate components whose bounding
//! box spans at least `min_length` pixels are kept, so compact dark dots and
//! lesion-border slivers are not mistaken for hair. Each masked pixel is then
//! replaced by linear interpolation between the nearest unmasked pixels on
//! either side of the hair, walking perpendicular to the local hair direction.

use super::{ImagePlane, ImagingError, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HairParams {
    /// Closing-minus-original response (in `[0, 1]` units) above which a
    /// pixel is flagged as hair.
    pub threshold: f64,
    /// Length of each linear structuring element, odd.
    pub element_length: usize,
    /// Minimum bounding-box extent of a connected candidate region.
    pub min_length: usize,
    /// Farthest a replacement search walks from a hair pixel.
    pub max_search: usize,
}

impl Default for HairParams {
    fn default() -> Self {
        Self {
            threshold: 0.07,
            element_length: 9,
            min_length: 18,
            max_search: 18,
        }
    }
}

/// Unit steps (dy, dx) for 0°, 45°, 90° and 135° lines.
const DIRECTIONS: [(isize, isize); 4] = [(0, 1), (-1, 1), (1, 0), (1, 1)];

fn perpendicular(dir: usize) -> usize {
    // 0° <-> 90°, 45° <-> 135°
    [2, 3, 0, 1][dir]
}

struct Plane<'a> {
    h: usize,
    w: usize,
    v: &'a [f64],
}

impl Plane<'_> {
    fn at(&self, y: isize, x: isize) -> f64 {
        let y = y.clamp(0, self.h as isize - 1) as usize;
        let x = x.clamp(0, self.w as isize - 1) as usize;
        self.v[y * self.w + x]
    }
}

/// Flat morphology along one line direction: `dilate == true` takes the
/// window maximum, otherwise the minimum. Borders replicate.
fn line_filter(h: usize, w: usize, src: &[f64], dir: (isize, isize), half: isize, dilate: bool) -> Vec<f64> {
    let p = Plane { h, w, v: src };
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h as isize {
        for x in 0..w as isize {
            let mut acc = p.at(y, x);
            for t in -half..=half {
                let v = p.at(y + t * dir.0, x + t * dir.1);
                acc = if dilate { acc.max(v) } else { acc.min(v) };
            }
            out.push(acc);
        }
    }
    out
}

/// Boolean hair mask (row-major, `H×W`).
pub fn hair_mask(img: &ImagePlane, params: &HairParams) -> Result<Vec<bool>> {
    if params.element_length % 2 == 0 || params.element_length == 0 {
        return Err(ImagingError::Precondition(format!(
            "structuring element length must be odd, got {}",
            params.element_length
        )));
    }
    let (h, w, c) = img.dims();
    let half = (params.element_length / 2) as isize;
    let mut mask = vec![false; h * w];
    for ch in 0..c {
        let plane = img.channel(ch);
        let src = plane.data();
        let mut closed = vec![f64::NEG_INFINITY; h * w];
        for dir in [DIRECTIONS[0], DIRECTIONS[1], DIRECTIONS[2]] {
            let dilated = line_filter(h, w, src, dir, half, true);
            let closing = line_filter(h, w, &dilated, dir, half, false);
            for (c, v) in closed.iter_mut().zip(closing) {
                *c = c.max(v);
            }
        }
        for (m, (cl, &orig)) in mask.iter_mut().zip(closed.iter().zip(src)) {
            if cl - orig > params.threshold {
                *m = true;
            }
        }
    }
    drop_short_components(h, w, &mut mask, params.min_length);
    Ok(mask)
}

fn drop_short_components(h: usize, w: usize, mask: &mut [bool], min_length: usize) {
    let mut seen = vec![false; h * w];
    let mut stack = Vec::new();
    let mut members = Vec::new();
    for start in 0..h * w {
        if !mask[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        members.clear();
        let (mut y0, mut y1, mut x0, mut x1) = (usize::MAX, 0, usize::MAX, 0);
        while let Some(i) = stack.pop() {
            members.push(i);
            let (y, x) = (i / w, i % w);
            (y0, y1, x0, x1) = (y0.min(y), y1.max(y), x0.min(x), x1.max(x));
            for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    let (ny, nx) = (y as isize + dy, x as isize + dx);
                    if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if mask[j] && !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        if (y1 - y0 + 1).max(x1 - x0 + 1) < min_length {
            for &i in &members {
                mask[i] = false;
            }
        }
    }
}

pub fn remove_hair(img: &ImagePlane) -> Result<ImagePlane> {
    remove_hair_with(img, &HairParams::default())
}

pub fn remove_hair_with(img: &ImagePlane, params: &HairParams) -> Result<ImagePlane> {
    if img.channels() != 3 {
        return Err(ImagingError::Precondition("hair removal needs an RGB image".into()));
    }
    let mask = hair_mask(img, params)?;
    if !mask.iter().any(|&m| m) {
        return Ok(img.clone());
    }
    let (h, w, _) = img.dims();
    let inside = |y: isize, x: isize| y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w;
    let is_hair = |y: isize, x: isize| inside(y, x) && mask[y as usize * w + x as usize];

    let run_length = |y: isize, x: isize, (dy, dx): (isize, isize)| -> usize {
        let mut n = 1;
        for sign in [1, -1] {
            let mut t = 1;
            while t <= 4 * params.max_search as isize && is_hair(y + sign * t * dy, x + sign * t * dx) {
                n += 1;
                t += 1;
            }
        }
        n
    };
    // nearest non-hair pixel walking from (y, x) along `dir`
    let walk = |y: isize, x: isize, (dy, dx): (isize, isize)| -> Option<(usize, usize, f64)> {
        for t in 1..=params.max_search as isize {
            let (yy, xx) = (y + t * dy, x + t * dx);
            if !inside(yy, xx) {
                return None;
            }
            if !is_hair(yy, xx) {
                return Some((yy as usize, xx as usize, t as f64));
            }
        }
        None
    };

    let mut out = img.clone();
    for y in 0..h as isize {
        for x in 0..w as isize {
            if !is_hair(y, x) {
                continue;
            }
            let along = (0..4)
                .max_by_key(|&d| (run_length(y, x, DIRECTIONS[d]), std::cmp::Reverse(d)))
                .unwrap_or(0);
            // try the perpendicular first, then the remaining directions
            let mut order = vec![perpendicular(along)];
            order.extend((0..4).filter(|&d| d != perpendicular(along) && d != along));
            order.push(along);
            for d in order {
                let (dy, dx) = DIRECTIONS[d];
                let fwd = walk(y, x, (dy, dx));
                let back = walk(y, x, (-dy, -dx));
                let value = |c: usize| match (fwd, back) {
                    (Some((ay, ax, da)), Some((by, bx, db))) => {
                        Some((db * img.get(ay, ax, c) + da * img.get(by, bx, c)) / (da + db))
                    }
                    (Some((ay, ax, _)), None) => Some(img.get(ay, ax, c)),
                    (None, Some((by, bx, _))) => Some(img.get(by, bx, c)),
                    (None, None) => None,
                };
                if value(0).is_some() {
                    for c in 0..3 {
                        out.set(y as usize, x as usize, c, value(c).unwrap());
                    }
                    break;
                }
            }
        }
    }
    Ok(out)
}
