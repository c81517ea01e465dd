use super::{ImagePlane, ImagingError, Result};

/// Per-channel `k×k` median with replicated borders.
pub fn median_filter(img: &ImagePlane, k: usize) -> Result<ImagePlane> {
    if k % 2 == 0 {
        return Err(ImagingError::Precondition(format!("median window must be odd, got {k}")));
    }
    let (h, w, c) = img.dims();
    let r = (k / 2) as isize;
    let mut window = Vec::with_capacity(k * k);
    let mut data = Vec::with_capacity(h * w * c);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                window.clear();
                for dy in -r..=r {
                    let sy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
                    for dx in -r..=r {
                        let sx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
                        window.push(img.get(sy, sx, ch));
                    }
                }
                let mid = window.len() / 2;
                let (_, m, _) = window.select_nth_unstable_by(mid, f64::total_cmp);
                data.push(*m);
            }
        }
    }
    ImagePlane::new(h, w, c, data)
}
