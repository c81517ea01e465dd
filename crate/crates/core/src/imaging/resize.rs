use super::{ImagePlane, ImagingError, Result};

/// Source sample position for output index `i` under half-pixel-center
/// alignment, clamped to the valid range.
fn source_coord(i: usize, in_len: usize, out_len: usize) -> (usize, usize, f64) {
    let scale = in_len as f64 / out_len as f64;
    let s = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (in_len - 1) as f64);
    let i0 = s.floor() as usize;
    let i1 = (i0 + 1).min(in_len - 1);
    (i0, i1, s - i0 as f64)
}

pub fn resize_bilinear(img: &ImagePlane, out_h: usize, out_w: usize) -> Result<ImagePlane> {
    if out_h == 0 || out_w == 0 {
        return Err(ImagingError::Empty(out_h, out_w));
    }
    let (h, w, c) = img.dims();
    let cols: Vec<_> = (0..out_w).map(|x| source_coord(x, w, out_w)).collect();
    let mut data = Vec::with_capacity(out_h * out_w * c);
    for y in 0..out_h {
        let (y0, y1, fy) = source_coord(y, h, out_h);
        for &(x0, x1, fx) in &cols {
            for ch in 0..c {
                let top = (1.0 - fx) * img.get(y0, x0, ch) + fx * img.get(y0, x1, ch);
                let bottom = (1.0 - fx) * img.get(y1, x0, ch) + fx * img.get(y1, x1, ch);
                data.push((1.0 - fy) * top + fy * bottom);
            }
        }
    }
    ImagePlane::new(out_h, out_w, c, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::rng;
    use rand::Rng;

    /// Interpolate along rows first into an intermediate buffer, then along
    /// columns, with the sampling positions recomputed from scratch.
    fn two_pass(img: &ImagePlane, oh: usize, ow: usize) -> Vec<f64> {
        let (h, w, c) = img.dims();
        let pos = |i: usize, n: usize, m: usize| -> f64 {
            let s = (i as f64 + 0.5) * (n as f64 / m as f64) - 0.5;
            s.max(0.0).min((n - 1) as f64)
        };
        let lerp = |a: f64, b: f64, t: f64| a + t * (b - a);
        let mut rows = vec![0.0; h * ow * c];
        for y in 0..h {
            for x in 0..ow {
                let s = pos(x, w, ow);
                let (a, b) = (s.floor() as usize, (s.floor() as usize + 1).min(w - 1));
                for ch in 0..c {
                    rows[(y * ow + x) * c + ch] = lerp(img.get(y, a, ch), img.get(y, b, ch), s - a as f64);
                }
            }
        }
        let mut out = vec![0.0; oh * ow * c];
        for y in 0..oh {
            let s = pos(y, h, oh);
            let (a, b) = (s.floor() as usize, (s.floor() as usize + 1).min(h - 1));
            for x in 0..ow {
                for ch in 0..c {
                    out[(y * ow + x) * c + ch] =
                        lerp(rows[(a * ow + x) * c + ch], rows[(b * ow + x) * c + ch], s - a as f64);
                }
            }
        }
        out
    }

    #[test]
    fn constant_stays_constant() {
        let img = ImagePlane::filled(3, 5, 3, 0.37).unwrap();
        for (h, w) in [(1, 1), (7, 2), (224, 224)] {
            let r = resize_bilinear(&img, h, w).unwrap();
            assert!(r.data().iter().all(|&v| (v - 0.37).abs() < 1e-15));
        }
    }

    #[test]
    fn horizontal_ramp_rows() {
        let img = ImagePlane::new(2, 2, 1, vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        let r = resize_bilinear(&img, 4, 4).unwrap();
        let first: Vec<f64> = (0..4).map(|x| r.get(0, x, 0)).collect();
        assert_eq!(first, vec![0.0, 0.25, 0.75, 1.0]);
        for y in 1..4 {
            for x in 0..4 {
                assert_eq!(r.get(y, x, 0), first[x]);
            }
        }
    }

    #[test]
    fn matches_separable_oracle() {
        let mut r = rng(11);
        let img = ImagePlane::from_fn(7, 5, 3, |_, _, _| r.random()).unwrap();
        let fast = resize_bilinear(&img, 224, 224).unwrap();
        let slow = two_pass(&img, 224, 224);
        for (a, b) in fast.data().iter().zip(&slow) {
            assert!((a - b).abs() < 1e-12);
        }
        // downscaling too
        let small = resize_bilinear(&fast, 9, 13).unwrap();
        for (a, b) in small.data().iter().zip(&two_pass(&fast, 9, 13)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_target_rejected() {
        let img = ImagePlane::filled(2, 2, 1, 0.0).unwrap();
        assert!(resize_bilinear(&img, 0, 3).is_err());
    }
}
