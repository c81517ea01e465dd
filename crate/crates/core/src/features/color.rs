use super::{FeatureError, Result};
use crate::imaging::ImagePlane;
use crate::segmentation::BinaryMask;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// One color class: an inclusive RGB box in `[0, 1]` units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColorBox {
    pub name: String,
    pub rgb_min: [f64; 3],
    pub rgb_max: [f64; 3],
}

impl ColorBox {
    pub fn contains(&self, rgb: &[f64]) -> bool {
        (0..3).all(|c| self.rgb_min[c] <= rgb[c] && rgb[c] <= self.rgb_max[c])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ColorTable {
    pub colors: Vec<ColorBox>,
}

const DEFAULT_TABLE: &str = include_str!("../../data/color_table.json");

/// Number of color classes in an ABCD vector.
pub const COLOR_COUNT: usize = 6;

impl Default for ColorTable {
    /// White, red, light brown, dark brown, blue gray, black. Approximate
    /// boxes, not checked against the published threshold figure.
    fn default() -> Self {
        Self::from_json(DEFAULT_TABLE).expect("bundled color table parses")
    }
}

impl ColorTable {
    pub fn from_json(text: &str) -> Result<Self> {
        let table: ColorTable = serde_json::from_str(text).map_err(|e| FeatureError::ColorTable(e.to_string()))?;
        if table.colors.len() != COLOR_COUNT {
            return Err(FeatureError::ColorTable(format!(
                "expected {COLOR_COUNT} colors, found {}",
                table.colors.len()
            )));
        }
        for b in &table.colors {
            let ok = (0..3).all(|c| 0.0 <= b.rgb_min[c] && b.rgb_min[c] <= b.rgb_max[c] && b.rgb_max[c] <= 1.0);
            if !ok {
                return Err(FeatureError::ColorTable(format!("box {:?} is not an ordered subset of [0,1]³", b.name)));
            }
        }
        Ok(table)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| FeatureError::ColorTable(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

pub(super) fn check_pair(img: &ImagePlane, mask: &BinaryMask) -> Result<()> {
    if img.channels() != 3 || (img.height(), img.width()) != (mask.height(), mask.width()) {
        return Err(FeatureError::Shape(format!(
            "image {:?} does not pair with a {}×{} mask",
            img.dims(),
            mask.height(),
            mask.width()
        )));
    }
    if mask.is_empty() {
        return Err(FeatureError::EmptyMask);
    }
    Ok(())
}

/// Fraction of in-mask pixels inside each color box, in table order.
pub fn color_proportions(img: &ImagePlane, mask: &BinaryMask, table: &ColorTable) -> Result<Vec<f64>> {
    check_pair(img, mask)?;
    let mut hits = vec![0usize; table.colors.len()];
    for (y, x) in mask.pixels() {
        let rgb = img.pixel(y, x);
        for (h, b) in hits.iter_mut().zip(&table.colors) {
            *h += usize::from(b.contains(rgb));
        }
    }
    let n = mask.count() as f64;
    Ok(hits.into_iter().map(|h| h as f64 / n).collect())
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let pos = (sorted.len() - 1) as f64 * p;
    let lo = pos.floor() as usize;
    let frac = pos - lo as f64;
    match sorted.get(lo + 1) {
        Some(&next) if frac > 0.0 => sorted[lo] + frac * (next - sorted[lo]),
        _ => sorted[lo],
    }
}

/// Per channel over in-mask pixels: min, Q1, median, Q3, max, mean and
/// population standard deviation, channels in R, G, B order.
pub fn channel_summaries(img: &ImagePlane, mask: &BinaryMask) -> Result<Vec<f64>> {
    check_pair(img, mask)?;
    let mut out = Vec::with_capacity(21);
    for c in 0..3 {
        let mut v: Vec<f64> = mask.pixels().map(|(y, x)| img.get(y, x, c)).collect();
        v.sort_by(f64::total_cmp);
        let n = v.len() as f64;
        let (mean, var) = if v[0] == v[v.len() - 1] {
            (v[0], 0.0)
        } else {
            let mean = v.iter().sum::<f64>() / n;
            (mean, v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n)
        };
        out.extend([
            v[0],
            quantile_sorted(&v, 0.25),
            quantile_sorted(&v, 0.5),
            quantile_sorted(&v, 0.75),
            v[v.len() - 1],
            mean,
            var.sqrt(),
        ]);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::rng;
    use rand::Rng;

    fn random_pair(seed: u64) -> (ImagePlane, BinaryMask) {
        let mut r = rng(seed);
        let img = ImagePlane::from_fn(20, 24, 3, |_, _, _| r.random::<f64>()).unwrap();
        let mask = BinaryMask::from_fn(20, 24, |_, _| r.random::<f64>() < 0.4);
        (img, mask)
    }

    #[test]
    fn default_table_loads() {
        let t = ColorTable::default();
        let names: Vec<&str> = t.colors.iter().map(|b| b.name.as_str()).collect();
        assert_eq!(names, ["white", "red", "light_brown", "dark_brown", "blue_gray", "black"]);
        assert!(ColorTable::from_json("[]").is_err());
        let bad = DEFAULT_TABLE.replace("[0.8, 0.8, 0.8]", "[1.2, 0.8, 0.8]");
        assert!(ColorTable::from_json(&bad).is_err());
    }

    #[test]
    fn black_lesion() {
        let img = ImagePlane::filled(10, 10, 3, 0.05).unwrap();
        let mask = BinaryMask::from_fn(10, 10, |y, _| y < 5);
        let p = color_proportions(&img, &mask, &ColorTable::default()).unwrap();
        assert_eq!(p, vec![0.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn half_in_box() {
        let img = ImagePlane::from_fn(4, 4, 3, |y, _, _| if y < 2 { 0.9 } else { 0.5 }).unwrap();
        let mask = BinaryMask::from_fn(4, 4, |_, _| true);
        assert_eq!(color_proportions(&img, &mask, &ColorTable::default()).unwrap()[0], 0.5);
    }

    #[test]
    fn proportions_match_scan() {
        let table = ColorTable::default();
        for seed in 0..10 {
            let (img, mask) = random_pair(seed);
            let got = color_proportions(&img, &mask, &table).unwrap();
            for (k, b) in table.colors.iter().enumerate() {
                let (mut inside, mut total) = (0.0, 0.0);
                for y in 0..20 {
                    for x in 0..24 {
                        if !mask.get(y, x) {
                            continue;
                        }
                        total += 1.0;
                        let px = [img.get(y, x, 0), img.get(y, x, 1), img.get(y, x, 2)];
                        if px.iter().zip(b.rgb_min.iter().zip(&b.rgb_max)).all(|(v, (lo, hi))| lo <= v && v <= hi) {
                            inside += 1.0;
                        }
                    }
                }
                assert!((got[k] - inside / total).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn constant_region_summaries() {
        let img = ImagePlane::filled(5, 5, 3, 0.25).unwrap();
        let mask = BinaryMask::from_fn(5, 5, |y, x| y > x);
        let s = channel_summaries(&img, &mask).unwrap();
        assert_eq!(s.len(), 21);
        for c in 0..3 {
            assert_eq!(&s[c * 7..c * 7 + 6], &[0.25; 6]);
            assert_eq!(s[c * 7 + 6], 0.0);
        }
    }

    #[test]
    fn three_value_summaries() {
        let vals = [0.0, 0.5, 1.0];
        let img = ImagePlane::from_fn(1, 3, 3, |_, x, _| vals[x]).unwrap();
        let mask = BinaryMask::from_fn(1, 3, |_, _| true);
        let s = channel_summaries(&img, &mask).unwrap();
        assert_eq!(&s[..6], &[0.0, 0.25, 0.5, 0.75, 1.0, 0.5]);
        assert!((s[6] - (1.0f64 / 6.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn summaries_match_sort_oracle() {
        for seed in 0..10 {
            let (img, mask) = random_pair(seed);
            let s = channel_summaries(&img, &mask).unwrap();
            for c in 0..3 {
                let mut v: Vec<f64> = (0..20 * 24)
                    .filter(|i| mask.get(i / 24, i % 24))
                    .map(|i| img.get(i / 24, i % 24, c))
                    .collect();
                v.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let n = v.len();
                let q = |p: f64| {
                    let h = (n - 1) as f64 * p;
                    let (lo, hi) = (h.floor() as usize, h.ceil() as usize);
                    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
                };
                let mean = v.iter().sum::<f64>() / n as f64;
                let sd = (v.iter().map(|x| x * x).sum::<f64>() / n as f64 - mean * mean).sqrt();
                let expect = [v[0], q(0.25), q(0.5), q(0.75), v[n - 1], mean, sd];
                for (a, b) in s[c * 7..c * 7 + 7].iter().zip(expect) {
                    assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn shape_errors() {
        let img = ImagePlane::filled(4, 4, 3, 0.5).unwrap();
        assert!(matches!(channel_summaries(&img, &BinaryMask::zeros(4, 4)), Err(FeatureError::EmptyMask)));
        assert!(matches!(channel_summaries(&img, &BinaryMask::zeros(4, 5)), Err(FeatureError::Shape(_))));
        let gray = ImagePlane::filled(4, 4, 1, 0.5).unwrap();
        assert!(matches!(
            color_proportions(&gray, &BinaryMask::from_fn(4, 4, |_, _| true), &ColorTable::default()),
            Err(FeatureError::Shape(_))
        ));
    }
}
