//! Seeded synthetic dermoscopy-like images: a textured blob of random shape
//! and position on noisy skin. Only the texture inside the blob depends on
//! the class, so a classifier needs the lesion's style and not its location.

use crate::imaging::{ImagePlane, Result};
use crate::segmentation::BinaryMask;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::f64::consts::PI;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticLesion {
    pub image: ImagePlane,
    pub mask: BinaryMask,
    pub label: u8,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthParams {
    pub size: usize,
    /// Pixel noise standard deviation over the whole image.
    pub noise: f64,
    /// Texture amplitude inside the lesion.
    pub contrast: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            size: 64,
            noise: 0.03,
            contrast: 0.12,
        }
    }
}

/// Period in pixels of the grating planted in each class.
fn texture_period(label: u8) -> f64 {
    if label == 0 {
        12.0
    } else {
        3.5
    }
}

pub fn synth_lesion(seed: u64, label: u8, params: &SynthParams) -> Result<SyntheticLesion> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = params.size as f64;
    let r0 = rng.random_range(0.18..0.3) * n;
    let cy = rng.random_range(r0 * 1.1..n - r0 * 1.1);
    let cx = rng.random_range(r0 * 1.1..n - r0 * 1.1);
    let harmonics: Vec<(f64, f64)> = (2..5)
        .map(|_| (rng.random_range(0.0..0.12), rng.random_range(0.0..2.0 * PI)))
        .collect();
    let radius = |theta: f64| {
        r0 * (1.0
            + harmonics
                .iter()
                .enumerate()
                .map(|(k, &(a, phi))| a * ((k + 2) as f64 * theta + phi).cos())
                .sum::<f64>())
    };
    let skin = [
        rng.random_range(0.78..0.9),
        rng.random_range(0.6..0.72),
        rng.random_range(0.52..0.64),
    ];
    let lesion = [
        rng.random_range(0.38..0.52),
        rng.random_range(0.24..0.34),
        rng.random_range(0.16..0.26),
    ];
    let orient = rng.random_range(0.0..PI);
    let (so, co) = orient.sin_cos();
    let phase = rng.random_range(0.0..2.0 * PI);
    let freq = 2.0 * PI / texture_period(label);
    let noise = Normal::new(0.0, params.noise).expect("nonnegative noise");

    let mask = BinaryMask::from_fn(params.size, params.size, |y, x| {
        let (dy, dx) = (y as f64 + 0.5 - cy, x as f64 + 0.5 - cx);
        (dy * dy + dx * dx).sqrt() <= radius(dy.atan2(dx))
    });
    let image = ImagePlane::from_fn(params.size, params.size, 3, |y, x, c| {
        let base = if mask.get(y, x) {
            let u = (y as f64 * so + x as f64 * co) * freq + phase;
            lesion[c] + params.contrast * u.sin()
        } else {
            skin[c]
        };
        base + noise.sample(&mut rng)
    })?;
    Ok(SyntheticLesion { image, mask, label })
}

/// `count` images with alternating labels, seeded from `seed`.
pub fn synth_corpus(count: usize, seed: u64, params: &SynthParams) -> Result<Vec<SyntheticLesion>> {
    (0..count)
        .map(|i| synth_lesion(seed.wrapping_mul(1_000_003).wrapping_add(i as u64), (i % 2) as u8, params))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segmentation::{clean_mask, fill_holes, largest_component};

    #[test]
    fn deterministic_and_balanced() {
        let p = SynthParams::default();
        let a = synth_corpus(6, 1, &p).unwrap();
        assert_eq!(a, synth_corpus(6, 1, &p).unwrap());
        assert_ne!(a, synth_corpus(6, 2, &p).unwrap());
        assert_eq!(a.iter().filter(|l| l.label == 1).count(), 3);
    }

    #[test]
    fn mask_is_one_solid_blob() {
        for seed in 0..20 {
            let l = synth_lesion(seed, (seed % 2) as u8, &SynthParams::default()).unwrap();
            let frac = l.mask.count() as f64 / (64.0 * 64.0);
            assert!((0.05..0.5).contains(&frac), "{frac}");
            assert_eq!(largest_component(&l.mask).unwrap(), l.mask);
            assert_eq!(fill_holes(&l.mask), l.mask);
            assert!(clean_mask(&l.mask).unwrap().count() > 0);
        }
    }

    #[test]
    fn lesion_is_darker_than_skin() {
        let l = synth_lesion(3, 1, &SynthParams::default()).unwrap();
        let gray = l.image.to_gray();
        let (mut inside, mut outside) = ((0.0, 0), (0.0, 0));
        for y in 0..64 {
            for x in 0..64 {
                let acc = if l.mask.get(y, x) { &mut inside } else { &mut outside };
                acc.0 += gray.get(y, x, 0);
                acc.1 += 1;
            }
        }
        assert!(inside.0 / (inside.1 as f64) + 0.2 < outside.0 / (outside.1 as f64));
    }
}
