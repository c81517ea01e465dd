//! Content, masked-Gram style and total-variation losses with their
//! gradients. Feature tensors are read as `M×N` matrices: every axis but the
//! last indexes spatial positions, the last indexes feature maps.

use super::{NstError, Result};
use crate::ndtensor::DenseTensor;

fn matrix_dims(f: &DenseTensor) -> (usize, usize) {
    let n = *f.shape().last().expect("tensors have rank ≥ 1");
    (f.len() / n, n)
}

/// Feature-map correlations `G = FᵀF`, `N×N`.
pub fn gram(f: &DenseTensor) -> DenseTensor {
    let (m, n) = matrix_dims(f);
    let d = f.data();
    let mut g = vec![0.0; n * n];
    for k in 0..m {
        let row = &d[k * n..(k + 1) * n];
        for i in 0..n {
            let a = row[i];
            if a == 0.0 {
                continue;
            }
            let dst = &mut g[i * n..(i + 1) * n];
            for j in i..n {
                dst[j] += a * row[j];
            }
        }
    }
    for i in 0..n {
        for j in 0..i {
            g[i * n + j] = g[j * n + i];
        }
    }
    DenseTensor::new(vec![n, n], g).expect("n×n buffer")
}

/// Scales every column of `F` elementwise by the vectorized mask `t`.
pub fn mask_features(f: &DenseTensor, t: &[f64]) -> Result<DenseTensor> {
    let (m, n) = matrix_dims(f);
    if t.len() != m {
        return Err(NstError::Shape(format!("mask has {} entries, features have {m} positions", t.len())));
    }
    let mut out = f.clone();
    for (row, &w) in out.data_mut().chunks_exact_mut(n).zip(t) {
        row.iter_mut().for_each(|v| *v *= w);
    }
    Ok(out)
}

/// `½ Σ (F − P)²` and its gradient `F − P`.
pub fn content_loss(f: &DenseTensor, p: &DenseTensor) -> Result<(f64, DenseTensor)> {
    let diff = f.sub(p)?;
    let loss = 0.5 * diff.data().iter().map(|v| v * v).sum::<f64>();
    Ok((loss, diff))
}

/// `E = Σ (G − Ã)² / (4 N² M²)` with `G = gram(F̃)`, and `∂E/∂F̃ = F̃ (G − Ã) / (N² M²)`.
pub fn style_layer_loss(f_masked: &DenseTensor, target: &DenseTensor) -> Result<(f64, DenseTensor)> {
    let (m, n) = matrix_dims(f_masked);
    if target.shape() != [n, n] {
        return Err(NstError::Shape(format!("style target is {:?}, expected [{n}, {n}]", target.shape())));
    }
    let g = gram(f_masked);
    let diff = g.sub(target)?;
    let (mf, nf) = (m as f64, n as f64);
    let loss = diff.data().iter().map(|v| v * v).sum::<f64>() / (4.0 * nf * nf * mf * mf);
    let scale = 1.0 / (nf * nf * mf * mf);
    let d = diff.data();
    let mut seed = DenseTensor::zeros(f_masked.shape());
    for (src, dst) in f_masked.data().chunks_exact(n).zip(seed.data_mut().chunks_exact_mut(n)) {
        for (i, &a) in src.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            for (o, &dij) in dst.iter_mut().zip(&d[i * n..(i + 1) * n]) {
                *o += a * dij;
            }
        }
        dst.iter_mut().for_each(|v| *v *= scale);
    }
    Ok((loss, seed))
}

/// Anisotropic total variation of an `H×W×C` image, channels summed, with
/// subgradient 0 wherever a difference is exactly 0.
pub fn tv_loss(x: &DenseTensor) -> Result<(f64, DenseTensor)> {
    let (h, w, c) = x.hwc("tv_loss")?;
    let d = x.data();
    let mut grad = DenseTensor::zeros(x.shape());
    let g = grad.data_mut();
    let mut loss = 0.0;
    let idx = |y: usize, xx: usize, ch: usize| (y * w + xx) * c + ch;
    for y in 0..h {
        for xx in 0..w {
            for ch in 0..c {
                let here = idx(y, xx, ch);
                let mut term = |other: usize| {
                    let diff = d[here] - d[other];
                    loss += diff.abs();
                    let s = if diff > 0.0 {
                        1.0
                    } else if diff < 0.0 {
                        -1.0
                    } else {
                        0.0
                    };
                    g[here] += s;
                    g[other] -= s;
                };
                if y + 1 < h {
                    term(idx(y + 1, xx, ch));
                }
                if xx + 1 < w {
                    term(idx(y, xx + 1, ch));
                }
            }
        }
    }
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{finite_diff_check, random_tensor};

    fn naive_gram(f: &DenseTensor) -> Vec<f64> {
        let (m, n) = matrix_dims(f);
        let mut g = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                for k in 0..m {
                    g[i * n + j] += f.data()[k * n + i] * f.data()[k * n + j];
                }
            }
        }
        g
    }

    #[test]
    fn gram_examples() {
        let ones = DenseTensor::filled(&[4, 2], 1.0);
        assert_eq!(gram(&ones).data(), &[4.0, 4.0, 4.0, 4.0]);
        let orth = DenseTensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(gram(&orth).data(), &[1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn gram_matches_double_loop() {
        for seed in 0..20 {
            let f = random_tensor(&[12, 5], seed);
            let g = gram(&f);
            for (a, b) in g.data().iter().zip(naive_gram(&f)) {
                assert!((a - b).abs() <= 1e-12);
            }
            for i in 0..5 {
                for j in 0..5 {
                    assert_eq!(g.data()[i * 5 + j], g.data()[j * 5 + i]);
                }
            }
        }
    }

    #[test]
    fn mask_examples() {
        let f = random_tensor(&[3, 2, 4], 1);
        assert_eq!(mask_features(&f, &[1.0; 6]).unwrap(), f);
        assert_eq!(mask_features(&f, &[0.0; 6]).unwrap().max_abs(), 0.0);
        assert!(mask_features(&f, &[1.0; 5]).is_err());
    }

    #[test]
    fn half_plane_mask_equals_row_subset() {
        let f = random_tensor(&[10, 3], 4);
        let t: Vec<f64> = (0..10).map(|i| if i < 4 { 0.5 } else { 0.0 }).collect();
        let g = gram(&mask_features(&f, &t).unwrap());
        let mut expect = [0.0; 9];
        for k in 0..4 {
            for i in 0..3 {
                for j in 0..3 {
                    expect[i * 3 + j] += 0.25 * f.data()[k * 3 + i] * f.data()[k * 3 + j];
                }
            }
        }
        for (a, b) in g.data().iter().zip(expect) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn uniform_mask_scales_gram() {
        for seed in 0..10 {
            let f = random_tensor(&[7, 6, 5], seed);
            let m = 42.0f64;
            let t = vec![1.0 / m.sqrt(); 42];
            let masked = gram(&mask_features(&f, &t).unwrap());
            let plain = gram(&f);
            for (a, b) in masked.data().iter().zip(plain.data()) {
                assert!((a - b / m).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn content_loss_examples() {
        let p = random_tensor(&[10], 2);
        let (l, s) = content_loss(&p, &p).unwrap();
        assert_eq!(l, 0.0);
        assert_eq!(s.max_abs(), 0.0);
        let f = p.map(|v| v + 1.0);
        assert!((content_loss(&f, &p).unwrap().0 - 5.0).abs() < 1e-12);
        assert!(content_loss(&f, &DenseTensor::zeros(&[9])).is_err());
    }

    #[test]
    fn content_gradient() {
        for seed in 0..20 {
            let f = random_tensor(&[4, 4, 3], seed);
            let p = random_tensor(&[4, 4, 3], seed + 100);
            let (_, s) = content_loss(&f, &p).unwrap();
            let err = finite_diff_check(&f, &s, |x| content_loss(x, &p).unwrap().0);
            assert!(err <= 1e-6, "{err}");
        }
    }

    #[test]
    fn style_examples() {
        let f = DenseTensor::new(vec![2, 1], vec![1.0, 1.0]).unwrap();
        let (e, _) = style_layer_loss(&f, &DenseTensor::zeros(&[1, 1])).unwrap();
        assert!((e - 0.25).abs() < 1e-15);
        let f = random_tensor(&[6, 3], 3);
        let (e, s) = style_layer_loss(&f, &gram(&f)).unwrap();
        assert_eq!(e, 0.0);
        assert_eq!(s.max_abs(), 0.0);
    }

    #[test]
    fn style_gradient() {
        for seed in 0..20 {
            let f = random_tensor(&[3, 4, 5], seed);
            let a = gram(&random_tensor(&[3, 4, 5], seed + 50));
            let (_, s) = style_layer_loss(&f, &a).unwrap();
            let err = finite_diff_check(&f, &s, |x| style_layer_loss(x, &a).unwrap().0);
            assert!(err <= 1e-5, "{err}");
        }
    }

    #[test]
    fn gram_scales_quadratically() {
        let f = random_tensor(&[5, 4], 8);
        let g = gram(&f);
        let g3 = gram(&f.scale(3.0));
        for (a, b) in g3.data().iter().zip(g.data()) {
            assert!((a - 9.0 * b).abs() <= 1e-12);
        }
    }

    #[test]
    fn tv_examples() {
        assert_eq!(tv_loss(&DenseTensor::filled(&[3, 4, 3], 0.3)).unwrap().0, 0.0);
        let x = DenseTensor::new(vec![2, 2, 1], vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        assert_eq!(tv_loss(&x).unwrap().0, 2.0);
    }

    #[test]
    fn tv_gradient() {
        for seed in 0..20 {
            let x = random_tensor(&[5, 6, 3], seed);
            let (_, g) = tv_loss(&x).unwrap();
            let err = finite_diff_check(&x, &g, |p| tv_loss(p).unwrap().0);
            assert!(err <= 1e-6, "{err}");
        }
    }
}
