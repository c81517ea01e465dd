//! 2D "same" convolution (stride 1, zero padding) over `H×W×C` tensors with
//! `k×k×Cin×Cout` kernels, and its reverse pass to the input.

use super::{mismatch, DenseTensor, Result};

fn check_kernel(
    op: &'static str,
    input_channels: usize,
    kernels: &DenseTensor,
) -> Result<(usize, usize)> {
    let (k, kw, cin, cout) = match kernels.shape() {
        &[k, kw, cin, cout] => (k, kw, cin, cout),
        other => return Err(mismatch(op, format!("kernel must be k×k×Cin×Cout, got {other:?}"))),
    };
    if k != kw || k % 2 == 0 {
        return Err(mismatch(op, format!("kernel must be square with odd extent, got {k}×{kw}")));
    }
    if cin != input_channels {
        return Err(mismatch(
            op,
            format!("kernel expects {cin} input channels, input has {input_channels}"),
        ));
    }
    Ok((k, cout))
}

pub fn conv2d_forward(
    input: &DenseTensor,
    kernels: &DenseTensor,
    bias: &[f64],
) -> Result<DenseTensor> {
    const OP: &str = "conv2d_forward";
    let (h, w, cin) = input.hwc(OP)?;
    let (k, cout) = check_kernel(OP, cin, kernels)?;
    if bias.len() != cout {
        return Err(mismatch(OP, format!("bias has {} entries, kernel has {cout} outputs", bias.len())));
    }
    let pad = k / 2;
    let x = input.data();
    let wts = kernels.data();
    let mut out = vec![0.0; h * w * cout];

    for y in 0..h {
        for xo in 0..w {
            let acc = &mut out[(y * w + xo) * cout..(y * w + xo + 1) * cout];
            acc.copy_from_slice(bias);
            for ky in 0..k {
                let Some(iy) = (y + ky).checked_sub(pad).filter(|&v| v < h) else {
                    continue;
                };
                for kx in 0..k {
                    let Some(ix) = (xo + kx).checked_sub(pad).filter(|&v| v < w) else {
                        continue;
                    };
                    let px = &x[(iy * w + ix) * cin..(iy * w + ix + 1) * cin];
                    let wbase = (ky * k + kx) * cin * cout;
                    for (ci, &v) in px.iter().enumerate() {
                        let wrow = &wts[wbase + ci * cout..wbase + (ci + 1) * cout];
                        for (a, &wv) in acc.iter_mut().zip(wrow) {
                            *a += v * wv;
                        }
                    }
                }
            }
        }
    }
    DenseTensor::new(vec![h, w, cout], out)
}

/// Gradient of `⟨grad_out, conv2d_forward(input, kernels, ·)⟩` with respect to
/// the input. Kernels are frozen, so no weight gradient is produced.
pub fn conv2d_backward(
    grad_out: &DenseTensor,
    input: &DenseTensor,
    kernels: &DenseTensor,
) -> Result<DenseTensor> {
    const OP: &str = "conv2d_backward";
    let (h, w, cin) = input.hwc(OP)?;
    let (k, cout) = check_kernel(OP, cin, kernels)?;
    if grad_out.shape() != [h, w, cout] {
        return Err(mismatch(
            OP,
            format!("grad_out is {:?}, forward output is {:?}", grad_out.shape(), [h, w, cout]),
        ));
    }
    let pad = k / 2;
    let g = grad_out.data();
    let wts = kernels.data();
    let mut grad_in = vec![0.0; h * w * cin];

    for iy in 0..h {
        for ix in 0..w {
            let dst = &mut grad_in[(iy * w + ix) * cin..(iy * w + ix + 1) * cin];
            for ky in 0..k {
                // output row whose window places tap `ky` on input row `iy`
                let Some(oy) = (iy + pad).checked_sub(ky).filter(|&v| v < h) else {
                    continue;
                };
                for kx in 0..k {
                    let Some(ox) = (ix + pad).checked_sub(kx).filter(|&v| v < w) else {
                        continue;
                    };
                    let gpx = &g[(oy * w + ox) * cout..(oy * w + ox + 1) * cout];
                    let wbase = (ky * k + kx) * cin * cout;
                    for (ci, d) in dst.iter_mut().enumerate() {
                        let wrow = &wts[wbase + ci * cout..wbase + (ci + 1) * cout];
                        *d += gpx.iter().zip(wrow).map(|(a, b)| a * b).sum::<f64>();
                    }
                }
            }
        }
    }
    DenseTensor::new(vec![h, w, cin], grad_in)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{finite_diff_check, random_tensor};

    /// Six nested loops, written independently of the implementation.
    fn naive_conv(input: &DenseTensor, kernels: &DenseTensor, bias: &[f64]) -> DenseTensor {
        let (h, w, cin) = (input.shape()[0], input.shape()[1], input.shape()[2]);
        let (k, cout) = (kernels.shape()[0], kernels.shape()[3]);
        let p = (k / 2) as isize;
        let at = |y: usize, x: usize, c: usize| input.data()[(y * w + x) * cin + c];
        let wt = |a: usize, b: usize, c: usize, d: usize| {
            kernels.data()[((a * k + b) * cin + c) * cout + d]
        };
        let mut out = DenseTensor::zeros(&[h, w, cout]);
        for y in 0..h {
            for x in 0..w {
                for co in 0..cout {
                    let mut acc = bias[co];
                    for ky in 0..k {
                        for kx in 0..k {
                            for ci in 0..cin {
                                let sy = y as isize + ky as isize - p;
                                let sx = x as isize + kx as isize - p;
                                if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                    continue;
                                }
                                acc += at(sy as usize, sx as usize, ci) * wt(ky, kx, ci, co);
                            }
                        }
                    }
                    out.data_mut()[(y * w + x) * cout + co] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn scalar_affine() {
        let x = DenseTensor::new(vec![1, 1, 1], vec![5.0]).unwrap();
        let k = DenseTensor::new(vec![1, 1, 1, 1], vec![2.0]).unwrap();
        let y = conv2d_forward(&x, &k, &[1.0]).unwrap();
        assert_eq!(y.data(), &[11.0]);
    }

    #[test]
    fn overlap_counts_on_ones() {
        let x = DenseTensor::filled(&[3, 3, 1], 1.0);
        let k = DenseTensor::filled(&[3, 3, 1, 1], 1.0);
        let y = conv2d_forward(&x, &k, &[0.0]).unwrap();
        assert_eq!(y.data(), &[4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0]);
    }

    #[test]
    fn matches_naive_loops_bit_for_bit() {
        for seed in 0..20 {
            let x = random_tensor(&[5, 5, 2], seed);
            let k = random_tensor(&[3, 3, 2, 4], seed + 100);
            let b = random_tensor(&[4], seed + 200);
            let fast = conv2d_forward(&x, &k, b.data()).unwrap();
            let slow = naive_conv(&x, &k, b.data());
            assert_eq!(fast.data(), slow.data(), "seed {seed}");
        }
    }

    #[test]
    fn shape_errors_are_descriptive() {
        let x = DenseTensor::zeros(&[4, 4, 3]);
        let k = DenseTensor::zeros(&[3, 3, 2, 5]);
        let err = conv2d_forward(&x, &k, &[0.0; 5]).unwrap_err();
        assert!(err.to_string().contains("input channels"), "{err}");
        let even = DenseTensor::zeros(&[2, 2, 3, 5]);
        assert!(conv2d_forward(&x, &even, &[0.0; 5]).is_err());
        let k = DenseTensor::zeros(&[3, 3, 3, 5]);
        assert!(conv2d_forward(&x, &k, &[0.0; 4]).is_err());
        let bad_grad = DenseTensor::zeros(&[4, 4, 4]);
        assert!(conv2d_backward(&bad_grad, &x, &k).is_err());
    }

    #[test]
    fn zero_grad_gives_zero_input_grad() {
        let x = random_tensor(&[4, 5, 3], 1);
        let k = random_tensor(&[3, 3, 3, 2], 2);
        let g = DenseTensor::zeros(&[4, 5, 2]);
        let gi = conv2d_backward(&g, &x, &k).unwrap();
        assert!(gi.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scalar_backward() {
        let x = DenseTensor::new(vec![1, 1, 1], vec![5.0]).unwrap();
        let k = DenseTensor::new(vec![1, 1, 1, 1], vec![2.0]).unwrap();
        let g = DenseTensor::new(vec![1, 1, 1], vec![3.0]).unwrap();
        assert_eq!(conv2d_backward(&g, &x, &k).unwrap().data(), &[6.0]);
    }

    #[test]
    fn backward_matches_finite_differences() {
        for seed in 0..20 {
            let x = random_tensor(&[5, 4, 3], seed);
            let k = random_tensor(&[3, 3, 3, 2], seed + 50);
            let b = random_tensor(&[2], seed + 75);
            let g = random_tensor(&[5, 4, 2], seed + 99);
            let analytic = conv2d_backward(&g, &x, &k).unwrap();
            let err = finite_diff_check(&x, &analytic, |probe| {
                conv2d_forward(probe, &k, b.data()).unwrap().dot(&g).unwrap()
            });
            assert!(err <= 1e-5, "seed {seed}: rel err {err}");
        }
    }
}
