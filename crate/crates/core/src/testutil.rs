//! Shared fixtures for unit tests.

use crate::ndtensor::DenseTensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform entries in `[-1, 1)`.
pub fn random_tensor(shape: &[usize], seed: u64) -> DenseTensor {
    let mut r = rng(seed);
    DenseTensor::from_fn(shape, |_| r.random_range(-1.0..1.0))
}

/// Compares an analytic gradient with central differences of `f` around `x`
/// and returns `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)`.
pub fn finite_diff_check(
    x: &DenseTensor,
    analytic: &DenseTensor,
    mut f: impl FnMut(&DenseTensor) -> f64,
) -> f64 {
    assert_eq!(x.shape(), analytic.shape());
    let h = 1e-5;
    let mut probe = x.clone();
    let mut diff2 = 0.0;
    let mut a2 = 0.0;
    let mut n2 = 0.0;
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe);
        probe.data_mut()[i] = orig - h;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        let a = analytic.data()[i];
        diff2 += (a - numeric).powi(2);
        a2 += a * a;
        n2 += numeric * numeric;
    }
    let denom = a2.sqrt().max(n2.sqrt());
    if denom == 0.0 {
        0.0
    } else {
        diff2.sqrt() / denom
    }
}

/// Like [`finite_diff_check`] but skips coordinates where the two one-sided
/// differences disagree, i.e. where a ReLU or pooling switch flips inside
/// `±h`. Returns the relative error and the fraction of skipped coordinates.
pub fn finite_diff_check_smooth(
    x: &DenseTensor,
    analytic: &DenseTensor,
    mut f: impl FnMut(&DenseTensor) -> f64,
) -> (f64, f64) {
    assert_eq!(x.shape(), analytic.shape());
    let h = 1e-5;
    let f0 = f(x);
    let mut probe = x.clone();
    let (mut diff2, mut a2, mut n2, mut skipped) = (0.0, 0.0, 0.0, 0usize);
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe);
        probe.data_mut()[i] = orig - h;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        let (fwd, bwd) = ((up - f0) / h, (f0 - down) / h);
        if (fwd - bwd).abs() > 1e-3 * (fwd.abs() + bwd.abs()) + 1e-9 {
            skipped += 1;
            continue;
        }
        let numeric = (up - down) / (2.0 * h);
        let a = analytic.data()[i];
        diff2 += (a - numeric).powi(2);
        a2 += a * a;
        n2 += numeric * numeric;
    }
    let denom = a2.sqrt().max(n2.sqrt());
    let err = if denom == 0.0 { 0.0 } else { diff2.sqrt() / denom };
    (err, skipped as f64 / x.len() as f64)
}
