use super::{check_xy, ClassifyError, Result};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

/// Stopping tolerance on the maximal KKT violation `m(α) − M(α)`.
pub const SVM_TOLERANCE: f64 = 1e-3;
const TAU: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kernel", rename_all = "lowercase")]
pub enum Kernel {
    Linear,
    Rbf { gamma: f64 },
}

impl Kernel {
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match *self {
            Kernel::Linear => a.iter().zip(b).map(|(p, q)| p * q).sum(),
            Kernel::Rbf { gamma } => (-gamma * a.iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum::<f64>()).exp(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvmModel {
    pub kernel: Kernel,
    pub cost: f64,
    /// Support vectors, one per row.
    pub support: Vec<Vec<f64>>,
    /// `α_i y_i` for each support vector.
    pub coef: Vec<f64>,
    pub rho: f64,
    /// `½αᵀQα − Σα` at termination.
    pub dual_objective: f64,
    pub kkt_gap: f64,
    pub iterations: usize,
}

impl SvmModel {
    /// `Σ α_i y_i K(x_i, x) − ρ`; positive means class 1.
    pub fn decision(&self, x: &DMatrix<f64>) -> Vec<f64> {
        (0..x.nrows())
            .map(|r| {
                let row: Vec<f64> = x.row(r).iter().copied().collect();
                self.support.iter().zip(&self.coef).map(|(s, c)| c * self.kernel.eval(s, &row)).sum::<f64>() - self.rho
            })
            .collect()
    }
}

fn row_vecs(x: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..x.nrows()).map(|r| x.row(r).iter().copied().collect()).collect()
}

/// C-SVC dual solved by SMO with second-order working-set selection.
pub fn fit_svm(x: &DMatrix<f64>, y: &[u8], kernel: Kernel, cost: f64) -> Result<SvmModel> {
    check_xy(x, y)?;
    if !(cost > 0.0 && cost.is_finite()) {
        return Err(ClassifyError::Data(format!("cost {cost} must be positive")));
    }
    if let Kernel::Rbf { gamma } = kernel {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(ClassifyError::Data(format!("gamma {gamma} must be positive")));
        }
    }
    if !(y.contains(&0) && y.contains(&1)) {
        return Err(ClassifyError::OneClass("svm training labels".into()));
    }
    let n = y.len();
    let rows = row_vecs(x);
    let s: Vec<f64> = y.iter().map(|&l| if l == 1 { 1.0 } else { -1.0 }).collect();
    let k: Vec<f64> = (0..n * n).map(|idx| kernel.eval(&rows[idx / n], &rows[idx % n])).collect();
    let kk = |i: usize, j: usize| k[i * n + j];
    let mut a = vec![0.0; n];
    let mut g = vec![-1.0; n];
    let max_iter = (100 * n).max(10_000_000);
    let up = |t: usize, a: &[f64]| (s[t] > 0.0 && a[t] < cost) || (s[t] < 0.0 && a[t] > 0.0);
    let low = |t: usize, a: &[f64]| (s[t] > 0.0 && a[t] > 0.0) || (s[t] < 0.0 && a[t] < cost);
    let mut iterations = 0;
    let mut gap;
    loop {
        let mut gmax = f64::NEG_INFINITY;
        let mut i = usize::MAX;
        for t in 0..n {
            if up(t, &a) && -s[t] * g[t] >= gmax {
                gmax = -s[t] * g[t];
                i = t;
            }
        }
        let mut gmin = f64::INFINITY;
        let mut j = usize::MAX;
        let mut best = f64::INFINITY;
        for t in 0..n {
            if !low(t, &a) {
                continue;
            }
            let v = -s[t] * g[t];
            gmin = gmin.min(v);
            if i != usize::MAX && v < gmax {
                let b = gmax - v;
                let mut quad = kk(i, i) + kk(t, t) - 2.0 * kk(i, t);
                if quad <= 0.0 {
                    quad = TAU;
                }
                let obj = -(b * b) / quad;
                if obj <= best {
                    best = obj;
                    j = t;
                }
            }
        }
        gap = gmax - gmin;
        if i == usize::MAX || j == usize::MAX || gap < SVM_TOLERANCE || iterations >= max_iter {
            break;
        }
        iterations += 1;
        let (old_i, old_j) = (a[i], a[j]);
        let qij = s[i] * s[j] * kk(i, j);
        if s[i] != s[j] {
            let mut quad = kk(i, i) + kk(j, j) + 2.0 * qij;
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (-g[i] - g[j]) / quad;
            let diff = a[i] - a[j];
            a[i] += delta;
            a[j] += delta;
            if diff > 0.0 {
                if a[j] < 0.0 {
                    a[j] = 0.0;
                    a[i] = diff;
                }
            } else if a[i] < 0.0 {
                a[i] = 0.0;
                a[j] = -diff;
            }
            if diff > 0.0 {
                if a[i] > cost {
                    a[i] = cost;
                    a[j] = cost - diff;
                }
            } else if a[j] > cost {
                a[j] = cost;
                a[i] = cost + diff;
            }
        } else {
            let mut quad = kk(i, i) + kk(j, j) - 2.0 * qij;
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (g[i] - g[j]) / quad;
            let sum = a[i] + a[j];
            a[i] -= delta;
            a[j] += delta;
            if sum > cost {
                if a[i] > cost {
                    a[i] = cost;
                    a[j] = sum - cost;
                }
            } else if a[j] < 0.0 {
                a[j] = 0.0;
                a[i] = sum;
            }
            if sum > cost {
                if a[j] > cost {
                    a[j] = cost;
                    a[i] = sum - cost;
                }
            } else if a[i] < 0.0 {
                a[i] = 0.0;
                a[j] = sum;
            }
        }
        let (di, dj) = (a[i] - old_i, a[j] - old_j);
        for t in 0..n {
            g[t] += s[t] * (s[i] * kk(t, i) * di + s[j] * kk(t, j) * dj);
        }
    }
    if iterations >= max_iter {
        log::warn!("SMO stopped at the iteration cap with KKT gap {gap}");
    }
    let (mut ub, mut lb, mut sum, mut free) = (f64::INFINITY, f64::NEG_INFINITY, 0.0, 0usize);
    for t in 0..n {
        let yg = s[t] * g[t];
        if a[t] >= cost {
            if s[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if a[t] <= 0.0 {
            if s[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            free += 1;
            sum += yg;
        }
    }
    let rho = if free > 0 { sum / free as f64 } else { (ub + lb) / 2.0 };
    let dual_objective = a.iter().zip(&g).map(|(ai, gi)| ai * (gi - 1.0)).sum::<f64>() / 2.0;
    let (support, coef) = (0..n).filter(|&t| a[t] > 0.0).map(|t| (rows[t].clone(), a[t] * s[t])).unzip();
    Ok(SvmModel { kernel, cost, support, coef, rho, dual_objective, kkt_gap: gap.max(0.0), iterations })
}
