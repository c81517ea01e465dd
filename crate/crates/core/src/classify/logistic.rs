use super::{check_xy, ClassifyError, Result};
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const KKT_TOL: f64 = 1e-8;
const MAX_OUTER: usize = 300;
const MAX_CD_PASSES: usize = 2000;
const WEIGHT_FLOOR: f64 = 1e-5;

/// `P(y = 1 | x) = σ(intercept + x·weights)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticModel {
    pub intercept: f64,
    pub weights: Vec<f64>,
    pub alpha: f64,
    pub lambda: f64,
}

impl LogisticModel {
    fn zeros(p: usize, alpha: f64, lambda: f64) -> Self {
        Self { intercept: 0.0, weights: vec![0.0; p], alpha, lambda }
    }

    pub fn linear(&self, x: &DMatrix<f64>) -> Vec<f64> {
        (0..x.nrows())
            .map(|i| self.intercept + self.weights.iter().enumerate().map(|(j, w)| w * x[(i, j)]).sum::<f64>())
            .collect()
    }

    pub fn predict_proba(&self, x: &DMatrix<f64>) -> Vec<f64> {
        self.linear(x).into_iter().map(sigmoid).collect()
    }
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

fn softplus(t: f64) -> f64 {
    t.max(0.0) + (-t.abs()).exp().ln_1p()
}

/// `(1/n) Σ [log(1 + e^η) − yη] + λ[α‖w‖₁ + (1−α)‖w‖²/2]`, intercept unpenalized.
pub fn logistic_objective(x: &DMatrix<f64>, y: &[u8], m: &LogisticModel) -> f64 {
    let eta = m.linear(x);
    let loss = eta.iter().zip(y).map(|(e, &l)| softplus(*e) - f64::from(l) * e).sum::<f64>() / y.len() as f64;
    let l1: f64 = m.weights.iter().map(|w| w.abs()).sum();
    let l2: f64 = m.weights.iter().map(|w| w * w).sum();
    loss + m.lambda * (m.alpha * l1 + (1.0 - m.alpha) * l2 / 2.0)
}

/// Largest violation of the optimality conditions: the smooth gradient for
/// the intercept and nonzero weights, the ℓ1 subgradient band for zero weights.
pub fn kkt_violation(x: &DMatrix<f64>, y: &[u8], m: &LogisticModel) -> f64 {
    let n = y.len() as f64;
    let resid: Vec<f64> = m.predict_proba(x).iter().zip(y).map(|(p, &l)| p - f64::from(l)).collect();
    let mut worst = (resid.iter().sum::<f64>() / n).abs();
    for (j, &w) in m.weights.iter().enumerate() {
        let g = x.column(j).iter().zip(&resid).map(|(a, r)| a * r).sum::<f64>() / n + m.lambda * (1.0 - m.alpha) * w;
        let l1 = m.lambda * m.alpha;
        let v = if w != 0.0 { (g + l1 * w.signum()).abs() } else { (g.abs() - l1).max(0.0) };
        worst = worst.max(v);
    }
    worst
}

fn soft(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

/// Fits one λ by iteratively reweighted least squares with a coordinate
/// descent inner solver and backtracking on the true objective.
pub fn fit_logistic(
    x: &DMatrix<f64>,
    y: &[u8],
    alpha: f64,
    lambda: f64,
    warm: Option<&LogisticModel>,
) -> Result<LogisticModel> {
    check_xy(x, y)?;
    if !(0.0..=1.0).contains(&alpha) || !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(ClassifyError::Data(format!("alpha {alpha} and lambda {lambda} out of range")));
    }
    let (n, p) = (x.nrows(), x.ncols());
    let nf = n as f64;
    let mut m = match warm {
        Some(w) if w.weights.len() == p => LogisticModel { alpha, lambda, ..w.clone() },
        _ => LogisticModel::zeros(p, alpha, lambda),
    };
    let mut obj = logistic_objective(x, y, &m);
    let (l1, l2) = (lambda * alpha, lambda * (1.0 - alpha));
    for _ in 0..MAX_OUTER {
        if kkt_violation(x, y, &m) <= KKT_TOL {
            break;
        }
        let eta = m.linear(x);
        let prob: Vec<f64> = eta.iter().map(|&e| sigmoid(e)).collect();
        let wts: Vec<f64> = prob.iter().map(|q| (q * (1.0 - q)).max(WEIGHT_FLOOR)).collect();
        let mut resid: Vec<f64> = (0..n).map(|i| (f64::from(y[i]) - prob[i]) / wts[i]).collect();
        let xw: Vec<f64> = (0..p).map(|j| x.column(j).iter().zip(&wts).map(|(a, w)| w * a * a).sum::<f64>() / nf).collect();
        let wsum: f64 = wts.iter().sum();
        let mut cand = m.clone();
        for _ in 0..MAX_CD_PASSES {
            let mut change = 0.0f64;
            let db = wts.iter().zip(&resid).map(|(w, r)| w * r).sum::<f64>() / wsum;
            cand.intercept += db;
            resid.iter_mut().for_each(|r| *r -= db);
            change = change.max(db.abs());
            for j in 0..p {
                if xw[j] == 0.0 {
                    cand.weights[j] = 0.0;
                    continue;
                }
                let col = x.column(j);
                let rho = col.iter().zip(&wts).zip(&resid).map(|((a, w), r)| w * a * r).sum::<f64>() / nf
                    + xw[j] * cand.weights[j];
                let new = soft(rho, l1) / (xw[j] + l2);
                let d = new - cand.weights[j];
                if d != 0.0 {
                    for (r, a) in resid.iter_mut().zip(col.iter()) {
                        *r -= d * a;
                    }
                    cand.weights[j] = new;
                    change = change.max(d.abs() * xw[j].sqrt());
                }
            }
            if change < 1e-13 {
                break;
            }
        }
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let trial = LogisticModel {
                intercept: m.intercept + step * (cand.intercept - m.intercept),
                weights: m.weights.iter().zip(&cand.weights).map(|(a, b)| a + step * (b - a)).collect(),
                alpha,
                lambda,
            };
            let t_obj = logistic_objective(x, y, &trial);
            if t_obj <= obj {
                accepted = t_obj < obj || trial != m;
                m = trial;
                obj = t_obj;
                break;
            }
            step /= 2.0;
        }
        if !accepted {
            break;
        }
    }
    if !(m.intercept.is_finite() && m.weights.iter().all(|w| w.is_finite())) {
        return Err(ClassifyError::Data("logistic fit diverged".into()));
    }
    Ok(m)
}

/// `count` log-spaced values from the smallest λ that zeroes every weight
/// down to `1e-4·λ_max` (`1e-2·λ_max` when features outnumber samples).
pub fn lambda_grid(x: &DMatrix<f64>, y: &[u8], alpha: f64, count: usize) -> Vec<f64> {
    let n = y.len() as f64;
    let ybar = y.iter().map(|&l| f64::from(l)).sum::<f64>() / n;
    let top = (0..x.ncols())
        .map(|j| (x.column(j).iter().zip(y).map(|(a, &l)| a * (f64::from(l) - ybar)).sum::<f64>() / n).abs())
        .fold(0.0f64, f64::max);
    let lmax = (top / alpha.max(1e-3)).max(1e-6);
    let ratio: f64 = if x.nrows() >= x.ncols() { 1e-4 } else { 1e-2 };
    if count <= 1 {
        return vec![lmax];
    }
    (0..count).map(|k| lmax * ratio.powf(k as f64 / (count - 1) as f64)).collect()
}

fn fit_path(x: &DMatrix<f64>, y: &[u8], alpha: f64, lambdas: &[f64]) -> Result<Vec<LogisticModel>> {
    let mut out: Vec<LogisticModel> = Vec::with_capacity(lambdas.len());
    for &l in lambdas {
        let m = fit_logistic(x, y, alpha, l, out.last())?;
        out.push(m);
    }
    Ok(out)
}

fn rows(x: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), x.ncols(), |i, j| x[(idx[i], j)])
}

/// Chooses λ from a 20-point grid by validation log loss on a stratified
/// 75/25 split of the training rows, then refits on all rows.
pub fn fit_elasticnet_logistic(x: &DMatrix<f64>, y: &[u8], alpha: f64, seed: u64) -> Result<LogisticModel> {
    check_xy(x, y)?;
    let grid = lambda_grid(x, y, alpha, 20);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut fit_idx, mut val_idx) = (Vec::new(), Vec::new());
    for class in [0u8, 1] {
        let mut members: Vec<usize> = (0..y.len()).filter(|&i| y[i] == class).collect();
        members.shuffle(&mut rng);
        let n_val = (members.len() as f64 * 0.25).round() as usize;
        if members.len() < 2 || n_val == 0 {
            fit_idx.extend(members);
            continue;
        }
        val_idx.extend_from_slice(&members[..n_val]);
        fit_idx.extend_from_slice(&members[n_val..]);
    }
    fit_idx.sort_unstable();
    val_idx.sort_unstable();
    let both = |idx: &[usize]| idx.iter().any(|&i| y[i] == 0) && idx.iter().any(|&i| y[i] == 1);
    let best = if val_idx.is_empty() || !both(&fit_idx) {
        grid.len() / 2
    } else {
        let (xf, yf): (DMatrix<f64>, Vec<u8>) = (rows(x, &fit_idx), fit_idx.iter().map(|&i| y[i]).collect());
        let xv = rows(x, &val_idx);
        let path = fit_path(&xf, &yf, alpha, &grid)?;
        let mut best = (0, f64::INFINITY);
        for (k, m) in path.iter().enumerate() {
            let loss: f64 = m
                .linear(&xv)
                .iter()
                .zip(&val_idx)
                .map(|(e, &i)| softplus(*e) - f64::from(y[i]) * e)
                .sum::<f64>();
            if loss < best.1 {
                best = (k, loss);
            }
        }
        best.0
    };
    let path = fit_path(x, y, alpha, &grid[..=best])?;
    Ok(path.into_iter().last().expect("nonempty path"))
}
