use super::{CpError, CpModel, Result, StackedTensor};
use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const JITTER: f64 = 1e-10;
const PINV_CUTOFF: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct CpOptions {
    pub rank: usize,
    pub max_sweeps: usize,
    /// Stop once the fit changes by less than this between sweeps.
    pub fit_tol: f64,
    pub restarts: usize,
    pub seed: u64,
}

impl CpOptions {
    pub fn new(rank: usize, seed: u64) -> Self {
        Self { rank, max_sweeps: 100, fit_tol: 1e-6, restarts: 3, seed }
    }
}

/// Column-wise Kronecker product: row `i + I·j` holds `C[j, r]·B[i, r]`.
pub fn khatri_rao(c: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (ni, nj) = (b.nrows(), c.nrows());
    DMatrix::from_fn(ni * nj, b.ncols(), |row, r| c[(row / ni, r)] * b[(row % ni, r)])
}

/// `X₍₁₎ (C ∗ B)`, computed slab by slab.
fn mttkrp_a(x: &StackedTensor, b: &DMatrix<f64>, c: &DMatrix<f64>) -> DMatrix<f64> {
    let [n, ni, nj] = x.dims();
    let rank = b.ncols();
    let mut out = DMatrix::zeros(n, rank);
    let mut t = vec![0.0; rank];
    for k in 0..n {
        let slab = x.slab(k);
        for i in 0..ni {
            let row = &slab[i * nj..(i + 1) * nj];
            row_times(row, c, &mut t);
            for r in 0..rank {
                out[(k, r)] += b[(i, r)] * t[r];
            }
        }
    }
    out
}

fn mttkrp_b(x: &StackedTensor, a: &DMatrix<f64>, c: &DMatrix<f64>) -> DMatrix<f64> {
    let [n, ni, nj] = x.dims();
    let rank = a.ncols();
    let mut out = DMatrix::zeros(ni, rank);
    let mut t = vec![0.0; rank];
    for k in 0..n {
        let slab = x.slab(k);
        for i in 0..ni {
            row_times(&slab[i * nj..(i + 1) * nj], c, &mut t);
            for r in 0..rank {
                out[(i, r)] += a[(k, r)] * t[r];
            }
        }
    }
    out
}

fn mttkrp_c(x: &StackedTensor, a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let [n, ni, nj] = x.dims();
    let rank = a.ncols();
    let mut out = DMatrix::zeros(nj, rank);
    for k in 0..n {
        let slab = x.slab(k);
        for i in 0..ni {
            let row = &slab[i * nj..(i + 1) * nj];
            for r in 0..rank {
                let w = a[(k, r)] * b[(i, r)];
                if w == 0.0 {
                    continue;
                }
                for (o, v) in out.column_mut(r).iter_mut().zip(row) {
                    *o += w * v;
                }
            }
        }
    }
    out
}

fn row_times(row: &[f64], m: &DMatrix<f64>, t: &mut [f64]) {
    for (r, tr) in t.iter_mut().enumerate() {
        *tr = row.iter().zip(m.column(r).iter()).map(|(a, b)| a * b).sum();
    }
}

fn hadamard(p: &DMatrix<f64>, q: &DMatrix<f64>) -> DMatrix<f64> {
    p.component_mul(q)
}

/// Solves `U G = M` for symmetric positive semidefinite `G`.
fn solve_normal(m: &DMatrix<f64>, g: &DMatrix<f64>) -> DMatrix<f64> {
    let r = g.nrows();
    let scale = (g.trace() / r as f64).max(f64::MIN_POSITIVE);
    let jittered = g + DMatrix::identity(r, r) * (JITTER * scale);
    match jittered.cholesky() {
        Some(ch) => ch.solve(&m.transpose()).transpose(),
        None => m * pinv_symmetric(g),
    }
}

/// Pseudoinverse of a symmetric matrix, dropping eigenvalues below
/// `1e-12·λ_max`.
fn pinv_symmetric(g: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(g.clone());
    let lmax = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let cut = PINV_CUTOFF * lmax;
    let inv = eig.eigenvalues.map(|v| if v.abs() > cut && v.abs() > 0.0 { 1.0 / v } else { 0.0 });
    &eig.eigenvectors * DMatrix::from_diagonal(&inv) * eig.eigenvectors.transpose()
}

fn normalize_columns(m: &mut DMatrix<f64>, scale: &mut DMatrix<f64>) {
    for r in 0..m.ncols() {
        let norm = m.column(r).norm();
        if norm > 0.0 {
            m.column_mut(r).scale_mut(1.0 / norm);
            scale.column_mut(r).scale_mut(norm);
        }
    }
}

fn fit_of(x_norm2: f64, a: &DMatrix<f64>, b: &DMatrix<f64>, c: &DMatrix<f64>, m_c: &DMatrix<f64>) -> f64 {
    let inner: f64 = m_c.component_mul(c).sum();
    let model2 = hadamard(&hadamard(&(a.transpose() * a), &(b.transpose() * b)), &(c.transpose() * c)).sum();
    if x_norm2 == 0.0 {
        return if model2 == 0.0 { 1.0 } else { 0.0 };
    }
    let resid = (x_norm2 - 2.0 * inner + model2).max(0.0).sqrt();
    1.0 - resid / x_norm2.sqrt()
}

fn all_finite(m: &DMatrix<f64>) -> bool {
    m.iter().all(|v| v.is_finite())
}

fn single_run(x: &StackedTensor, opts: &CpOptions, seed: u64) -> Result<CpModel> {
    let [n, ni, nj] = x.dims();
    if !x.data().iter().all(|v| v.is_finite()) {
        return Err(CpError::NonFinite { sweep: 0 });
    }
    let rank = opts.rank;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = DMatrix::from_fn(ni, rank, |_, _| rng.random::<f64>());
    let mut c = DMatrix::from_fn(nj, rank, |_, _| rng.random::<f64>());
    let mut a = DMatrix::zeros(n, rank);
    let x_norm2 = x.norm().powi(2);
    let mut trace: Vec<f64> = Vec::new();
    for sweep in 0..opts.max_sweeps {
        a = solve_normal(&mttkrp_a(x, &b, &c), &hadamard(&(b.transpose() * &b), &(c.transpose() * &c)));
        b = solve_normal(&mttkrp_b(x, &a, &c), &hadamard(&(a.transpose() * &a), &(c.transpose() * &c)));
        normalize_columns(&mut b, &mut a);
        let m_c = mttkrp_c(x, &a, &b);
        c = solve_normal(&m_c, &hadamard(&(a.transpose() * &a), &(b.transpose() * &b)));
        let fit = fit_of(x_norm2, &a, &b, &c, &m_c);
        normalize_columns(&mut c, &mut a);
        if !(fit.is_finite() && all_finite(&a) && all_finite(&b) && all_finite(&c)) {
            return Err(CpError::NonFinite { sweep });
        }
        let done = trace.last().is_some_and(|&prev: &f64| (fit - prev).abs() < opts.fit_tol);
        trace.push(fit);
        if done {
            break;
        }
    }
    let mut model = CpModel { a, b, c, fit_trace: trace, seed, ids: x.ids().to_vec() };
    canonicalize(&mut model);
    Ok(model)
}

/// Unit-norm `B`, `C` columns, largest-magnitude entries positive, scale in
/// `A`, components by decreasing `‖a_r‖`.
fn canonicalize(m: &mut CpModel) {
    normalize_columns(&mut m.b, &mut m.a);
    normalize_columns(&mut m.c, &mut m.a);
    for r in 0..m.rank() {
        for f in [&mut m.b, &mut m.c] {
            let col = f.column(r);
            let (mut best, mut idx) = (0.0, 0);
            for (k, v) in col.iter().enumerate() {
                if v.abs() > best {
                    best = v.abs();
                    idx = k;
                }
            }
            if col[idx] < 0.0 {
                f.column_mut(r).neg_mut();
                m.a.column_mut(r).neg_mut();
            }
        }
    }
    let mut order: Vec<usize> = (0..m.rank()).collect();
    let norms: Vec<f64> = order.iter().map(|&r| m.a.column(r).norm()).collect();
    order.sort_by(|&p, &q| norms[q].total_cmp(&norms[p]).then(p.cmp(&q)));
    m.a = m.a.select_columns(&order);
    m.b = m.b.select_columns(&order);
    m.c = m.c.select_columns(&order);
}

/// CP-ALS with `opts.restarts` seeded random starts (seeds `seed`,
/// `seed + 1`, ...); the run with the best final fit is kept.
pub fn cp_als(x: &StackedTensor, opts: &CpOptions) -> Result<CpModel> {
    if opts.rank == 0 {
        return Err(CpError::Rank);
    }
    if x.dims()[0] < opts.rank {
        log::warn!("rank {} exceeds the {} stacked images", opts.rank, x.dims()[0]);
    }
    let mut best: Option<CpModel> = None;
    for k in 0..opts.restarts.max(1) {
        let m = single_run(x, opts, opts.seed.wrapping_add(k as u64))?;
        if best.as_ref().is_none_or(|b| m.fit() > b.fit()) {
            best = Some(m);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Least-squares loadings of held-out images on the trained `B`, `C`:
/// `X₍₁₎ F (FᵀF)†` with `F = C ∗ B`.
pub fn project_test(model: &CpModel, x: &StackedTensor) -> Result<DMatrix<f64>> {
    let [_, ni, nj] = x.dims();
    if ni != model.b.nrows() || nj != model.c.nrows() {
        return Err(CpError::Shape(format!(
            "test extents {ni}×{nj} differ from model {}×{}",
            model.b.nrows(),
            model.c.nrows()
        )));
    }
    let g = hadamard(&(model.b.transpose() * &model.b), &(model.c.transpose() * &model.c));
    Ok(mttkrp_a(x, &model.b, &model.c) * pinv_symmetric(&g))
}
