//! Small dense linear-algebra helpers shared by the solvers.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Solution of a symmetric positive semidefinite system `G x = b`.
#[derive(Debug, Clone)]
pub struct SymSolve {
    pub x: DVector<f64>,
    /// Numerical rank of `G` (equal to its size when the Cholesky path is taken).
    pub rank: usize,
}

impl SymSolve {
    pub fn full_rank(&self, n: usize) -> bool {
        self.rank == n
    }
}

/// Relative eigenvalue floor of [`spd_solve`]: directions of `G` weaker than
/// this fraction of the largest are treated as unobserved.
pub const PINV_FLOOR: f64 = 1e-8;

/// Solves `G x = b` for symmetric PSD `G`.
///
/// Cholesky is used when the factor is well conditioned; otherwise the
/// minimum-norm solution from an eigendecomposition with relative floor
/// [`PINV_FLOOR`] is returned.
pub fn spd_solve(g: &DMatrix<f64>, b: &DVector<f64>) -> SymSolve {
    let n = g.nrows();
    if n == 0 {
        return SymSolve { x: DVector::zeros(0), rank: 0 };
    }
    if let Some(ch) = g.clone().cholesky() {
        let l = ch.l_dirty();
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for i in 0..n {
            let d = l[(i, i)].abs();
            lo = lo.min(d);
            hi = hi.max(d);
        }
        // Squared diagonal ratio approximates the condition number of G.
        if hi > 0.0 && (lo / hi).powi(2) > 10.0 * PINV_FLOOR {
            let x = ch.solve(b);
            if x.iter().all(|v| v.is_finite()) {
                return SymSolve { x, rank: n };
            }
        }
    }
    pinv_solve(g, b, PINV_FLOOR)
}

/// Minimum-norm solution of `G x = b` via eigendecomposition, discarding
/// eigenvalues below `floor * lambda_max`.
pub fn pinv_solve(g: &DMatrix<f64>, b: &DVector<f64>, floor: f64) -> SymSolve {
    let n = g.nrows();
    let eig = SymmetricEigen::new(g.clone());
    let lmax = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
    let mut x = DVector::zeros(n);
    let mut rank = 0;
    if lmax <= 0.0 {
        return SymSolve { x, rank };
    }
    let proj = eig.eigenvectors.tr_mul(b);
    for k in 0..n {
        let lam = eig.eigenvalues[k];
        if lam > floor * lmax {
            rank += 1;
            x.axpy(proj[k] / lam, &eig.eigenvectors.column(k), 1.0);
        }
    }
    SymSolve { x, rank }
}

/// Angle between two nonzero vectors, clamped into `[0, pi]`.
pub fn angle(x: &[f64], y: &[f64]) -> f64 {
    let (mut xy, mut xx, mut yy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        xy += a * b;
        xx += a * a;
        yy += b * b;
    }
    let c = xy / (xx.sqrt() * yy.sqrt());
    c.clamp(-1.0, 1.0).acos()
}

pub fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

/// Least-squares slope and intercept of `y` against `x`, plus R^2.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    let slope = sxy / sxx;
    let r2 = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    (slope, my - slope * mx, r2)
}

/// Slope of `log y` against `log x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    linear_fit(&lx, &ly).0
}

pub fn median(values: &[f64]) -> f64 {
    quantile(values, 0.5)
}

/// Linear-interpolation quantile of the finite entries of `values`.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v: Vec<f64> = values.iter().cloned().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}
