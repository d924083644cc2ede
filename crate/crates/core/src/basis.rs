//! Scalar basis families for radial interaction kernels.
//!
//! A basis function `psi_k` acts on the distance `|r|`; the vector kernel is
//! `psi_k(|r|) r / |r|`. Evaluation outside `[lo, hi]` returns zero.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    /// Clamped uniform cubic B-splines.
    CubicSpline,
    /// `1, cos(w r), sin(w r), cos(2 w r), ...` with `w = 2 pi / (hi - lo)`.
    Fourier,
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cubic_spline" | "spline" => Ok(Family::CubicSpline),
            "fourier" => Ok(Family::Fourier),
            _ => Err(invalid(format!("unknown basis family '{s}'"))),
        }
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Family::CubicSpline => "cubic_spline",
            Family::Fourier => "fourier",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BasisSpec {
    pub family: Family,
    pub lo: f64,
    pub hi: f64,
    /// Number of raw functions before any change of basis.
    pub n_raw: usize,
    /// Optional `K x n_raw` change of basis applied after raw evaluation.
    pub transform: Option<DMatrix<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BasisSet {
    spec: BasisSpec,
    bound: f64,
}

const BOUND_GRID: usize = 10_000;

/// Basis with `k` functions on `[lo, hi]`.
pub fn make_basis(family: Family, lo: f64, hi: f64, k: usize) -> Result<BasisSet> {
    if k == 0 {
        return Err(invalid("basis needs at least one function"));
    }
    if !(lo.is_finite() && hi.is_finite() && hi > lo && lo >= 0.0) {
        return Err(invalid(format!("degenerate domain [{lo}, {hi}]")));
    }
    if family == Family::CubicSpline && k < 4 {
        return Err(invalid("cubic splines need K >= 4"));
    }
    BasisSet::from_spec(BasisSpec { family, lo, hi, n_raw: k, transform: None })
}

/// Cubic splines with `knots` uniform knot intervals, giving `K = knots + 3`.
pub fn cubic_spline_knots(lo: f64, hi: f64, knots: usize) -> Result<BasisSet> {
    if knots == 0 {
        return Err(invalid("need at least one knot interval"));
    }
    make_basis(Family::CubicSpline, lo, hi, knots + 3)
}

impl BasisSet {
    pub fn from_spec(spec: BasisSpec) -> Result<Self> {
        if let Some(t) = &spec.transform {
            if t.ncols() != spec.n_raw || t.nrows() == 0 {
                return Err(invalid("transform shape does not match the raw basis"));
            }
        }
        let mut bs = BasisSet { spec, bound: 0.0 };
        bs.bound = bs.grid_bound();
        if !bs.bound.is_finite() {
            return Err(invalid("basis is unbounded on its domain"));
        }
        Ok(bs)
    }

    pub fn spec(&self) -> &BasisSpec {
        &self.spec
    }

    pub fn family(&self) -> Family {
        self.spec.family
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.spec.lo, self.spec.hi)
    }

    /// Number of functions after the change of basis.
    pub fn k(&self) -> usize {
        self.spec.transform.as_ref().map_or(self.spec.n_raw, |t| t.nrows())
    }

    /// Sup norm over the domain, estimated on a uniform grid.
    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn raw(&self) -> BasisSet {
        BasisSet::from_spec(BasisSpec { transform: None, ..self.spec.clone() }).expect("raw basis is valid")
    }

    fn grid_bound(&self) -> f64 {
        let mut out = vec![0.0; self.k()];
        let mut scratch = vec![0.0; self.spec.n_raw];
        let (lo, hi) = self.domain();
        let mut b = 0.0f64;
        for s in 0..BOUND_GRID {
            let r = lo + (hi - lo) * s as f64 / (BOUND_GRID - 1) as f64;
            self.eval_with(r, &mut scratch, &mut out);
            b = out.iter().fold(b, |m, v| m.max(v.abs()));
        }
        b
    }

    pub fn eval(&self, r: f64) -> DVector<f64> {
        let mut out = vec![0.0; self.k()];
        let mut scratch = vec![0.0; self.spec.n_raw];
        self.eval_with(r, &mut scratch, &mut out);
        DVector::from_vec(out)
    }

    /// Evaluates into `out` (length `k()`), using `scratch` (length `n_raw`).
    pub fn eval_with(&self, r: f64, scratch: &mut [f64], out: &mut [f64]) {
        let (lo, hi) = self.domain();
        if !(r >= lo && r <= hi) {
            out.iter_mut().for_each(|v| *v = 0.0);
            return;
        }
        match &self.spec.transform {
            None => self.eval_raw(r, out),
            Some(t) => {
                self.eval_raw(r, scratch);
                for (a, o) in out.iter_mut().enumerate() {
                    let mut s = 0.0;
                    for (b, x) in scratch.iter().enumerate() {
                        s += t[(a, b)] * x;
                    }
                    *o = s;
                }
            }
        }
    }

    fn eval_raw(&self, r: f64, out: &mut [f64]) {
        match self.spec.family {
            Family::Fourier => fourier(r, self.spec.lo, self.spec.hi, out),
            Family::CubicSpline => cubic_bspline(r, self.spec.lo, self.spec.hi, out),
        }
    }

    /// `sum_k coef_k psi_k(r)`.
    pub fn combine(&self, coef: &[f64], r: f64) -> f64 {
        let v = self.eval(r);
        v.iter().zip(coef).map(|(a, b)| a * b).sum()
    }

    /// Empirical Gram `(1/S) sum_s psi(r_s) psi(r_s)^T`.
    pub fn gram(&self, samples: &[f64]) -> DMatrix<f64> {
        let k = self.k();
        let mut g = DMatrix::zeros(k, k);
        let mut out = vec![0.0; k];
        let mut scratch = vec![0.0; self.spec.n_raw];
        for &r in samples {
            self.eval_with(r, &mut scratch, &mut out);
            let v = DVector::from_column_slice(&out);
            g.syger(1.0, &v, &v, 1.0);
        }
        g.fill_upper_triangle_with_lower_triangle();
        g / samples.len().max(1) as f64
    }

    /// Coefficients in this basis of the function `x -> sum_k coef_k raw_k(x)`
    /// written in the raw basis. Exact when the transform is square.
    pub fn coefficients_from_raw(&self, raw_coef: &DMatrix<f64>) -> DMatrix<f64> {
        match &self.spec.transform {
            None => raw_coef.clone(),
            // psi = T phi_raw, so c_raw = T^T c and c = pinv(T^T) c_raw.
            Some(t) => t.transpose().pseudo_inverse(1e-13).expect("svd converges") * raw_coef,
        }
    }
}

fn fourier(r: f64, lo: f64, hi: f64, out: &mut [f64]) {
    let w = 2.0 * std::f64::consts::PI / (hi - lo);
    for (k, o) in out.iter_mut().enumerate() {
        let mode = k.div_ceil(2) as f64;
        *o = if k == 0 {
            1.0
        } else if k % 2 == 1 {
            (mode * w * r).cos()
        } else {
            (mode * w * r).sin()
        };
    }
}

/// Clamped uniform cubic B-splines with `out.len() - 3` spans on `[lo, hi]`.
fn cubic_bspline(r: f64, lo: f64, hi: f64, out: &mut [f64]) {
    let k = out.len();
    let spans = k - 3;
    let h = (hi - lo) / spans as f64;
    let knot = |t: isize| -> f64 {
        // Knot vector t_0..t_{K+3}: four copies of lo, interior, four copies of hi.
        let s = (t - 3).clamp(0, spans as isize);
        lo + s as f64 * h
    };
    out.iter_mut().for_each(|v| *v = 0.0);
    // Span index in [0, spans - 1]; right endpoint belongs to the last span.
    let mut span = ((r - lo) / h).floor() as isize;
    span = span.clamp(0, spans as isize - 1);
    let mu = span + 3;
    // De Boor triangular scheme for the four nonzero functions.
    let mut n = [0.0f64; 4];
    n[0] = 1.0;
    let mut left = [0.0f64; 4];
    let mut right = [0.0f64; 4];
    for p in 1..4 {
        left[p] = r - knot(mu + 1 - p as isize);
        right[p] = knot(mu + p as isize) - r;
        let mut saved = 0.0;
        for s in 0..p {
            let denom = right[s + 1] + left[p - s];
            let tmp = if denom != 0.0 { n[s] / denom } else { 0.0 };
            n[s] = saved + right[s + 1] * tmp;
            saved = left[p - s] * tmp;
        }
        n[p] = saved;
    }
    for (s, v) in n.iter().enumerate() {
        out[(mu - 3) as usize + s] = *v;
    }
}

/// Returns a basis orthonormal in `L^2` of the empirical measure on `samples`.
///
/// The Gram matrix `G = V L V^T` is floored at `1e-10 lambda_max`. At full
/// rank the new transform is `V L^{-1/2} V^T`; otherwise the retained
/// directions `L_k^{-1/2} V_k^T` are kept and `K` shrinks.
pub fn orthonormalize(bs: &BasisSet, samples: &[f64]) -> Result<BasisSet> {
    if samples.is_empty() {
        return Err(invalid("no samples to orthonormalize against"));
    }
    let g = bs.gram(samples);
    let k = g.nrows();
    let eig = SymmetricEigen::new(g);
    let lmax = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
    let keep: Vec<usize> = (0..k).filter(|&i| eig.eigenvalues[i] > 1e-10 * lmax).collect();
    if keep.is_empty() || lmax <= 0.0 {
        return Err(Error::Degenerate("empirical Gram matrix is zero".into()));
    }
    let w = if keep.len() == k {
        let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()));
        &eig.eigenvectors * d * eig.eigenvectors.transpose()
    } else {
        log::warn!("basis Gram matrix has rank {} < {}; dropping {} directions", keep.len(), k, k - keep.len());
        DMatrix::from_fn(keep.len(), k, |a, b| eig.eigenvectors[(b, keep[a])] / eig.eigenvalues[keep[a]].sqrt())
    };
    let old = bs.spec.transform.clone().unwrap_or_else(|| DMatrix::identity(bs.spec.n_raw, bs.spec.n_raw));
    let spec = BasisSpec { transform: Some(w * old), ..bs.spec.clone() };
    BasisSet::from_spec(spec)
}
