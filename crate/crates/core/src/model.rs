//! Ground-truth parameter types, the pair-index convention and synthetic
//! system constructors.
//!
//! Pairs `(i, j)` with `i != j` are stored block by block: block `i` holds
//! rows `j = 0..N` with `j = i` skipped, so the flat pair index
//! `i * (N - 1) + pair_row_index(i, j, N)` enumerates pairs in lexicographic
//! order.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DMatrixView};
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{dim, invalid, Error, Result};
use crate::linalg;
use crate::rng;

/// Problem dimensions: `N` agents in `R^d`, `Q` kernel types, `K` basis functions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub n_agents: usize,
    pub dim: usize,
    pub n_types: usize,
    pub n_basis: usize,
}

impl Dims {
    pub fn new(n_agents: usize, dim: usize, n_types: usize, n_basis: usize) -> Result<Self> {
        let d = Dims { n_agents, dim, n_types, n_basis };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_agents < 2 {
            return Err(invalid("need at least two agents"));
        }
        if self.dim == 0 || self.n_types == 0 || self.n_basis == 0 {
            return Err(invalid("dimension, type count and basis size must be positive"));
        }
        if self.n_types > self.n_pairs() {
            return Err(invalid("more types than ordered pairs"));
        }
        Ok(())
    }

    pub fn n_pairs(&self) -> usize {
        self.n_agents * (self.n_agents - 1)
    }
}

/// Graph weights: `N x N`, zero diagonal, unit Euclidean row norms.
pub type GraphMatrix = DMatrix<f64>;

/// Kernel coefficients: `K x Q`, column `q - 1` holds kernel `q`.
pub type CoefficientMatrix = DMatrix<f64>;

/// Position of `j` inside block `i` (0-based agents).
pub fn pair_row_index(i: usize, j: usize, n: usize) -> Result<usize> {
    if i >= n || j >= n {
        return Err(invalid(format!("pair ({i}, {j}) out of range for N = {n}")));
    }
    if i == j {
        return Err(invalid("pair index undefined on the diagonal"));
    }
    Ok(if j < i { j } else { j - 1 })
}

/// Flat lexicographic index of pair `(i, j)`. Callers guarantee `i != j`.
#[inline]
pub fn pair_index(i: usize, j: usize, n: usize) -> usize {
    debug_assert!(i != j && i < n && j < n);
    i * (n - 1) + if j < i { j } else { j - 1 }
}

/// Inverse of [`pair_index`].
#[inline]
pub fn pair_from_index(p: usize, n: usize) -> (usize, usize) {
    let i = p / (n - 1);
    let r = p % (n - 1);
    (i, if r < i { r } else { r + 1 })
}

/// Integer type labels per ordered pair, `0` on the diagonal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TypeMatrix {
    n: usize,
    data: Vec<usize>,
}

impl TypeMatrix {
    pub fn zeros(n: usize) -> Self {
        TypeMatrix { n, data: vec![0; n * n] }
    }

    /// Builds from full rows; diagonal entries are ignored and stored as 0.
    pub fn from_rows(rows: &[Vec<usize>]) -> Result<Self> {
        let n = rows.len();
        let mut t = TypeMatrix::zeros(n);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(dim("type matrix must be square"));
            }
            for (j, &v) in row.iter().enumerate() {
                if i != j {
                    t.set(i, j, v);
                }
            }
        }
        Ok(t)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> usize {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: usize) {
        if i != j {
            self.data[i * self.n + j] = v;
        }
    }

    pub fn max_label(&self) -> usize {
        self.data.iter().cloned().max().unwrap_or(0)
    }

    /// Labels in flat pair order.
    pub fn pair_labels(&self) -> Vec<usize> {
        (0..self.n * (self.n - 1))
            .map(|p| {
                let (i, j) = pair_from_index(p, self.n);
                self.get(i, j)
            })
            .collect()
    }

    pub fn from_pair_labels(n: usize, labels: &[usize]) -> Self {
        let mut t = TypeMatrix::zeros(n);
        for (p, &l) in labels.iter().enumerate() {
            let (i, j) = pair_from_index(p, n);
            t.set(i, j, l);
        }
        t
    }
}

/// One-hot assignment blocks `K_i` (`(N-1) x Q`), stored as one label per
/// pair. Label 0 encodes an all-zero row (pair declared absent).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AssignmentMatrix {
    n: usize,
    q: usize,
    labels: Vec<usize>,
}

impl AssignmentMatrix {
    pub fn from_pair_labels(n: usize, q: usize, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != n * (n - 1) {
            return Err(dim("label count must equal N(N-1)"));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l > q) {
            return Err(invalid(format!("type label {bad} exceeds Q = {q}")));
        }
        Ok(AssignmentMatrix { n, q, labels })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn n_types(&self) -> usize {
        self.q
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    #[inline]
    pub fn label(&self, i: usize, j: usize) -> usize {
        self.labels[pair_index(i, j, self.n)]
    }

    /// Dense block `K_i`.
    pub fn block(&self, i: usize) -> DMatrix<f64> {
        let m = self.n - 1;
        let mut b = DMatrix::zeros(m, self.q);
        for r in 0..m {
            let l = self.labels[i * m + r];
            if l > 0 {
                b[(r, l - 1)] = 1.0;
            }
        }
        b
    }
}

pub fn type_to_assignment(kappa: &TypeMatrix, q: usize) -> Result<AssignmentMatrix> {
    let labels = kappa.pair_labels();
    if labels.iter().any(|&l| l == 0 || l > q) {
        return Err(invalid(format!("off-diagonal type outside [1, {q}]")));
    }
    AssignmentMatrix::from_pair_labels(kappa.n(), q, labels)
}

pub fn assignment_to_type(k: &AssignmentMatrix) -> TypeMatrix {
    TypeMatrix::from_pair_labels(k.n, &k.labels)
}

/// Stacked embedding `Z` (`N(N-1) x K`); row `(i, j)` is `a_ij c^(kappa_ij)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    n: usize,
    z: DMatrix<f64>,
}

impl Embedding {
    pub fn new(n: usize, z: DMatrix<f64>) -> Result<Self> {
        if n < 2 || z.nrows() != n * (n - 1) {
            return Err(dim(format!("embedding needs N(N-1) = {} rows, got {}", n * (n.max(1) - 1), z.nrows())));
        }
        Ok(Embedding { n, z })
    }

    pub fn zeros(n: usize, k: usize) -> Self {
        Embedding { n, z: DMatrix::zeros(n * (n - 1), k) }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.z.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.z
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.z
    }

    /// Block `Z_i`.
    pub fn block(&self, i: usize) -> DMatrixView<'_, f64> {
        self.z.rows(i * (self.n - 1), self.n - 1)
    }

    /// Euclidean norms of all rows in pair order.
    pub fn row_norms(&self) -> Vec<f64> {
        self.z.row_iter().map(|r| r.norm()).collect()
    }
}

/// Ground truth `(a, kappa, c)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemParams {
    pub dims: Dims,
    pub a: GraphMatrix,
    pub c: CoefficientMatrix,
    pub kappa: TypeMatrix,
}

impl SystemParams {
    pub fn new(a: GraphMatrix, c: CoefficientMatrix, kappa: TypeMatrix, dim: usize) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n || kappa.n() != n {
            return Err(dim_err_square());
        }
        let dims = Dims::new(n, dim, c.ncols(), c.nrows())?;
        if kappa.max_label() > c.ncols() {
            return Err(invalid("type label exceeds the number of kernels"));
        }
        Ok(SystemParams { dims, a, c, kappa })
    }

    pub fn embedding(&self) -> Embedding {
        build_embedding(&self.a, &self.kappa, &self.c).expect("validated at construction")
    }

    /// Types used by at least one nonzero edge, ascending.
    pub fn active_types(&self) -> Vec<usize> {
        active_types(&self.a, &self.kappa)
    }

    /// Kernel norms `v_q = |c^(q)|`.
    pub fn kernel_norms(&self) -> Vec<f64> {
        self.c.column_iter().map(|c| c.norm()).collect()
    }
}

fn dim_err_square() -> Error {
    dim("graph and type matrices must be N x N")
}

pub fn active_types(a: &GraphMatrix, kappa: &TypeMatrix) -> Vec<usize> {
    let n = a.nrows();
    let mut seen = vec![false; kappa.max_label() + 1];
    for i in 0..n {
        for j in 0..n {
            if i != j && a[(i, j)] != 0.0 {
                seen[kappa.get(i, j)] = true;
            }
        }
    }
    (1..seen.len()).filter(|&q| seen[q]).collect()
}

pub fn build_embedding(a: &GraphMatrix, kappa: &TypeMatrix, c: &CoefficientMatrix) -> Result<Embedding> {
    let n = a.nrows();
    if n < 2 || a.ncols() != n || kappa.n() != n {
        return Err(dim_err_square());
    }
    let k = c.nrows();
    let mut z = DMatrix::zeros(n * (n - 1), k);
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let q = kappa.get(i, j);
            if q == 0 || q > c.ncols() {
                return Err(invalid(format!("type {q} at ({i}, {j}) outside [1, {}]", c.ncols())));
            }
            let w = a[(i, j)];
            if w != 0.0 {
                let p = pair_index(i, j, n);
                for kk in 0..k {
                    z[(p, kk)] = w * c[(kk, q - 1)];
                }
            }
        }
    }
    Ok(Embedding { n, z })
}

/// Divides every row by its Euclidean norm.
pub fn row_normalize_graph(raw: &DMatrix<f64>) -> Result<GraphMatrix> {
    let n = raw.nrows();
    if raw.ncols() != n {
        return Err(dim_err_square());
    }
    let mut a = raw.clone();
    for i in 0..n {
        a[(i, i)] = 0.0;
        let s = a.row(i).norm();
        if !(s > 0.0) {
            return Err(invalid(format!("row {i} has no positive off-diagonal entry")));
        }
        a.row_mut(i).unscale_mut(s);
    }
    Ok(a)
}

/// Checks membership in the admissible graph set up to `tol`.
pub fn is_admissible(a: &GraphMatrix, tol: f64) -> bool {
    let n = a.nrows();
    (0..n).all(|i| {
        a[(i, i)] == 0.0 && a.row(i).iter().all(|&v| v >= 0.0 && v <= 1.0 + tol) && (a.row(i).norm() - 1.0).abs() <= tol
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GraphConvention {
    /// Off-diagonal value `1/(N-1)`: rows sum to one.
    Sum,
    /// Off-diagonal value `1/sqrt(N-1)`: rows have unit Euclidean norm.
    Euclidean,
}

pub fn complete_graph(n: usize, convention: GraphConvention) -> Result<GraphMatrix> {
    if n < 2 {
        return Err(invalid("complete graph needs N >= 2"));
    }
    let v = match convention {
        GraphConvention::Sum => 1.0 / (n - 1) as f64,
        GraphConvention::Euclidean => 1.0 / ((n - 1) as f64).sqrt(),
    };
    Ok(DMatrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { v }))
}

/// Draws a random system with every nonzero weight at least `a0`, every type
/// active on the graph support and pairwise kernel angles above 0.1 rad.
///
/// Each row gets a support of uniform size in `[1, min(N-1, floor(1/a0^2))]`
/// and uniform raw weights, rejected until all normalized weights reach
/// `a0`. Coefficients are i.i.d. Gaussian scaled by `1/sqrt(K)`.
pub fn random_system(dims: Dims, a0: f64, seed: u64) -> Result<SystemParams> {
    dims.validate()?;
    if !(a0 > 0.0 && a0 <= 1.0) {
        return Err(invalid(format!("minimum weight a0 = {a0} must lie in (0, 1]")));
    }
    let n = dims.n_agents;
    let q = dims.n_types;
    let k = dims.n_basis;
    let smax = (((1.0 / (a0 * a0)) * (1.0 + 1e-12)).floor() as usize).clamp(1, n - 1);
    if q > n * smax {
        return Err(invalid("too few edges for every type to be active"));
    }
    let a = random_graph(n, a0, seed)?;
    let support_edges = (0..n).map(|i| (0..n).filter(|&j| a[(i, j)] > 0.0).count()).sum::<usize>();
    if support_edges < q {
        // Not enough edges to activate every type; resample with a fresh stream.
        return random_system(dims, a0, rng::derive(seed, &[1]));
    }
    let kappa = random_types(&a, q, seed)?;
    let c = random_coefficients(k, q, seed);
    SystemParams::new(a, c, kappa, dims.dim)
}

/// Random admissible graph: each row gets a support of uniform size in
/// `[1, min(N-1, floor(1/a0^2))]` and uniform raw weights, rejected until all
/// normalized weights reach `a0`.
pub fn random_graph(n: usize, a0: f64, seed: u64) -> Result<GraphMatrix> {
    if n < 2 {
        return Err(invalid("graph needs N >= 2"));
    }
    if !(a0 > 0.0 && a0 <= 1.0) {
        return Err(invalid(format!("minimum weight a0 = {a0} must lie in (0, 1]")));
    }
    // Guard against 1/a0^2 landing just below an integer.
    let cap = ((1.0 / (a0 * a0)) * (1.0 + 1e-12)).floor() as usize;
    let smax = cap.clamp(1, n - 1);
    let mut g = rng::stream(seed, 0);
    let mut a = DMatrix::zeros(n, n);
    for i in 0..n {
        let mut size = g.random_range(1..=smax);
        let mut tries = 0;
        loop {
            let others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            let picks = sample(&mut g, n - 1, size);
            let w: Vec<f64> = (0..size).map(|_| g.random_range(0.0..1.0)).collect();
            let s = linalg::norm(&w);
            if s > 0.0 && w.iter().all(|&x| x / s >= a0) {
                for (t, p) in picks.iter().enumerate() {
                    a[(i, others[p])] = w[t] / s;
                }
                break;
            }
            tries += 1;
            if tries % 200 == 0 && size > 1 {
                size -= 1;
            }
        }
    }
    Ok(a)
}

/// Complete graph with weights `1/sqrt(N-1)`, uniform random types with
/// every type present, and coefficients drawn as in [`random_system`].
pub fn random_complete_system(dims: Dims, seed: u64) -> Result<SystemParams> {
    dims.validate()?;
    let n = dims.n_agents;
    if dims.n_types > n * (n - 1) {
        return Err(invalid("too few pairs for every type to be active"));
    }
    let a = complete_graph(n, GraphConvention::Euclidean)?;
    let kappa = random_types(&a, dims.n_types, seed)?;
    let c = random_coefficients(dims.n_basis, dims.n_types, seed);
    SystemParams::new(a, c, kappa, dims.dim)
}

fn random_types(a: &GraphMatrix, q: usize, seed: u64) -> Result<TypeMatrix> {
    let n = a.nrows();
    let mut g = rng::stream(seed, 1);
    let mut kappa = TypeMatrix::zeros(n);
    for attempt in 0.. {
        if attempt > 10_000 {
            return Err(Error::Degenerate("could not activate every type".into()));
        }
        for i in 0..n {
            for j in 0..n {
                kappa.set(i, j, g.random_range(1..=q));
            }
        }
        if active_types(a, &kappa).len() == q {
            break;
        }
    }
    Ok(kappa)
}

/// i.i.d. `N(0, 1/K)` entries, redrawn until all column angles exceed 0.1.
fn random_coefficients(k: usize, q: usize, seed: u64) -> CoefficientMatrix {
    let mut g = rng::stream(seed, 2);
    let scale = 1.0 / (k as f64).sqrt();
    loop {
        let c = DMatrix::from_fn(k, q, |_, _| g.sample::<f64, _>(StandardNormal) * scale);
        if q == 1 || min_column_angle(&c, &(1..=q).collect::<Vec<_>>()) > 0.1 {
            return c;
        }
    }
}

/// Oracle separation constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeparabilityParams {
    pub theta_min: f64,
    pub z_min: f64,
    pub eps0: f64,
}

impl SeparabilityParams {
    pub fn from_parts(theta_min: f64, z_min: f64) -> Self {
        let eps0 = (z_min * theta_min / (2.0 * PI)).min(z_min / 2.0);
        SeparabilityParams { theta_min, z_min, eps0 }
    }
}

/// Minimum angle between the columns of `c` listed in `types` (1-based);
/// `pi` when fewer than two.
pub fn min_column_angle(c: &DMatrix<f64>, types: &[usize]) -> f64 {
    let mut best = PI;
    for (x, &p) in types.iter().enumerate() {
        for &r in &types[x + 1..] {
            let ang = linalg::angle(c.column(p - 1).as_slice(), c.column(r - 1).as_slice());
            best = best.min(ang);
        }
    }
    best
}

pub fn separability_params(params: &SystemParams) -> Result<SeparabilityParams> {
    let n = params.dims.n_agents;
    let v = params.kernel_norms();
    let mut z_min = f64::INFINITY;
    for i in 0..n {
        for j in 0..n {
            if i != j && params.a[(i, j)] != 0.0 {
                z_min = z_min.min(params.a[(i, j)].abs() * v[params.kappa.get(i, j) - 1]);
            }
        }
    }
    if !z_min.is_finite() {
        return Err(invalid("graph has no nonzero entries"));
    }
    let theta_min = min_column_angle(&params.c, &params.active_types());
    Ok(SeparabilityParams::from_parts(theta_min, z_min))
}
