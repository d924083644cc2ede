//! Sensing tensors, the matrix-sensing loss and the stage-1 solvers.
//!
//! Snapshot `s = m * L + l` carries, for every agent `i`, the tensor
//! `B_i` of shape `(N-1) x K x d` with `B^{jk} = psi_k(|r|) r / |r|`,
//! `r = X^j - X^i`, and the observed velocity of agent `i`.
//!
//! The solvers work on per-agent sufficient statistics
//! `G_i = sum_s B_s^T B_s` and `h_i = sum_s B_s^T v_s`, indexed by
//! `(j, k) -> j * K + k`.

use nalgebra::{DMatrix, DVector};
use ndarray::{Array3, Array5, ArrayView3};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::basis::BasisSet;
use crate::error::{dim, invalid, Error, Result};
use crate::linalg::{pinv_solve, spd_solve, PINV_FLOOR};
use crate::model::Embedding;
use crate::rng;
use crate::simulate::TrajectoryBatch;

#[derive(Debug, Clone, PartialEq)]
pub struct SensingTensorBatch {
    /// `(S, N, N-1, K, d)`.
    tensors: Array5<f64>,
    /// `(S, N, d)`.
    velocities: Array3<f64>,
}

impl SensingTensorBatch {
    /// Wraps externally built tensors, e.g. synthetic Gaussian designs.
    pub fn from_raw(tensors: Array5<f64>, velocities: Array3<f64>) -> Result<Self> {
        let (s, n, m, _k, d) = tensors.dim();
        if n < 2 || m != n - 1 {
            return Err(dim("tensor axis 2 must have N - 1 entries"));
        }
        if velocities.dim() != (s, n, d) {
            return Err(dim("velocities must be (S, N, d)"));
        }
        Ok(SensingTensorBatch { tensors, velocities })
    }

    pub fn n_snapshots(&self) -> usize {
        self.tensors.dim().0
    }

    pub fn n_agents(&self) -> usize {
        self.tensors.dim().1
    }

    pub fn k(&self) -> usize {
        self.tensors.dim().3
    }

    pub fn dim(&self) -> usize {
        self.tensors.dim().4
    }

    pub fn tensors(&self) -> &Array5<f64> {
        &self.tensors
    }

    pub fn velocities(&self) -> &Array3<f64> {
        &self.velocities
    }

    /// `B_i` at snapshot `s`, shape `(N-1, K, d)`.
    pub fn tensor(&self, s: usize, i: usize) -> ArrayView3<'_, f64> {
        self.tensors.slice(ndarray::s![s, i, .., .., ..])
    }

    /// Predicted velocities `<B_i, Z_i>` for all snapshots, `(S, N, d)`.
    pub fn predict(&self, z: &Embedding) -> Array3<f64> {
        let (s_tot, n, m, k, d) = self.tensors.dim();
        let zm = z.matrix();
        let mut out = Array3::zeros((s_tot, n, d));
        for s in 0..s_tot {
            for i in 0..n {
                for j in 0..m {
                    let p = i * m + j;
                    for kk in 0..k {
                        let w = zm[(p, kk)];
                        if w == 0.0 {
                            continue;
                        }
                        for c in 0..d {
                            out[[s, i, c]] += self.tensors[[s, i, j, kk, c]] * w;
                        }
                    }
                }
            }
        }
        out
    }

    /// Per-agent Gram matrices and moment vectors.
    pub fn stats(&self) -> SufficientStats {
        let (s_tot, n, m, k, d) = self.tensors.dim();
        let per: Vec<(DMatrix<f64>, DVector<f64>, f64)> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut design = DMatrix::zeros(s_tot * d, m * k);
                let mut y = DVector::zeros(s_tot * d);
                for s in 0..s_tot {
                    for c in 0..d {
                        let row = s * d + c;
                        y[row] = self.velocities[[s, i, c]];
                        for j in 0..m {
                            for kk in 0..k {
                                design[(row, j * k + kk)] = self.tensors[[s, i, j, kk, c]];
                            }
                        }
                    }
                }
                (design.tr_mul(&design), design.tr_mul(&y), y.norm_squared())
            })
            .collect();
        let mut g = Vec::with_capacity(n);
        let mut h = Vec::with_capacity(n);
        let mut yy = Vec::with_capacity(n);
        for (gi, hi, yi) in per {
            g.push(gi);
            h.push(hi);
            yy.push(yi);
        }
        SufficientStats { n, k, n_obs: s_tot, g, h, yy }
    }
}

/// Builds tensors from all snapshots `l < L` of every trajectory.
pub fn build_sensing_tensors(batch: &TrajectoryBatch, bs: &BasisSet) -> Result<SensingTensorBatch> {
    let (m_tot, l1, n, d) = batch.states.dim();
    let l_tot = l1 - 1;
    if batch.velocities.dim() != (m_tot, l_tot, n, d) {
        return Err(dim("velocities missing or misshaped"));
    }
    let k = bs.k();
    let s_tot = m_tot * l_tot;
    let mut tensors = Array5::zeros((s_tot, n, n - 1, k, d));
    let mut velocities = Array3::zeros((s_tot, n, d));
    let mut psi = vec![0.0; k];
    let mut scratch = vec![0.0; bs.spec().n_raw];
    let mut r = vec![0.0; d];
    for mm in 0..m_tot {
        for l in 0..l_tot {
            let s = mm * l_tot + l;
            for i in 0..n {
                for c in 0..d {
                    velocities[[s, i, c]] = batch.velocities[[mm, l, i, c]];
                }
                for j in 0..n {
                    if i == j {
                        continue;
                    }
                    let jr = if j < i { j } else { j - 1 };
                    let mut nr = 0.0;
                    for (c, rc) in r.iter_mut().enumerate().take(d) {
                        *rc = batch.states[[mm, l, j, c]] - batch.states[[mm, l, i, c]];
                        nr += *rc * *rc;
                    }
                    let nr = nr.sqrt();
                    if nr == 0.0 {
                        continue;
                    }
                    bs.eval_with(nr, &mut scratch, &mut psi);
                    for kk in 0..k {
                        for c in 0..d {
                            tensors[[s, i, jr, kk, c]] = psi[kk] * r[c] / nr;
                        }
                    }
                }
            }
        }
    }
    Ok(SensingTensorBatch { tensors, velocities })
}

/// `(1/N) sum_i (1/S) sum_s |v_s^i - <B_i(s), Z_i>|^2`, from residuals.
pub fn loss_z(z: &Embedding, stb: &SensingTensorBatch) -> f64 {
    let pred = stb.predict(z);
    let (s_tot, n, _) = pred.dim();
    let sum: f64 = pred.iter().zip(stb.velocities.iter()).map(|(p, v)| (v - p) * (v - p)).sum();
    sum / (n * s_tot) as f64
}

/// Per-agent sufficient statistics of the least-squares problems.
#[derive(Debug, Clone)]
pub struct SufficientStats {
    pub n: usize,
    pub k: usize,
    /// Number of snapshots `S = L M`.
    pub n_obs: usize,
    pub g: Vec<DMatrix<f64>>,
    pub h: Vec<DVector<f64>>,
    pub yy: Vec<f64>,
}

/// Solves for the coefficient matrix with the pair factors `u` fixed.
///
/// `u` is `N(N-1) x Q`; the result is `K x Q`. Also returns whether the
/// normal matrix had full rank.
pub fn solve_c(stats: &SufficientStats, u: &DMatrix<f64>) -> (DMatrix<f64>, bool) {
    let (n, k) = (stats.n, stats.k);
    let m = n - 1;
    let q = u.ncols();
    let kq = k * q;
    let parts: Vec<(DMatrix<f64>, DVector<f64>)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let g = &stats.g[i];
            let h = &stats.h[i];
            let ui = u.rows(i * m, m);
            // gw[:, q*K + k'] = sum_j' U[j', q] G[:, j'*K + k'].
            let mut gw = DMatrix::<f64>::zeros(m * k, kq);
            for qq in 0..q {
                let mut dst = gw.columns_mut(qq * k, k);
                for jp in 0..m {
                    let w = ui[(jp, qq)];
                    if w != 0.0 {
                        dst.zip_apply(&g.columns(jp * k, k), |a, b: f64| *a += w * b);
                    }
                }
            }
            let mut normal = DMatrix::zeros(kq, kq);
            let mut rhs = DVector::zeros(kq);
            for qq in 0..q {
                let mut nrow = normal.rows_mut(qq * k, k);
                let mut r = rhs.rows_mut(qq * k, k);
                for j in 0..m {
                    let w = ui[(j, qq)];
                    if w != 0.0 {
                        nrow.zip_apply(&gw.rows(j * k, k), |a, b: f64| *a += w * b);
                        r.axpy(w, &h.rows(j * k, k), 1.0);
                    }
                }
            }
            (normal, rhs)
        })
        .collect();
    let mut normal = DMatrix::zeros(kq, kq);
    let mut rhs = DVector::zeros(kq);
    for (a, b) in parts {
        normal += a;
        rhs += b;
    }
    let sol = spd_solve(&normal, &rhs);
    let full = sol.full_rank(kq);
    (DMatrix::from_column_slice(k, q, sol.x.as_slice()), full)
}

/// Solves for block `u_i` (`(N-1) x Q`) with `c` fixed.
pub fn solve_u_block(stats: &SufficientStats, i: usize, c: &DMatrix<f64>) -> (DMatrix<f64>, bool) {
    let (g, h) = (&stats.g[i], &stats.h[i]);
    let m = stats.n - 1;
    let k = stats.k;
    let q = c.ncols();
    // gv[:, j'*Q + q'] = G[:, j' block] c[:, q'].
    let mut gv = DMatrix::zeros(m * k, m * q);
    for jp in 0..m {
        gv.columns_mut(jp * q, q).gemm(1.0, &g.columns(jp * k, k), c, 0.0);
    }
    let mut normal = DMatrix::zeros(m * q, m * q);
    let mut rhs = DVector::zeros(m * q);
    for j in 0..m {
        normal.rows_mut(j * q, q).gemm(1.0, &c.transpose(), &gv.rows(j * k, k), 0.0);
        rhs.rows_mut(j * q, q).gemm(1.0, &c.transpose(), &h.rows(j * k, k), 0.0);
    }
    let sol = spd_solve(&normal, &rhs);
    let full = sol.full_rank(m * q);
    (DMatrix::from_row_slice(m, q, sol.x.as_slice()), full)
}

/// All `u_i` blocks in parallel, stacked.
pub fn solve_u(stats: &SufficientStats, c: &DMatrix<f64>) -> DMatrix<f64> {
    let m = stats.n - 1;
    let blocks: Vec<DMatrix<f64>> = (0..stats.n).into_par_iter().map(|i| solve_u_block(stats, i, c).0).collect();
    let mut u = DMatrix::zeros(stats.n * m, c.ncols());
    for (i, b) in blocks.into_iter().enumerate() {
        u.rows_mut(i * m, m).copy_from(&b);
    }
    u
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlsOptions {
    pub q_hat: usize,
    pub eps: f64,
    pub max_iter: usize,
    /// Rebalance the factors after every sweep so that `u^T u = c^T c`.
    pub regularize: bool,
    pub restarts: usize,
    pub seed: u64,
    /// Record the loss after every half-step.
    pub record_history: bool,
}

impl Default for AlsOptions {
    fn default() -> Self {
        AlsOptions {
            q_hat: 2,
            eps: 1e-8,
            max_iter: 500,
            regularize: false,
            restarts: 1,
            seed: 0,
            record_history: false,
        }
    }
}

impl AlsOptions {
    /// Default rank bound `min(N-1, K, 8)`.
    pub fn default_rank(n: usize, k: usize) -> usize {
        (n - 1).min(k).clamp(1, 8)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HalfStepKind {
    C,
    U,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HalfStep {
    pub iteration: usize,
    pub kind: HalfStepKind,
    pub loss: f64,
}

#[derive(Debug, Clone)]
pub struct AlsReport {
    pub z_hat: Embedding,
    pub u_hat: DMatrix<f64>,
    pub c_hat: DMatrix<f64>,
    pub iterations: usize,
    pub final_loss: f64,
    pub converged: bool,
    /// Loss after each half-step, when requested.
    pub history: Vec<HalfStep>,
}

pub fn factors_to_embedding(n: usize, u: &DMatrix<f64>, c: &DMatrix<f64>) -> Embedding {
    Embedding::new(n, u * c.transpose()).expect("factor shapes agree")
}

/// Stage 1: rank-`Q` alternating least squares from a random start.
pub fn als_fit(stb: &SensingTensorBatch, opts: &AlsOptions) -> Result<AlsReport> {
    let stats = stb.stats();
    als_fit_with_stats(stb, &stats, opts)
}

pub fn als_fit_with_stats(stb: &SensingTensorBatch, stats: &SufficientStats, opts: &AlsOptions) -> Result<AlsReport> {
    if opts.q_hat == 0 {
        return Err(invalid("rank must be at least 1"));
    }
    if opts.max_iter == 0 {
        return Err(invalid("max_iter must be positive"));
    }
    let mut best: Option<AlsReport> = None;
    for restart in 0..opts.restarts.max(1) {
        let rep = als_single(stb, stats, opts, restart as u64)?;
        if best.as_ref().is_none_or(|b| rep.final_loss < b.final_loss) {
            best = Some(rep);
        }
    }
    Ok(best.expect("at least one restart"))
}

fn als_single(stb: &SensingTensorBatch, stats: &SufficientStats, opts: &AlsOptions, restart: u64) -> Result<AlsReport> {
    let n = stats.n;
    let m = n - 1;
    let q = opts.q_hat;
    let mut g = rng::stream(opts.seed, restart);
    let scale = 1.0 / (q as f64).sqrt();
    let mut u = DMatrix::from_fn(n * m, q, |_, _| g.sample::<f64, _>(StandardNormal) * scale);
    let mut c = DMatrix::zeros(stats.k, q);
    let mut history = Vec::new();
    let track = |u: &DMatrix<f64>, c: &DMatrix<f64>| loss_z(&factors_to_embedding(n, u, c), stb);
    let mut converged = false;
    let mut iterations = 0;
    for it in 1..=opts.max_iter {
        iterations = it;
        let (c_new, _) = solve_c(stats, &u);
        if opts.record_history {
            let loss = track(&u, &c_new);
            if !loss.is_finite() {
                return Err(Error::Diverged(it));
            }
            history.push(HalfStep { iteration: it, kind: HalfStepKind::C, loss });
        }
        let mut u_new = solve_u(stats, &c_new);
        let mut c_new = c_new;
        if opts.record_history {
            let loss = track(&u_new, &c_new);
            history.push(HalfStep { iteration: it, kind: HalfStepKind::U, loss });
        }
        if opts.regularize {
            (u_new, c_new) = balance(&u_new, &c_new);
        }
        if u_new.iter().chain(c_new.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Diverged(it));
        }
        let du = (&u_new - &u).norm();
        let dc = (&c_new - &c).norm();
        let done = du <= opts.eps * u.norm() && dc <= opts.eps * c.norm();
        u = u_new;
        c = c_new;
        if done {
            converged = true;
            break;
        }
    }
    let z_hat = factors_to_embedding(n, &u, &c);
    let final_loss = loss_z(&z_hat, stb);
    if !final_loss.is_finite() {
        return Err(Error::Diverged(iterations));
    }
    Ok(AlsReport { z_hat, u_hat: u, c_hat: c, iterations, final_loss, converged, history })
}

/// Rewrites `u c^T` as `u' c'^T` with `u'^T u' = c'^T c'`, which zeroes the
/// balancing penalty `|u^T u - c^T c|_F^2` without changing the product.
pub fn balance(u: &DMatrix<f64>, c: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let q = u.ncols();
    let qr_u = u.clone().qr();
    let qr_c = c.clone().qr();
    let core = qr_u.r() * qr_c.r().transpose();
    let svd = core.svd(true, true);
    let a = svd.u.expect("requested");
    let bt = svd.v_t.expect("requested");
    let root = DMatrix::from_diagonal(&svd.singular_values.map(f64::sqrt));
    let r = root.nrows();
    let mut u2 = DMatrix::zeros(u.nrows(), q);
    let mut c2 = DMatrix::zeros(c.nrows(), q);
    u2.columns_mut(0, r).copy_from(&(qr_u.q() * a * &root));
    c2.columns_mut(0, r).copy_from(&(qr_c.q() * bt.transpose() * &root));
    (u2, c2)
}

/// Unconstrained per-agent least squares with minimum-norm fallback.
#[derive(Debug, Clone)]
pub struct DirectFit {
    pub z: Embedding,
    /// Set when some block's normal matrix was rank deficient.
    pub rank_deficient: bool,
}

pub fn direct_ls_fit(stb: &SensingTensorBatch) -> DirectFit {
    direct_ls_fit_with_stats(&stb.stats())
}

pub fn direct_ls_fit_with_stats(stats: &SufficientStats) -> DirectFit {
    let (n, k) = (stats.n, stats.k);
    let m = n - 1;
    let sols: Vec<_> = (0..n).into_par_iter().map(|i| pinv_solve(&stats.g[i], &stats.h[i], PINV_FLOOR)).collect();
    let mut z = DMatrix::zeros(n * m, k);
    let mut deficient = false;
    for (i, s) in sols.into_iter().enumerate() {
        deficient |= s.rank < m * k;
        z.rows_mut(i * m, m).copy_from(&DMatrix::from_row_slice(m, k, s.x.as_slice()));
    }
    DirectFit { z: Embedding::new(n, z).expect("shape"), rank_deficient: deficient }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RipProbe {
    pub ratio_min: f64,
    pub ratio_max: f64,
    /// Median of the raw ratios.
    pub scale: f64,
    /// `max(1 - ratio_min, ratio_max - 1)`.
    pub delta: f64,
}

/// Monte-Carlo probe of restricted isometry on random rank-`q` matrices.
///
/// For each trial and agent a random `Z = G_1 G_2^T` is drawn and
/// `r(Z) = (1/S) sum_s <B_i(s), Z>^2 / |Z|_F^2` is recorded. Ratios are
/// normalized by their median.
pub fn empirical_rip_ratio(stb: &SensingTensorBatch, q: usize, trials: usize, seed: u64) -> Result<RipProbe> {
    if stb.dim() != 1 {
        return Err(invalid("the isometry probe is defined for d = 1"));
    }
    if trials < 2 || q == 0 {
        return Err(invalid("need at least two trials and a positive rank"));
    }
    if stb.tensors.iter().all(|&v| v == 0.0) {
        return Err(Error::Degenerate("all sensing tensors are zero".into()));
    }
    let stats = stb.stats();
    let (n, k) = (stats.n, stats.k);
    let m = n - 1;
    let mut g = rng::stream(seed, 0);
    let mut ratios = Vec::with_capacity(trials * n);
    for _ in 0..trials {
        for i in 0..n {
            let a = DMatrix::from_fn(m, q, |_, _| g.sample::<f64, _>(StandardNormal));
            let b = DMatrix::from_fn(k, q, |_, _| g.sample::<f64, _>(StandardNormal));
            let z = a * b.transpose();
            // Row-major flattening matches the (j, k) -> j*K + k layout.
            let zv = DVector::from_row_slice(z.transpose().as_slice());
            let quad = zv.dot(&(&stats.g[i] * &zv));
            ratios.push(quad / (stats.n_obs as f64 * zv.norm_squared()));
        }
    }
    let scale = crate::linalg::median(&ratios);
    let lo = ratios.iter().cloned().fold(f64::INFINITY, f64::min) / scale;
    let hi = ratios.iter().cloned().fold(0.0f64, f64::max) / scale;
    Ok(RipProbe { ratio_min: lo, ratio_max: hi, scale, delta: (1.0 - lo).max(hi - 1.0) })
}
