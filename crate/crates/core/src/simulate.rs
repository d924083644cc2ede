//! Euler-Maruyama simulation of the particle system and the derived data:
//! finite-difference velocities and pairwise difference samples.
//!
//! Randomness: trajectory `m` draws its initial condition and Brownian
//! increments from ChaCha stream `m + 1` of the master seed, and its
//! observation noise from stream `2^32 + m`. Results do not depend on the
//! number of threads.

use ndarray::{Array2, Array4, ArrayView2, ArrayViewMut2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::basis::BasisSet;
use crate::error::{dim, invalid, Error, Result};
use crate::model::{pair_index, Embedding, SystemParams};
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub n_traj: usize,
    pub n_steps: usize,
    pub dt: f64,
    pub sigma: f64,
    pub sigma_obs: f64,
    pub init_low: f64,
    pub init_high: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n_traj: 20,
            n_steps: 20,
            dt: 0.1,
            sigma: 1e-3,
            sigma_obs: 0.0,
            init_low: 0.0,
            init_high: 4.0,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_traj == 0 || self.n_steps == 0 {
            return Err(invalid("need at least one trajectory and one step"));
        }
        if !(self.dt > 0.0) || !(self.sigma >= 0.0) || !(self.sigma_obs >= 0.0) {
            return Err(invalid("dt must be positive and noise levels nonnegative"));
        }
        if !(self.init_high >= self.init_low) {
            return Err(invalid("initial box has init_high < init_low"));
        }
        Ok(())
    }
}

/// Observed positions `(M, L+1, N, d)` and velocities `(M, L, N, d)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryBatch {
    pub states: Array4<f64>,
    pub velocities: Array4<f64>,
    pub dt: f64,
}

impl TrajectoryBatch {
    /// Wraps observed states and differences them.
    pub fn from_states(states: Array4<f64>, dt: f64) -> Result<Self> {
        let (m, l1, n, d) = states.dim();
        let b = TrajectoryBatch { states, velocities: Array4::zeros((m, l1.saturating_sub(1), n, d)), dt };
        finite_difference_velocities(b)
    }

    pub fn n_traj(&self) -> usize {
        self.states.dim().0
    }

    pub fn n_steps(&self) -> usize {
        self.states.dim().1 - 1
    }

    pub fn n_agents(&self) -> usize {
        self.states.dim().2
    }

    pub fn dim(&self) -> usize {
        self.states.dim().3
    }
}

/// Pooled pairwise differences `r = X^j - X^i` and their norms.
#[derive(Debug, Clone, PartialEq)]
pub struct ExplorationSamples {
    pub diffs: Array2<f64>,
    pub norms: Vec<f64>,
}

impl ExplorationSamples {
    pub fn len(&self) -> usize {
        self.norms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.norms.is_empty()
    }
}

/// Adds `coef(|r|) r / |r|` into `out` for every pair; zero at coincident points.
#[inline]
fn accumulate_pairs<F>(x: ArrayView2<f64>, mut out: ArrayViewMut2<f64>, mut pair_coef: F)
where
    F: FnMut(usize, usize, f64) -> f64,
{
    let (n, d) = x.dim();
    out.fill(0.0);
    let mut r = vec![0.0; d];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let mut nr = 0.0;
            for c in 0..d {
                r[c] = x[[j, c]] - x[[i, c]];
                nr += r[c] * r[c];
            }
            let nr = nr.sqrt();
            if nr == 0.0 {
                continue;
            }
            let w = pair_coef(i, j, nr);
            if w != 0.0 {
                for c in 0..d {
                    out[[i, c]] += w * r[c] / nr;
                }
            }
        }
    }
}

/// Drift `sum_{j != i} a_ij phi_{kappa_ij}(|r|) r / |r|` for state `x` (`N x d`).
pub fn drift(x: ArrayView2<f64>, params: &SystemParams, basis: &BasisSet) -> Result<Array2<f64>> {
    let (n, d) = x.dim();
    if n != params.dims.n_agents || basis.k() != params.c.nrows() {
        return Err(dim("state, system and basis sizes disagree"));
    }
    let mut out = Array2::zeros((n, d));
    drift_params_into(x, params, basis, out.view_mut());
    Ok(out)
}

fn drift_params_into(x: ArrayView2<f64>, params: &SystemParams, basis: &BasisSet, out: ArrayViewMut2<f64>) {
    let mut psi = vec![0.0; basis.k()];
    let mut scratch = vec![0.0; basis.spec().n_raw];
    accumulate_pairs(x, out, |i, j, nr| {
        let a = params.a[(i, j)];
        if a == 0.0 {
            return 0.0;
        }
        basis.eval_with(nr, &mut scratch, &mut psi);
        let q = params.kappa.get(i, j) - 1;
        let phi: f64 = psi.iter().enumerate().map(|(k, p)| params.c[(k, q)] * p).sum();
        a * phi
    });
}

/// Drift driven directly by an embedding: row `i` is `<B_i(x), Z_i>`.
pub fn drift_embedding(x: ArrayView2<f64>, z: &Embedding, basis: &BasisSet) -> Result<Array2<f64>> {
    let (n, d) = x.dim();
    if n != z.n() || basis.k() != z.k() {
        return Err(dim("state, embedding and basis sizes disagree"));
    }
    let mut out = Array2::zeros((n, d));
    drift_embedding_into(x, z, basis, out.view_mut());
    Ok(out)
}

fn drift_embedding_into(x: ArrayView2<f64>, z: &Embedding, basis: &BasisSet, out: ArrayViewMut2<f64>) {
    let n = z.n();
    let zm = z.matrix();
    let mut psi = vec![0.0; basis.k()];
    let mut scratch = vec![0.0; basis.spec().n_raw];
    accumulate_pairs(x, out, |i, j, nr| {
        let p = pair_index(i, j, n);
        basis.eval_with(nr, &mut scratch, &mut psi);
        psi.iter().enumerate().map(|(k, v)| zm[(p, k)] * v).sum()
    });
}

/// Euler-Maruyama with `drift_fn(x, out)` writing the drift of state `x`.
pub fn simulate_with<F>(n: usize, d: usize, cfg: &SimConfig, drift_fn: F) -> Result<TrajectoryBatch>
where
    F: Fn(ArrayView2<f64>, ArrayViewMut2<f64>) + Sync,
{
    cfg.validate()?;
    let (m_tot, l_tot) = (cfg.n_traj, cfg.n_steps);
    let sq = cfg.sigma * cfg.dt.sqrt();
    let runs: Vec<Result<ndarray::Array3<f64>>> = (0..m_tot)
        .into_par_iter()
        .map(|m| {
            let mut g = rng::stream(cfg.seed, m as u64 + 1);
            let mut traj = ndarray::Array3::zeros((l_tot + 1, n, d));
            for v in traj.index_axis_mut(Axis(0), 0).iter_mut() {
                *v = if cfg.init_high > cfg.init_low {
                    g.random_range(cfg.init_low..cfg.init_high)
                } else {
                    cfg.init_low
                };
            }
            let mut f = Array2::zeros((n, d));
            for l in 0..l_tot {
                let (prev, mut next) = traj.multi_slice_mut((ndarray::s![l, .., ..], ndarray::s![l + 1, .., ..]));
                drift_fn(prev.view(), f.view_mut());
                for ((nx, px), fx) in next.iter_mut().zip(prev.iter()).zip(f.iter()) {
                    let xi: f64 = if sq > 0.0 { g.sample(StandardNormal) } else { 0.0 };
                    *nx = px + fx * cfg.dt + sq * xi;
                }
                if next.iter().any(|v| !v.is_finite() || v.abs() > 1e100) {
                    return Err(Error::BlowUp { m, l });
                }
            }
            if cfg.sigma_obs > 0.0 {
                let mut g = rng::stream(cfg.seed, (1u64 << 32) + m as u64);
                for v in traj.iter_mut() {
                    let e: f64 = g.sample(StandardNormal);
                    *v += cfg.sigma_obs * e;
                }
            }
            Ok(traj)
        })
        .collect();
    let mut states = Array4::zeros((m_tot, l_tot + 1, n, d));
    for (m, r) in runs.into_iter().enumerate() {
        states.index_axis_mut(Axis(0), m).assign(&r?);
    }
    TrajectoryBatch::from_states(states, cfg.dt)
}

/// Simulates the system defined by `(a, kappa, c)` in `basis`.
pub fn simulate_em(params: &SystemParams, basis: &BasisSet, cfg: &SimConfig) -> Result<TrajectoryBatch> {
    if basis.k() != params.c.nrows() {
        return Err(dim("basis size differs from coefficient rows"));
    }
    simulate_with(params.dims.n_agents, params.dims.dim, cfg, |x, out| drift_params_into(x, params, basis, out))
}

/// Simulates the system whose drift is `<B_i(x), Z_i>`.
pub fn simulate_embedding(z: &Embedding, basis: &BasisSet, d: usize, cfg: &SimConfig) -> Result<TrajectoryBatch> {
    if basis.k() != z.k() {
        return Err(dim("basis size differs from embedding columns"));
    }
    simulate_with(z.n(), d, cfg, |x, out| drift_embedding_into(x, z, basis, out))
}

/// Recomputes `velocities[m, l] = (states[m, l+1] - states[m, l]) / dt`.
pub fn finite_difference_velocities(mut batch: TrajectoryBatch) -> Result<TrajectoryBatch> {
    let (m, l1, n, d) = batch.states.dim();
    if l1 < 2 {
        return Err(invalid("need at least two snapshots to difference"));
    }
    let mut v = Array4::zeros((m, l1 - 1, n, d));
    for mm in 0..m {
        for l in 0..l1 - 1 {
            for i in 0..n {
                for c in 0..d {
                    v[[mm, l, i, c]] = (batch.states[[mm, l + 1, i, c]] - batch.states[[mm, l, i, c]]) / batch.dt;
                }
            }
        }
    }
    batch.velocities = v;
    Ok(batch)
}

/// Pools `X^j - X^i` over `m`, `l < L` and ordered pairs `i != j`.
pub fn exploration_samples(batch: &TrajectoryBatch) -> ExplorationSamples {
    let (m, l1, n, d) = batch.states.dim();
    let l_tot = if l1 > 1 { l1 - 1 } else { l1 };
    let count = m * l_tot * n * (n - 1);
    let mut diffs = Array2::zeros((count, d));
    let mut norms = Vec::with_capacity(count);
    let mut row = 0;
    for mm in 0..m {
        for l in 0..l_tot {
            for i in 0..n {
                for j in 0..n {
                    if i == j {
                        continue;
                    }
                    let mut s = 0.0;
                    for c in 0..d {
                        let r = batch.states[[mm, l, j, c]] - batch.states[[mm, l, i, c]];
                        diffs[[row, c]] = r;
                        s += r * r;
                    }
                    norms.push(s.sqrt());
                    row += 1;
                }
            }
        }
    }
    ExplorationSamples { diffs, norms }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{make_basis, Family};
    use crate::model::{complete_graph, GraphConvention, TypeMatrix};
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;
    use ndarray::array;

    /// Two agents, single type, phi(r) = -r on a spline basis (exact: splines reproduce lines).
    fn spring() -> (SystemParams, BasisSet) {
        let basis = make_basis(Family::CubicSpline, 0.0, 50.0, 4).unwrap();
        // Clamped cubic B-splines reproduce r with Greville coefficients.
        let h = 50.0;
        let c = DMatrix::from_column_slice(4, 1, &[0.0, -h / 3.0, -2.0 * h / 3.0, -h]);
        let a = complete_graph(2, GraphConvention::Euclidean).unwrap();
        let kappa = TypeMatrix::from_rows(&[vec![0, 1], vec![1, 0]]).unwrap();
        (SystemParams::new(a, c, kappa, 1).unwrap(), basis)
    }

    #[test]
    fn zero_kernels_give_zero_drift() {
        let (mut p, b) = spring();
        p.c.fill(0.0);
        let x = array![[0.0], [1.5]];
        assert_eq!(drift(x.view(), &p, &b).unwrap(), Array2::zeros((2, 1)));
    }

    #[test]
    fn two_body_spring_drift() {
        let (p, b) = spring();
        let x = array![[0.5], [2.0]];
        let f = drift(x.view(), &p, &b).unwrap();
        // phi(|r|) r/|r| with phi(r) = -r is -r: agent 0 is pushed away from agent 1.
        assert_relative_eq!(f[[0, 0]], -1.5, epsilon = 1e-12);
        assert_relative_eq!(f[[1, 0]], 1.5, epsilon = 1e-12);
    }

    #[test]
    fn spring_matches_scalar_recursion() {
        let (mut p, b) = spring();
        p.c *= -1.0; // attraction phi(r) = r
        let cfg = SimConfig { n_traj: 2, n_steps: 6, dt: 0.05, sigma: 0.0, ..Default::default() };
        let batch = simulate_em(&p, &b, &cfg).unwrap();
        for m in 0..2 {
            let mut gap = batch.states[[m, 0, 1, 0]] - batch.states[[m, 0, 0, 0]];
            for l in 1..=6 {
                gap *= 1.0 - 2.0 * cfg.dt;
                let got = batch.states[[m, l, 1, 0]] - batch.states[[m, l, 0, 0]];
                assert_relative_eq!(got, gap, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn zero_drift_zero_noise_is_constant() {
        let (mut p, b) = spring();
        p.c.fill(0.0);
        let cfg = SimConfig { n_traj: 3, n_steps: 4, sigma: 0.0, ..Default::default() };
        let batch = simulate_em(&p, &b, &cfg).unwrap();
        for l in 1..=4 {
            assert_eq!(batch.states.index_axis(Axis(1), l), batch.states.index_axis(Axis(1), 0));
        }
        assert!(batch.velocities.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn velocities_are_differences() {
        let states = Array4::from_shape_fn((1, 3, 2, 2), |(_, l, i, c)| (l * l + i + 3 * c) as f64);
        let b = TrajectoryBatch::from_states(states.clone(), 0.5).unwrap();
        for l in 0..2 {
            for i in 0..2 {
                for c in 0..2 {
                    let want = 2.0 * (states[[0, l + 1, i, c]] - states[[0, l, i, c]]);
                    assert_eq!(b.velocities[[0, l, i, c]], want);
                }
            }
        }
        assert!(TrajectoryBatch::from_states(Array4::zeros((1, 1, 2, 1)), 0.1).is_err());
    }

    #[test]
    fn exploration_examples() {
        let states = Array4::from_shape_vec((1, 2, 2, 1), vec![0.0, 3.0, 0.0, 3.0]).unwrap();
        let b = TrajectoryBatch::from_states(states, 1.0).unwrap();
        let e = exploration_samples(&b);
        assert_eq!(e.diffs.column(0).to_vec(), vec![3.0, -3.0]);
        assert_eq!(e.norms, vec![3.0, 3.0]);
        let b = TrajectoryBatch::from_states(Array4::zeros((2, 4, 4, 2)), 1.0).unwrap();
        assert_eq!(exploration_samples(&b).len(), 72);
    }
}
