//! Ready-made systems and configurations for the standard experiments.

use nalgebra::DMatrix;

use crate::basis::{BasisSet, Family};
use crate::config::{BasisConfig, PipelineConfig, QChoice, SystemConfig, SystemKind};
use crate::error::{Error, Result};
use crate::model::{active_types, random_complete_system, random_graph, random_system, Dims, SystemParams, TypeMatrix};
use crate::rng;
use crate::simulate::SimConfig;

pub const N_PREDATORS: usize = 6;
pub const N_PREY: usize = 4;

/// Minimum nonzero weight of the predator-prey graph.
pub const PREDATOR_PREY_A0: f64 = 0.3;

/// Radial kernels of the predator-prey system, indexed by type.
pub fn predator_prey_kernel(q: usize, r: f64) -> f64 {
    match q {
        // Predator chasing prey: attraction peaking at long range.
        1 => 0.55 * r * (-r / 6.5).exp(),
        // Prey among prey: mild repulsion.
        2 => -0.27 * (-r / 1.5).exp(),
        // Prey fleeing predators: short-range repulsion.
        3 => -2.8 * (-(r / 0.3).powi(2)).exp(),
        // Predators among predators: mild attraction at moderate range.
        4 => 0.27 * (-(r - 1.5).powi(2)).exp(),
        _ => 0.0,
    }
}

/// Greville abscissae of a clamped uniform cubic spline basis with `k`
/// functions on `[lo, hi]`.
pub fn greville_points(lo: f64, hi: f64, k: usize) -> Vec<f64> {
    let intervals = k - 3;
    let h = (hi - lo) / intervals as f64;
    let mut t = vec![lo; 4];
    t.extend((1..intervals).map(|s| lo + s as f64 * h));
    t.extend([hi; 4]);
    (0..k).map(|j| (t[j + 1] + t[j + 2] + t[j + 3]) / 3.0).collect()
}

/// Spline coefficients from kernel values at the Greville points, which
/// reproduces linear functions exactly.
pub fn spline_coefficients(f: impl Fn(f64) -> f64, lo: f64, hi: f64, k: usize) -> Result<Vec<f64>> {
    if k < 4 {
        return Err(Error::InvalidArgument("cubic splines need K >= 4".into()));
    }
    Ok(greville_points(lo, hi, k).into_iter().map(f).collect())
}

fn is_predator(i: usize) -> bool {
    i < N_PREDATORS
}

/// Type of the influence of `j` on `i`.
pub fn predator_prey_type(i: usize, j: usize) -> usize {
    match (is_predator(i), is_predator(j)) {
        (true, false) => 1,
        (false, false) => 2,
        (false, true) => 3,
        (true, true) => 4,
    }
}

/// Six predators and four prey on a random graph with every type active.
pub fn predator_prey_system(basis: &BasisConfig, a0: f64, dim: usize, seed: u64) -> Result<SystemParams> {
    if basis.family != Family::CubicSpline {
        return Err(Error::InvalidArgument("predator-prey kernels are given in a cubic spline basis".into()));
    }
    let n = N_PREDATORS + N_PREY;
    let mut kappa = TypeMatrix::zeros(n);
    for i in 0..n {
        for j in 0..n {
            kappa.set(i, j, predator_prey_type(i, j));
        }
    }
    let mut c = DMatrix::zeros(basis.k, 4);
    for q in 1..=4 {
        let col = spline_coefficients(|r| predator_prey_kernel(q, r), basis.lo, basis.hi, basis.k)?;
        c.column_mut(q - 1).copy_from_slice(&col);
    }
    for attempt in 0..10_000u64 {
        let a = random_graph(n, a0, rng::derive(seed, &[attempt]))?;
        if active_types(&a, &kappa).len() == 4 {
            return SystemParams::new(a, c, kappa, dim);
        }
    }
    Err(Error::Degenerate("no predator-prey graph activates every type".into()))
}

/// The true system described by `cfg`.
pub fn build_system(cfg: &SystemConfig) -> Result<SystemParams> {
    let dims = Dims::new(cfg.n_agents, cfg.dim, cfg.n_types, cfg.basis.k)?;
    match cfg.kind {
        SystemKind::Random => random_system(dims, cfg.a0, cfg.seed),
        SystemKind::Complete => random_complete_system(dims, cfg.seed),
        SystemKind::PredatorPrey => predator_prey_system(&cfg.basis, cfg.a0, cfg.dim, cfg.seed),
    }
}

pub fn truth_basis(cfg: &SystemConfig) -> Result<BasisSet> {
    cfg.basis.build()
}

fn fourier(k: usize) -> BasisConfig {
    BasisConfig { family: Family::Fourier, lo: 0.0, hi: 6.0, k }
}

fn random_config(n: usize, d: usize, q: usize, k: usize, a0: f64, kind: SystemKind) -> PipelineConfig {
    let basis = fourier(k);
    PipelineConfig {
        system: SystemConfig { kind, n_agents: n, dim: d, n_types: q, a0, seed: 0, basis: basis.clone() },
        basis,
        ..Default::default()
    }
}

/// Noiseless one-step data with many trajectories; recovery should be exact.
pub fn noiseless() -> PipelineConfig {
    let mut c = random_config(6, 1, 2, 5, 0.3, SystemKind::Random);
    c.sim = SimConfig { n_traj: 200, n_steps: 1, dt: 0.1, sigma: 0.0, ..Default::default() };
    c
}

/// Six predators and four prey in the plane, cubic splines with 10 knot
/// intervals on `[0, 5]`, orthonormalized on the observed distances.
pub fn predator_prey() -> PipelineConfig {
    let basis = BasisConfig { family: Family::CubicSpline, lo: 0.0, hi: 5.0, k: 13 };
    PipelineConfig {
        system: SystemConfig {
            kind: SystemKind::PredatorPrey,
            n_agents: 10,
            dim: 2,
            n_types: 4,
            a0: PREDATOR_PREY_A0,
            seed: 0,
            basis: basis.clone(),
        },
        basis,
        orthonormalize: true,
        sim: SimConfig { n_traj: 20, n_steps: 20, dt: 0.1, sigma: 1e-3, sigma_obs: 1e-3, ..Default::default() },
        ..Default::default()
    }
}

/// Sparse (`a0 = 0.25`) or dense (`a0 = 0.05`) random graph, one step per
/// trajectory.
pub fn convergence_m(m: usize, a0: f64) -> PipelineConfig {
    let mut c = random_config(12, 2, 3, 10, a0, SystemKind::Random);
    c.sim = SimConfig { n_traj: m, n_steps: 1, dt: 0.1, sigma: 1e-4, ..Default::default() };
    c
}

/// Like [`convergence_m`] on a known complete graph.
pub fn convergence_m_complete(m: usize) -> PipelineConfig {
    let mut c = random_config(12, 2, 3, 10, 0.25, SystemKind::Complete);
    c.sim = SimConfig { n_traj: m, n_steps: 1, dt: 0.1, sigma: 1e-4, ..Default::default() };
    c
}

/// Growing number of agents at fixed sample size.
pub fn convergence_n(n: usize, complete: bool) -> PipelineConfig {
    let kind = if complete { SystemKind::Complete } else { SystemKind::Random };
    let mut c = random_config(n, 2, 3, 10, 0.25, kind);
    c.sim = SimConfig { n_traj: 100, n_steps: 10, dt: 0.1, sigma: 1e-4, ..Default::default() };
    c
}

/// Complete graph with two types; used to find the smallest workable `M`.
pub fn sample_size(n: usize, k: usize, m: usize) -> PipelineConfig {
    let mut c = random_config(n, 2, 2, k, 0.25, SystemKind::Complete);
    c.sim = SimConfig { n_traj: m, n_steps: 1, dt: 0.1, sigma: 1e-4, ..Default::default() };
    c.cluster.q = QChoice::True;
    c.refine.enabled = false;
    c.eval.trajectory = false;
    c
}

pub fn by_name(name: &str) -> Result<PipelineConfig> {
    Ok(match name {
        "noiseless" => noiseless(),
        "predator_prey" | "predator-prey" => predator_prey(),
        "sparse" | "convergence_m" => convergence_m(128, 0.25),
        "dense" => convergence_m(128, 0.05),
        "complete" => convergence_m_complete(64),
        "convergence_n" => convergence_n(16, false),
        _ => return Err(Error::InvalidArgument(format!("unknown preset '{name}'"))),
    })
}

pub const PRESET_NAMES: &[&str] = &["noiseless", "predator_prey", "sparse", "dense", "complete", "convergence_n"];

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::make_basis;
    use approx::assert_relative_eq;

    #[test]
    fn greville_points_reproduce_lines() {
        let bs = make_basis(Family::CubicSpline, 0.0, 5.0, 13).unwrap();
        let c = spline_coefficients(|r| 2.0 - 0.7 * r, 0.0, 5.0, 13).unwrap();
        for t in 0..50 {
            let r = 0.05 + t as f64 * 0.099;
            assert_relative_eq!(bs.combine(&c, r), 2.0 - 0.7 * r, epsilon = 1e-12);
        }
    }

    #[test]
    fn predator_prey_types_follow_roles() {
        let p = predator_prey_system(&predator_prey().system.basis, PREDATOR_PREY_A0, 2, 0).unwrap();
        assert_eq!(p.kappa.get(0, 9), 1);
        assert_eq!(p.kappa.get(9, 8), 2);
        assert_eq!(p.kappa.get(9, 0), 3);
        assert_eq!(p.kappa.get(0, 1), 4);
        assert_eq!(p.active_types(), vec![1, 2, 3, 4]);
        assert!(crate::model::is_admissible(&p.a, 1e-12));
    }

    #[test]
    fn presets_validate() {
        for name in PRESET_NAMES {
            by_name(name).unwrap().validate().unwrap();
        }
        sample_size(4, 2, 10).validate().unwrap();
        build_system(&sample_size(4, 2, 10).system).unwrap();
    }
}
