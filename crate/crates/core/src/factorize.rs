//! Stage 3a: splitting the clustered embedding into graph weights and kernel
//! coefficients.
//!
//! With `z_ij = a_ij v_q` for the row norms and unit row norms of `a`,
//! `eta_q = 1 / v_q^2` solves `A eta = 1` where
//! `A_iq = sum_{j : kappa_ij = q} z_ij^2`.

use nalgebra::{DMatrix, DVector};

use crate::cluster::ClusterResult;
use crate::error::{dim, Error, Result};
use crate::model::{pair_index, AssignmentMatrix, Embedding, GraphMatrix};

/// Default relative floor on singular values of the design.
pub const SV_FLOOR: f64 = 1e-10;

/// `A_iq = sum_{j : kappa_ij = q} z_ij^2` (`N x Q`).
pub fn build_design(norms: &[f64], assignment: &AssignmentMatrix) -> Result<DMatrix<f64>> {
    let n = assignment.n();
    if norms.len() != n * (n - 1) {
        return Err(dim("row norms must cover every pair"));
    }
    let mut a = DMatrix::zeros(n, assignment.n_types());
    for (p, &l) in assignment.labels().iter().enumerate() {
        if l > 0 {
            a[(p / (n - 1), l - 1)] += norms[p] * norms[p];
        }
    }
    Ok(a)
}

#[derive(Debug, Clone)]
pub struct EtaSolution {
    pub eta: DVector<f64>,
    pub rank: usize,
    pub sigma_min: f64,
    /// 1-based types whose design column is nonzero.
    pub active_types: Vec<usize>,
    /// Set when the design cannot separate the active kernel norms.
    pub scale_ambiguous: bool,
}

/// Minimum-norm least-squares solution of `A eta = 1` by SVD.
///
/// Nonpositive entries for active types are raised to the smallest positive
/// entry, with a warning.
pub fn solve_eta(a: &DMatrix<f64>, sv_floor: f64) -> Result<EtaSolution> {
    if a.iter().all(|&v| v == 0.0) {
        return Err(Error::Degenerate("design matrix is zero".into()));
    }
    let q = a.ncols();
    let svd = a.clone().svd(true, true);
    let s = &svd.singular_values;
    let smax = s.iter().cloned().fold(0.0f64, f64::max);
    let sigma_min = s.iter().cloned().fold(f64::INFINITY, f64::min);
    let u = svd.u.as_ref().expect("requested");
    let vt = svd.v_t.as_ref().expect("requested");
    let ones = DVector::from_element(a.nrows(), 1.0);
    let mut eta = DVector::zeros(q);
    let mut rank = 0;
    for k in 0..s.len() {
        if s[k] > sv_floor * smax {
            rank += 1;
            let coef = u.column(k).dot(&ones) / s[k];
            eta.axpy(coef, &vt.row(k).transpose(), 1.0);
        }
    }
    let active: Vec<usize> = (0..q).filter(|&c| a.column(c).iter().any(|&v| v != 0.0)).map(|c| c + 1).collect();
    let floor = active.iter().map(|&t| eta[t - 1]).filter(|&e| e > 0.0).fold(f64::INFINITY, f64::min);
    for &t in &active {
        if eta[t - 1] <= 0.0 {
            let repl = if floor.is_finite() { floor } else { 1.0 };
            log::warn!("eta for type {t} is {:.3e}; raising it to {repl:.3e}", eta[t - 1]);
            eta[t - 1] = repl;
        }
    }
    Ok(EtaSolution { eta, rank, sigma_min, scale_ambiguous: rank < active.len(), active_types: active })
}

/// Kernel norms `v_q = 1 / sqrt(eta_q)`; zero for nonpositive `eta_q`.
pub fn norms_from_eta(eta: &DVector<f64>) -> DVector<f64> {
    eta.map(|e| if e > 0.0 { 1.0 / e.sqrt() } else { 0.0 })
}

/// `c_q = v_q center_q` and `a_ij = z_ij / v_{kappa_ij}`, zero on `I0`.
pub fn recover_params(z: &Embedding, cluster: &ClusterResult, v: &DVector<f64>) -> Result<(GraphMatrix, DMatrix<f64>)> {
    let n = z.n();
    if cluster.n != n || v.len() != cluster.q_hat {
        return Err(dim("cluster result does not match the embedding"));
    }
    let mut c_hat = cluster.centers.clone();
    for q in 0..cluster.q_hat {
        let nc = c_hat.column(q).norm();
        let scale = if nc > 0.0 { v[q] / nc } else { 0.0 };
        c_hat.column_mut(q).scale_mut(scale);
    }
    let mut a_hat = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let p = pair_index(i, j, n);
            let l = cluster.labels[p];
            if l > 0 && v[l - 1] > 0.0 {
                a_hat[(i, j)] = cluster.norms[p] / v[l - 1];
            }
        }
    }
    Ok((a_hat, c_hat))
}

#[derive(Debug, Clone)]
pub struct FactorizationReport {
    pub eta: DVector<f64>,
    pub v: DVector<f64>,
    pub c_hat: DMatrix<f64>,
    pub a_hat: GraphMatrix,
    pub design: DMatrix<f64>,
    pub rank_a: usize,
    pub sigma_min_a: f64,
    pub active_types: Vec<usize>,
    pub scale_ambiguous: bool,
}

pub fn factorize(z: &Embedding, cluster: &ClusterResult, sv_floor: f64) -> Result<FactorizationReport> {
    let design = build_design(&cluster.norms, &cluster.assignment())?;
    let sol = solve_eta(&design, sv_floor)?;
    let v = norms_from_eta(&sol.eta);
    let (a_hat, c_hat) = recover_params(z, cluster, &v)?;
    Ok(FactorizationReport {
        eta: sol.eta,
        v,
        c_hat,
        a_hat,
        design,
        rank_a: sol.rank,
        sigma_min_a: sol.sigma_min,
        active_types: sol.active_types,
        scale_ambiguous: sol.scale_ambiguous,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::{cluster_known_q, ClusterConfig};
    use crate::model::{random_system, Dims, TypeMatrix};
    use approx::assert_relative_eq;

    #[test]
    fn single_type_design_is_constant() {
        let n = 4;
        let a = crate::model::complete_graph(n, crate::model::GraphConvention::Euclidean).unwrap();
        let kappa = TypeMatrix::from_rows(&vec![vec![1; n]; n]).unwrap();
        let c = DMatrix::from_column_slice(3, 1, &[1.0, 2.0, 2.0]);
        let z = crate::model::build_embedding(&a, &kappa, &c).unwrap();
        let k = crate::model::type_to_assignment(&kappa, 1).unwrap();
        let design = build_design(&z.row_norms(), &k).unwrap();
        for i in 0..n {
            assert_relative_eq!(design[(i, 0)], 9.0, epsilon = 1e-12);
        }
        let sol = solve_eta(&design, SV_FLOOR).unwrap();
        assert_relative_eq!(norms_from_eta(&sol.eta)[0], 3.0, epsilon = 1e-12);
        assert!(!sol.scale_ambiguous);
    }

    /// Three agents whose rows carry the two types in the same proportion.
    #[test]
    fn proportional_type_masses_are_ambiguous() {
        let s1 = (1.0f64 / 3.0).sqrt();
        let s2 = (2.0f64 / 3.0).sqrt();
        let a = DMatrix::from_row_slice(3, 3, &[0.0, s1, s2, s1, 0.0, s2, s1, s2, 0.0]);
        let kappa = TypeMatrix::from_rows(&[vec![0, 1, 2], vec![1, 0, 2], vec![1, 2, 0]]).unwrap();
        let c = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 2.0]);
        let z = crate::model::build_embedding(&a, &kappa, &c).unwrap();
        let k = crate::model::type_to_assignment(&kappa, 2).unwrap();
        let design = build_design(&z.row_norms(), &k).unwrap();
        let sol = solve_eta(&design, SV_FLOOR).unwrap();
        assert_eq!(sol.rank, 1);
        assert!(sol.scale_ambiguous);
    }

    #[test]
    fn exact_inputs_recover_graph_and_kernels() {
        let dims = Dims::new(8, 2, 3, 5).unwrap();
        let truth = random_system(dims, 0.2, 21).unwrap();
        let z = truth.embedding();
        let sep = crate::model::separability_params(&truth).unwrap();
        let cfg = ClusterConfig::default().with_oracle(sep.z_min, sep.theta_min);
        let cl = cluster_known_q(&z, &cfg, 3).unwrap();
        let rep = factorize(&z, &cl, SV_FLOOR).unwrap();
        assert_eq!(rep.rank_a, 3);
        assert_relative_eq!(rep.a_hat, truth.a, epsilon = 1e-10);
        // Map estimated labels back to true ones through any member pair.
        for (q, members) in cl.clusters().iter().enumerate() {
            let (i, j) = members[0];
            let t = truth.kappa.get(i, j);
            assert_relative_eq!(rep.c_hat.column(q), truth.c.column(t - 1), epsilon = 1e-10);
        }
    }

    #[test]
    fn scaling_kernels_scales_norms_only() {
        let dims = Dims::new(6, 2, 2, 4).unwrap();
        let truth = random_system(dims, 0.3, 5).unwrap();
        let mut scaled = truth.clone();
        scaled.c *= 2.5;
        let run = |p: &crate::model::SystemParams| {
            let z = p.embedding();
            let sep = crate::model::separability_params(p).unwrap();
            let cfg = ClusterConfig::default().with_oracle(sep.z_min, sep.theta_min);
            let cl = cluster_known_q(&z, &cfg, 2).unwrap();
            factorize(&z, &cl, SV_FLOOR).unwrap()
        };
        let (r1, r2) = (run(&truth), run(&scaled));
        assert_relative_eq!(r2.v, r1.v * 2.5, epsilon = 1e-10);
        assert_relative_eq!(r2.a_hat, r1.a_hat, epsilon = 1e-10);
    }
}
