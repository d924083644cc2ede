//! Error metrics comparing an estimate with the true system.

use std::fmt::Write as _;

use nalgebra::DMatrix;

use crate::basis::BasisSet;
use crate::error::{dim, Result};
use crate::model::{pair_index, Embedding, GraphMatrix, SystemParams, TypeMatrix};
use crate::simulate::{simulate_embedding, SimConfig};

/// Kernel error reported when the number of estimated types is wrong.
pub const KERNEL_ERR_SENTINEL: f64 = 1e3;

/// Cap on the number of radial samples used for kernel integrals.
pub const MAX_RHO_SAMPLES: usize = 20_000;

/// `max_p |Z*_p - Z_p|` over rows.
pub fn z_err_2inf(z_star: &Embedding, z_hat: &Embedding) -> f64 {
    let d = z_star.matrix() - z_hat.matrix();
    d.row_iter().map(|r| r.norm()).fold(0.0, f64::max)
}

pub fn z_err_fro(z_star: &Embedding, z_hat: &Embedding) -> f64 {
    (z_star.matrix() - z_hat.matrix()).norm()
}

/// `|a* - a|_F / sqrt(N)`.
pub fn graph_err(a_star: &GraphMatrix, a_hat: &GraphMatrix) -> f64 {
    (a_star - a_hat).norm() / (a_star.nrows() as f64).sqrt()
}

/// Relabels types by order of first appearance over `pairs` (pair indices in
/// increasing order), then over the remaining pairs. Label 0 is kept.
///
/// Returns the map `old label -> new label`.
pub fn first_occurrence_map(labels: &[usize], pairs: &[usize]) -> Vec<usize> {
    let max = labels.iter().copied().max().unwrap_or(0);
    let mut map = vec![0; max + 1];
    let mut next = 1;
    for p in pairs.iter().copied().chain(0..labels.len()) {
        let l = labels[p];
        if l > 0 && map[l] == 0 {
            map[l] = next;
            next += 1;
        }
    }
    map
}

/// Pair indices with a nonzero true weight.
pub fn active_pairs(a_star: &GraphMatrix) -> Vec<usize> {
    let n = a_star.nrows();
    let mut out = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i != j && a_star[(i, j)] != 0.0 {
                out.push(pair_index(i, j, n));
            }
        }
    }
    out.sort_unstable();
    out
}

/// Fraction of active pairs whose relabeled types differ, over `N(N-1)`.
pub fn type_err(a_star: &GraphMatrix, kappa_star: &TypeMatrix, kappa_hat: &TypeMatrix) -> f64 {
    let n = a_star.nrows();
    let act = active_pairs(a_star);
    let ls = kappa_star.pair_labels();
    let lh = kappa_hat.pair_labels();
    let ms = first_occurrence_map(&ls, &act);
    let mh = first_occurrence_map(&lh, &act);
    let wrong = act.iter().filter(|&&p| ms[ls[p]] != mh[lh[p]]).count();
    wrong as f64 / (n * (n - 1)) as f64
}

/// Same count after the best label permutation; diagnostic only.
pub fn type_err_best_permutation(a_star: &GraphMatrix, kappa_star: &TypeMatrix, kappa_hat: &TypeMatrix) -> f64 {
    let n = a_star.nrows();
    let act = active_pairs(a_star);
    let ls = kappa_star.pair_labels();
    let lh = kappa_hat.pair_labels();
    let q = ls.iter().chain(lh.iter()).copied().max().unwrap_or(0);
    let mut conf = DMatrix::<usize>::zeros(q + 1, q + 1);
    for &p in &act {
        conf[(ls[p], lh[p])] += 1;
    }
    // Greedy matching on the confusion matrix is exact for small Q only in
    // easy cases; exhaust permutations up to Q = 8.
    let mut perm: Vec<usize> = (1..=q).collect();
    let mut best = 0usize;
    if q <= 8 {
        permute(&mut perm, 0, &mut |p| {
            let hit: usize = p.iter().enumerate().map(|(t, &h)| conf[(t + 1, h)]).sum();
            best = best.max(hit);
        });
    } else {
        best = (1..=q).map(|t| conf[(t, t)]).sum();
    }
    (act.len() - best) as f64 / (n * (n - 1)) as f64
}

fn permute(v: &mut Vec<usize>, k: usize, f: &mut impl FnMut(&[usize])) {
    if k == v.len() {
        f(v);
        return;
    }
    for i in k..v.len() {
        v.swap(k, i);
        permute(v, k + 1, f);
        v.swap(k, i);
    }
}

/// Deterministic strided subsample of radial samples.
pub fn subsample(samples: &[f64], cap: usize) -> Vec<f64> {
    if samples.len() <= cap {
        return samples.to_vec();
    }
    let step = samples.len() as f64 / cap as f64;
    (0..cap).map(|t| samples[(t as f64 * step) as usize]).collect()
}

/// Relative `L2(rho)` error of one kernel; with `fit_scale` the estimate is
/// first multiplied by its least-squares scalar.
pub fn kernel_rel_err(
    c_star: &[f64],
    basis_star: &BasisSet,
    c_hat: &[f64],
    basis_hat: &BasisSet,
    rho: &[f64],
    fit_scale: bool,
) -> f64 {
    let fs: Vec<f64> = rho.iter().map(|&r| basis_star.combine(c_star, r)).collect();
    let fh: Vec<f64> = rho.iter().map(|&r| basis_hat.combine(c_hat, r)).collect();
    let s = if fit_scale {
        let hh: f64 = fh.iter().map(|v| v * v).sum();
        if hh > 0.0 {
            fs.iter().zip(&fh).map(|(a, b)| a * b).sum::<f64>() / hh
        } else {
            1.0
        }
    } else {
        1.0
    };
    let num: f64 = fs.iter().zip(&fh).map(|(a, b)| (a - s * b).powi(2)).sum();
    let den: f64 = fs.iter().map(|v| v * v).sum();
    if den > 0.0 {
        (num / den).sqrt()
    } else {
        num.sqrt()
    }
}

/// One estimate, in whatever basis it was fitted.
#[derive(Debug, Clone, Copy)]
pub struct Estimate<'a> {
    pub z_hat: &'a Embedding,
    pub kappa_hat: &'a TypeMatrix,
    pub a_hat: &'a GraphMatrix,
    /// `K x Q_hat` coefficients in `basis`.
    pub c_hat: &'a DMatrix<f64>,
    pub basis: &'a BasisSet,
    pub scale_ambiguous: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorReport {
    pub z_err_2inf: f64,
    pub z_err_fro: f64,
    pub type_err: f64,
    pub graph_err: f64,
    /// Indexed by true type (1-based types at position `q - 1`); inactive
    /// types are NaN.
    pub kernel_errs: Vec<f64>,
    pub kernel_err_mean: f64,
    pub traj_err: f64,
    pub q_hat_matches: bool,
    pub scale_ambiguous_mode: bool,
}

impl ErrorReport {
    /// All-NaN report for runs that failed before producing an estimate.
    pub fn failed(n_types: usize) -> Self {
        ErrorReport {
            z_err_2inf: f64::NAN,
            z_err_fro: f64::NAN,
            type_err: f64::NAN,
            graph_err: f64::NAN,
            kernel_errs: vec![f64::NAN; n_types],
            kernel_err_mean: f64::NAN,
            traj_err: f64::NAN,
            q_hat_matches: false,
            scale_ambiguous_mode: false,
        }
    }

    pub const CSV_HEADER: &'static str =
        "z_err_2inf,z_err_fro,type_err,graph_err,kernel_err_mean,traj_err,q_hat_matches,scale_ambiguous,kernel_errs";

    /// Values in the order of [`Self::CSV_HEADER`]; kernel errors joined by `;`.
    pub fn csv_row(&self) -> String {
        let mut s = String::new();
        for v in [self.z_err_2inf, self.z_err_fro, self.type_err, self.graph_err, self.kernel_err_mean, self.traj_err] {
            write!(s, "{},", fmt_f(v)).unwrap();
        }
        write!(s, "{},{},", self.q_hat_matches as u8, self.scale_ambiguous_mode as u8).unwrap();
        let ks: Vec<String> = self.kernel_errs.iter().map(|&v| fmt_f(v)).collect();
        s.push_str(&ks.join(";"));
        s
    }
}

pub(crate) fn fmt_f(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else {
        format!("{v:.10e}")
    }
}

/// All static metrics; `traj_err` is left NaN.
pub fn estimation_errors(
    truth: &SystemParams,
    basis_star: &BasisSet,
    z_star: &Embedding,
    est: &Estimate<'_>,
    rho: &[f64],
) -> Result<ErrorReport> {
    let n = truth.dims.n_agents;
    if z_star.n() != n || est.z_hat.n() != n || z_star.k() != est.z_hat.k() || est.kappa_hat.n() != n {
        return Err(dim("estimate and truth have different sizes"));
    }
    let act_types = truth.active_types();
    let q_hat = est.c_hat.ncols();
    let q_hat_matches = q_hat == act_types.len();
    let mut kernel_errs = vec![f64::NAN; truth.c.ncols()];
    if q_hat_matches {
        let act = active_pairs(&truth.a);
        let ls = truth.kappa.pair_labels();
        let lh = est.kappa_hat.pair_labels();
        let ms = first_occurrence_map(&ls, &act);
        let mh = first_occurrence_map(&lh, &act);
        let rho = subsample(rho, MAX_RHO_SAMPLES);
        for &q in &act_types {
            let target = ms[q];
            let est_q = (1..mh.len()).find(|&h| mh[h] == target && h <= q_hat);
            kernel_errs[q - 1] = match est_q {
                Some(h) => kernel_rel_err(
                    truth.c.column(q - 1).as_slice(),
                    basis_star,
                    est.c_hat.column(h - 1).as_slice(),
                    est.basis,
                    &rho,
                    est.scale_ambiguous,
                ),
                None => KERNEL_ERR_SENTINEL,
            };
        }
    } else {
        for &q in &act_types {
            kernel_errs[q - 1] = KERNEL_ERR_SENTINEL;
        }
    }
    let finite: Vec<f64> = kernel_errs.iter().copied().filter(|v| !v.is_nan()).collect();
    let kernel_err_mean = if finite.is_empty() { f64::NAN } else { finite.iter().sum::<f64>() / finite.len() as f64 };
    Ok(ErrorReport {
        z_err_2inf: z_err_2inf(z_star, est.z_hat),
        z_err_fro: z_err_fro(z_star, est.z_hat),
        type_err: type_err(&truth.a, &truth.kappa, est.kappa_hat),
        graph_err: graph_err(&truth.a, est.a_hat),
        kernel_errs,
        kernel_err_mean,
        traj_err: f64::NAN,
        q_hat_matches,
        scale_ambiguous_mode: est.scale_ambiguous,
    })
}

/// Mean over trajectories and steps `l = 1..=L` of `|X_l - X_hat_l|`, both
/// systems driven by their embeddings with shared noise and initial states.
pub fn trajectory_error(
    z_star: &Embedding,
    basis_star: &BasisSet,
    z_hat: &Embedding,
    basis_hat: &BasisSet,
    d: usize,
    cfg: &SimConfig,
) -> Result<f64> {
    let clean = SimConfig { sigma_obs: 0.0, ..cfg.clone() };
    let x = simulate_embedding(z_star, basis_star, d, &clean)?;
    let xh = simulate_embedding(z_hat, basis_hat, d, &clean)?;
    let (m, l1, _, _) = x.states.dim();
    let mut total = 0.0;
    for mm in 0..m {
        for l in 1..l1 {
            let a = x.states.slice(ndarray::s![mm, l, .., ..]);
            let b = xh.states.slice(ndarray::s![mm, l, .., ..]);
            total += a.iter().zip(b.iter()).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
        }
    }
    Ok(total / (m * (l1 - 1)) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{make_basis, Family};
    use crate::model::{random_system, Dims};
    use approx::assert_relative_eq;

    #[test]
    fn first_occurrence_orders_labels() {
        let map = first_occurrence_map(&[3, 3, 1, 0, 2], &[0, 1, 2, 3, 4]);
        assert_eq!(map, vec![0, 2, 3, 1]);
        let map = first_occurrence_map(&[2, 1, 2], &[1, 2]);
        assert_eq!(map[1], 1);
        assert_eq!(map[2], 2);
    }

    #[test]
    fn one_misassigned_pair_in_ten_agents() {
        let dims = Dims::new(10, 2, 2, 4).unwrap();
        let truth = random_system(dims, 0.3, 4).unwrap();
        let act = active_pairs(&truth.a);
        let mut labels = truth.kappa.pair_labels();
        // Flip the last active pair so first occurrences are unchanged.
        let p = *act.last().unwrap();
        labels[p] = 3 - labels[p];
        let kh = TypeMatrix::from_pair_labels(10, &labels);
        let e = type_err(&truth.a, &truth.kappa, &kh);
        // Flipping may change first occurrence only if the type appears once.
        let single = act.iter().filter(|&&x| truth.kappa.pair_labels()[x] == truth.kappa.pair_labels()[p]).count() == 1;
        if !single {
            assert_relative_eq!(e, 1.0 / 90.0);
        }
    }

    #[test]
    fn relabeling_is_invariant() {
        let dims = Dims::new(7, 2, 3, 4).unwrap();
        let truth = random_system(dims, 0.3, 9).unwrap();
        let perm = [0, 2, 3, 1];
        let labels: Vec<usize> = truth.kappa.pair_labels().iter().map(|&l| perm[l]).collect();
        let kh = TypeMatrix::from_pair_labels(7, &labels);
        assert_eq!(type_err(&truth.a, &truth.kappa, &kh), 0.0);
        assert_eq!(type_err_best_permutation(&truth.a, &truth.kappa, &kh), 0.0);
    }

    #[test]
    fn truth_has_zero_errors() {
        let dims = Dims::new(6, 2, 2, 5).unwrap();
        let truth = random_system(dims, 0.3, 2).unwrap();
        let bs = make_basis(Family::Fourier, 0.0, 6.0, 5).unwrap();
        let z = truth.embedding();
        let est = Estimate {
            z_hat: &z,
            kappa_hat: &truth.kappa,
            a_hat: &truth.a,
            c_hat: &truth.c,
            basis: &bs,
            scale_ambiguous: false,
        };
        let rho: Vec<f64> = (0..200).map(|t| t as f64 * 0.03).collect();
        let rep = estimation_errors(&truth, &bs, &z, &est, &rho).unwrap();
        assert_eq!(rep.z_err_2inf, 0.0);
        assert_eq!(rep.type_err, 0.0);
        assert_eq!(rep.graph_err, 0.0);
        assert!(rep.kernel_errs.iter().all(|&e| e == 0.0));
        let cfg = SimConfig { n_traj: 3, n_steps: 5, sigma: 0.1, ..Default::default() };
        assert_eq!(trajectory_error(&z, &bs, &z, &bs, 2, &cfg).unwrap(), 0.0);
    }

    #[test]
    fn wrong_type_count_uses_sentinel() {
        let dims = Dims::new(6, 2, 2, 5).unwrap();
        let truth = random_system(dims, 0.3, 2).unwrap();
        let bs = make_basis(Family::Fourier, 0.0, 6.0, 5).unwrap();
        let z = truth.embedding();
        let c1 = truth.c.columns(0, 1).into_owned();
        let ones = TypeMatrix::from_pair_labels(6, &vec![1; 30]);
        let est =
            Estimate { z_hat: &z, kappa_hat: &ones, a_hat: &truth.a, c_hat: &c1, basis: &bs, scale_ambiguous: false };
        let rep = estimation_errors(&truth, &bs, &z, &est, &[1.0, 2.0]).unwrap();
        assert!(!rep.q_hat_matches);
        assert_eq!(rep.kernel_err_mean, KERNEL_ERR_SENTINEL);
    }

    #[test]
    fn scale_fit_removes_constant_factor() {
        let bs = make_basis(Family::Fourier, 0.0, 6.0, 5).unwrap();
        let c = [0.3, -1.0, 0.5, 0.2, 0.1];
        let c2: Vec<f64> = c.iter().map(|v| v * 1.7).collect();
        let rho: Vec<f64> = (0..100).map(|t| t as f64 * 0.05).collect();
        assert!(kernel_rel_err(&c, &bs, &c2, &bs, &rho, false) > 0.5);
        assert!(kernel_rel_err(&c, &bs, &c2, &bs, &rho, true) < 1e-12);
    }

    #[test]
    fn zero_estimate_matches_direct_simulation() {
        let dims = Dims::new(4, 2, 2, 5).unwrap();
        let truth = random_system(dims, 0.5, 6).unwrap();
        let bs = make_basis(Family::Fourier, 0.0, 6.0, 5).unwrap();
        let z = truth.embedding();
        let zero = Embedding::zeros(4, 5);
        let cfg = SimConfig { n_traj: 2, n_steps: 4, sigma: 0.0, ..Default::default() };
        let x = simulate_embedding(&z, &bs, 2, &cfg).unwrap();
        let x0 = x.states.slice(ndarray::s![.., 0, .., ..]);
        let mut want = 0.0;
        for m in 0..2 {
            for l in 1..=4 {
                let d = &x.states.slice(ndarray::s![m, l, .., ..]) - &x0.slice(ndarray::s![m, .., ..]);
                want += d.iter().map(|v| v * v).sum::<f64>().sqrt();
            }
        }
        let got = trajectory_error(&z, &bs, &zero, &bs, 2, &cfg).unwrap();
        assert_relative_eq!(got, want / 8.0, max_relative = 1e-12);
    }

    #[test]
    fn csv_row_has_header_arity() {
        let r = ErrorReport::failed(3);
        assert_eq!(r.csv_row().split(',').count(), ErrorReport::CSV_HEADER.split(',').count());
    }
}
