//! Stage 3b: alternating least squares over `(a, c)` with the type
//! assignment frozen.
//!
//! The a-step solves each row on the support of the assignment, clamps
//! negative weights to zero and rescales to unit Euclidean norm.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{dim, invalid, Result};
use crate::linalg::spd_solve;
use crate::model::{AssignmentMatrix, Embedding, GraphMatrix};
use crate::sensing::{loss_z, solve_c, SensingTensorBatch, SufficientStats};

#[derive(Debug, Clone, Copy)]
pub struct RefineOptions {
    pub eps: f64,
    pub max_iter: usize,
}

impl Default for RefineOptions {
    fn default() -> Self {
        RefineOptions { eps: 1e-8, max_iter: 100 }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RefineStep {
    pub iteration: usize,
    /// Loss after the a-step, before clamping and normalization.
    pub pre_projection_loss: f64,
    pub projected_loss: f64,
}

#[derive(Debug, Clone)]
pub struct RefineReport {
    pub a_hat: GraphMatrix,
    pub c_hat: DMatrix<f64>,
    pub iterations: usize,
    pub final_loss: f64,
    pub converged: bool,
    pub history: Vec<RefineStep>,
    /// Rows reset to uniform weights after clamping emptied them.
    pub reset_rows: usize,
}

/// `Z` with row `(i, j)` equal to `a_ij c_{k_ij}`, zero where the label is 0.
pub fn embedding_from_assignment(a: &GraphMatrix, k: &AssignmentMatrix, c: &DMatrix<f64>) -> Result<Embedding> {
    let n = k.n();
    if a.nrows() != n || a.ncols() != n || c.ncols() != k.n_types() {
        return Err(dim("graph, assignment and coefficients disagree"));
    }
    let mut z = DMatrix::zeros(n * (n - 1), c.nrows());
    for (p, &l) in k.labels().iter().enumerate() {
        if l > 0 {
            let (i, j) = crate::model::pair_from_index(p, n);
            z.row_mut(p).copy_from(&(c.column(l - 1).transpose() * a[(i, j)]));
        }
    }
    Embedding::new(n, z)
}

fn u_matrix(a: &GraphMatrix, k: &AssignmentMatrix) -> DMatrix<f64> {
    let n = k.n();
    let mut u = DMatrix::zeros(n * (n - 1), k.n_types());
    for (p, &l) in k.labels().iter().enumerate() {
        if l > 0 {
            let (i, j) = crate::model::pair_from_index(p, n);
            u[(p, l - 1)] = a[(i, j)];
        }
    }
    u
}

/// Row positions `0..N-1` of agent `i` with a nonzero label, and the labels.
fn support(k: &AssignmentMatrix, i: usize) -> Vec<(usize, usize)> {
    let m = k.n() - 1;
    (0..m)
        .filter_map(|r| {
            let l = k.labels()[i * m + r];
            (l > 0).then_some((r, l))
        })
        .collect()
}

fn col_of(r: usize, i: usize) -> usize {
    if r < i {
        r
    } else {
        r + 1
    }
}

/// Unconstrained least-squares weights of agent `i` on its support.
fn solve_row(stats: &SufficientStats, i: usize, sup: &[(usize, usize)], c: &DMatrix<f64>) -> DVector<f64> {
    let k = stats.k;
    let g = &stats.g[i];
    let h = &stats.h[i];
    let s = sup.len();
    let mut gram = DMatrix::zeros(s, s);
    let mut rhs = DVector::zeros(s);
    for (x, &(rx, lx)) in sup.iter().enumerate() {
        let cx = c.column(lx - 1);
        rhs[x] = cx.dot(&h.rows(rx * k, k));
        let gc = g.rows(rx * k, k).transpose() * cx;
        for (y, &(ry, ly)) in sup.iter().enumerate().skip(x) {
            let v = gc.rows(ry * k, k).dot(&c.column(ly - 1));
            gram[(x, y)] = v;
            gram[(y, x)] = v;
        }
    }
    spd_solve(&gram, &rhs).x
}

/// Clamps negatives to zero and rescales to unit norm; returns `false` when
/// the row had to be reset to uniform weights.
fn project_row(w: &mut DVector<f64>) -> bool {
    w.iter_mut().for_each(|v| *v = v.max(0.0));
    let nrm = w.norm();
    if nrm > 0.0 && nrm.is_finite() {
        *w /= nrm;
        true
    } else {
        let s = w.len() as f64;
        w.fill(1.0 / s.sqrt());
        false
    }
}

/// A graph row: agent, support entries and weights.
type RowFit = (usize, Vec<(usize, usize)>, DVector<f64>);

fn place_rows(n: usize, rows: &[RowFit]) -> GraphMatrix {
    let mut a = DMatrix::zeros(n, n);
    for (i, sup, w) in rows {
        for (x, &(r, _)) in sup.iter().enumerate() {
            a[(*i, col_of(r, *i))] = w[x];
        }
    }
    a
}

pub fn postprocess_als(
    stb: &SensingTensorBatch,
    k_hat: &AssignmentMatrix,
    a_init: &GraphMatrix,
    opts: &RefineOptions,
) -> Result<RefineReport> {
    let stats = stb.stats();
    postprocess_als_with_stats(stb, &stats, k_hat, a_init, opts)
}

pub fn postprocess_als_with_stats(
    stb: &SensingTensorBatch,
    stats: &SufficientStats,
    k_hat: &AssignmentMatrix,
    a_init: &GraphMatrix,
    opts: &RefineOptions,
) -> Result<RefineReport> {
    let n = k_hat.n();
    if stats.n != n || a_init.nrows() != n || a_init.ncols() != n {
        return Err(dim("assignment, graph and data disagree"));
    }
    if opts.max_iter == 0 {
        return Err(invalid("max_iter must be positive"));
    }
    if k_hat.n_types() == 0 {
        return Err(invalid("assignment has no types"));
    }
    let supports: Vec<Vec<(usize, usize)>> = (0..n).map(|i| support(k_hat, i)).collect();

    // Start from the initial weights restricted to the support.
    let mut reset_rows = 0;
    let mut rows = Vec::with_capacity(n);
    for (i, sup) in supports.iter().enumerate() {
        if sup.is_empty() {
            continue;
        }
        let mut w = DVector::from_iterator(sup.len(), sup.iter().map(|&(r, _)| a_init[(i, col_of(r, i))]));
        if !project_row(&mut w) {
            log::warn!("initial row {i} is empty on its support; using uniform weights");
            reset_rows += 1;
        }
        rows.push((i, sup.clone(), w));
    }
    let mut a = place_rows(n, &rows);
    let mut c: Option<DMatrix<f64>> = None;
    let mut best: Option<(f64, GraphMatrix, DMatrix<f64>, usize)> = None;
    let mut history = Vec::new();
    let mut prev_loss = f64::INFINITY;
    let mut rises = 0;
    let mut converged = false;
    let mut iterations = 0;

    for it in 1..=opts.max_iter {
        iterations = it;
        let (c_new, _) = solve_c(stats, &u_matrix(&a, k_hat));
        let solved: Vec<RowFit> =
            rows.par_iter().map(|(i, sup, _)| (*i, sup.clone(), solve_row(stats, *i, sup, &c_new))).collect();
        let raw = place_rows(n, &solved);
        let pre = loss_z(&embedding_from_assignment(&raw, k_hat, &c_new)?, stb);
        let mut projected = solved;
        for (i, _, w) in projected.iter_mut() {
            if !project_row(w) {
                log::warn!("row {i} vanished after clamping; using uniform weights");
                reset_rows += 1;
            }
        }
        let a_new = place_rows(n, &projected);
        let post = loss_z(&embedding_from_assignment(&a_new, k_hat, &c_new)?, stb);
        history.push(RefineStep { iteration: it, pre_projection_loss: pre, projected_loss: post });

        let da = (&a_new - &a).norm();
        let done = match &c {
            Some(c_old) => da <= opts.eps * a.norm() && (&c_new - c_old).norm() <= opts.eps * c_old.norm(),
            None => false,
        };
        if best.as_ref().is_none_or(|b| post < b.0) {
            best = Some((post, a_new.clone(), c_new.clone(), it));
        }
        rises = if post > prev_loss { rises + 1 } else { 0 };
        prev_loss = post;
        a = a_new;
        rows = projected;
        c = Some(c_new);
        if done {
            converged = true;
            break;
        }
        if rises >= 2 {
            log::warn!("projected loss rose twice in a row; returning the best iterate");
            break;
        }
    }
    let (final_loss, a_hat, c_hat, _) = best.expect("at least one iteration");
    Ok(RefineReport { a_hat, c_hat, iterations, final_loss, converged, history, reset_rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{make_basis, Family};
    use crate::model::{random_system, type_to_assignment, Dims};
    use crate::sensing::build_sensing_tensors;
    use crate::simulate::{simulate_em, SimConfig};
    use approx::assert_relative_eq;

    fn setup(sigma: f64, seed: u64) -> (crate::model::SystemParams, SensingTensorBatch) {
        let dims = Dims::new(6, 2, 2, 5).unwrap();
        let truth = random_system(dims, 0.3, seed).unwrap();
        let bs = make_basis(Family::Fourier, 0.0, 6.0, 5).unwrap();
        let cfg = SimConfig { n_traj: 30, n_steps: 10, sigma, seed, ..Default::default() };
        let batch = simulate_em(&truth, &bs, &cfg).unwrap();
        (truth, build_sensing_tensors(&batch, &bs).unwrap())
    }

    #[test]
    fn exact_inputs_are_stationary() {
        let (truth, stb) = setup(0.0, 3);
        let k = type_to_assignment(&truth.kappa, 2).unwrap();
        // Restrict the assignment to the true support.
        let labels: Vec<usize> = k
            .labels()
            .iter()
            .enumerate()
            .map(|(p, &l)| {
                let (i, j) = crate::model::pair_from_index(p, 6);
                if truth.a[(i, j)] > 0.0 {
                    l
                } else {
                    0
                }
            })
            .collect();
        let k = AssignmentMatrix::from_pair_labels(6, 2, labels).unwrap();
        let rep = postprocess_als(&stb, &k, &truth.a, &RefineOptions::default()).unwrap();
        assert!(rep.converged);
        assert!(rep.iterations <= 3);
        assert_relative_eq!(rep.a_hat, truth.a, epsilon = 1e-8);
        assert_relative_eq!(rep.c_hat, truth.c, epsilon = 1e-8);
    }

    #[test]
    fn support_and_feasibility_hold_from_a_poor_start() {
        let (truth, stb) = setup(0.05, 8);
        let k = type_to_assignment(&truth.kappa, 2).unwrap();
        let init = crate::model::complete_graph(6, crate::model::GraphConvention::Euclidean).unwrap();
        // Remove one row's worth of support to check zeros stay zero.
        let mut labels = k.labels().to_vec();
        labels[0] = 0;
        labels[1] = 0;
        let k = AssignmentMatrix::from_pair_labels(6, 2, labels).unwrap();
        let rep = postprocess_als(&stb, &k, &init, &RefineOptions::default()).unwrap();
        assert_eq!(rep.a_hat[(0, 1)], 0.0);
        assert_eq!(rep.a_hat[(0, 2)], 0.0);
        for i in 0..6 {
            assert_eq!(rep.a_hat[(i, i)], 0.0);
            assert!((rep.a_hat.row(i).norm() - 1.0).abs() < 1e-12);
            assert!(rep.a_hat.row(i).iter().all(|&v| v >= 0.0));
        }
        for w in rep.history.windows(2) {
            assert!(w[1].pre_projection_loss <= w[0].projected_loss * (1.0 + 1e-10) + 1e-15);
        }
    }
}
