//! Stage 2: recovering the type matrix from the rows of an estimated
//! embedding.
//!
//! Rows with small norm are declared absent edges; the rest are normalized
//! and grouped by spherical k-means. Clusters are labeled by the first
//! occurrence of a member in lexicographic pair order, so the output does
//! not depend on k-means' internal labels.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::linalg;
use crate::model::{pair_from_index, AssignmentMatrix, Embedding, TypeMatrix};
use crate::rng;

/// Above this many clustered rows the intra-cluster angle is bounded by
/// twice the largest angle to the center instead of computed pairwise.
pub const EXACT_THETA_LIMIT: usize = 50_000;

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterConfig {
    /// Support threshold on row norms; `None` selects one by the median-gap rule.
    pub z0: Option<f64>,
    /// Multiplier applied to `z0`.
    pub delta: f64,
    /// Minimum admissible angle between cluster centers.
    pub theta0: f64,
    /// Maximum admissible angle inside a cluster.
    pub big_theta0: f64,
    pub q0: usize,
    pub n_max: usize,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig { z0: None, delta: 1.0, theta0: 0.4, big_theta0: 0.2, q0: 2, n_max: 20, restarts: 10, seed: 0 }
    }
}

impl ClusterConfig {
    /// Thresholds from oracle constants: `z0 = z_min / 2`,
    /// `Theta0 = theta_min / 3`, `theta0 = 2 theta_min / 3`.
    pub fn with_oracle(mut self, z_min: f64, theta_min: f64) -> Self {
        self.z0 = Some(z_min / 2.0);
        self.big_theta0 = theta_min / 3.0;
        self.theta0 = 2.0 * theta_min / 3.0;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.theta0 > 0.0 && self.theta0 <= PI) {
            return Err(invalid("theta0 must lie in (0, pi]"));
        }
        if !(self.big_theta0 >= 0.0 && self.big_theta0 < PI) {
            return Err(invalid("Theta0 must lie in [0, pi)"));
        }
        if self.q0 == 0 {
            return Err(invalid("initial cluster count must be positive"));
        }
        if let Some(z0) = self.z0 {
            if !(z0 >= 0.0) {
                return Err(invalid("z0 must be nonnegative"));
            }
        }
        Ok(())
    }
}

/// Row norms and the normalized rows on the estimated support.
#[derive(Debug, Clone)]
pub struct RowNormalization {
    /// Norm of every row in pair order.
    pub norms: Vec<f64>,
    /// Pair indices kept for clustering, ascending.
    pub support: Vec<usize>,
    /// Pair indices declared absent.
    pub i0: Vec<usize>,
    /// Unit rows for `support`, one per matrix row.
    pub unit: DMatrix<f64>,
    pub threshold: f64,
}

pub fn normalize_rows(z: &Embedding, z0: f64) -> Result<RowNormalization> {
    if !(z0 >= 0.0) {
        return Err(invalid("threshold must be nonnegative"));
    }
    let norms = z.row_norms();
    let (support, i0): (Vec<usize>, Vec<usize>) = (0..norms.len()).partition(|&p| norms[p] >= z0 && norms[p] > 0.0);
    if support.is_empty() {
        return Err(Error::EmptySupport);
    }
    let zm = z.matrix();
    let unit = DMatrix::from_fn(support.len(), z.k(), |r, k| zm[(support[r], k)] / norms[support[r]]);
    Ok(RowNormalization { norms, support, i0, unit, threshold: z0 })
}

/// Threshold at the largest relative gap among the sorted row norms below
/// the median. Gaps narrower than a factor of 10 are not trusted; the
/// threshold then sits at half the smallest norm so every row is kept.
pub fn median_gap_threshold(norms: &[f64]) -> f64 {
    let mut v: Vec<f64> = norms.iter().cloned().filter(|x| x.is_finite()).collect();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    if v.is_empty() {
        return 0.0;
    }
    let mid = v.len() / 2;
    let mut best = (1.0, 0usize);
    for t in 0..mid {
        let (lo, hi) = (v[t].max(f64::MIN_POSITIVE), v[t + 1]);
        let ratio = hi / lo;
        if ratio > best.0 {
            best = (ratio, t);
        }
    }
    if best.0 > 10.0 {
        let t = best.1;
        (v[t].max(f64::MIN_POSITIVE) * v[t + 1]).sqrt()
    } else {
        v[0] / 2.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    /// `1 - <x, y> / (|x| |y|)`, centers are normalized means.
    Cosine,
    /// Squared Euclidean distance, centers are means.
    Euclidean,
}

#[derive(Debug, Clone)]
pub struct KMeansResult {
    /// 0-based cluster of each row.
    pub labels: Vec<usize>,
    /// One center per row of this matrix.
    pub centers: DMatrix<f64>,
    pub objective: f64,
}

fn distance(metric: Metric, x: &[f64], c: &[f64]) -> f64 {
    match metric {
        Metric::Cosine => 1.0 - linalg::dot(x, c) / (linalg::norm(x) * linalg::norm(c)).max(f64::MIN_POSITIVE),
        Metric::Euclidean => x.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum(),
    }
}

fn row(m: &DMatrix<f64>, r: usize) -> Vec<f64> {
    m.row(r).iter().cloned().collect()
}

/// Lloyd iterations with k-means++ seeding; best of `restarts` by objective,
/// ties to the lowest restart index.
pub fn kmeans(rows: &DMatrix<f64>, q: usize, restarts: usize, seed: u64, metric: Metric) -> Result<KMeansResult> {
    let n = rows.nrows();
    if q == 0 || q > n {
        return Err(invalid(format!("cannot form {q} clusters from {n} rows")));
    }
    let points: Vec<Vec<f64>> = (0..n).map(|r| row(rows, r)).collect();
    let runs: Vec<KMeansResult> =
        (0..restarts.max(1)).into_par_iter().map(|r| lloyd(&points, q, seed, r as u64, metric)).collect();
    let mut best = 0;
    for (i, r) in runs.iter().enumerate() {
        if r.objective < runs[best].objective {
            best = i;
        }
    }
    Ok(runs.into_iter().nth(best).expect("nonempty"))
}

pub fn spherical_kmeans(rows: &DMatrix<f64>, q: usize, restarts: usize, seed: u64) -> Result<KMeansResult> {
    kmeans(rows, q, restarts, seed, Metric::Cosine)
}

fn lloyd(points: &[Vec<f64>], q: usize, seed: u64, restart: u64, metric: Metric) -> KMeansResult {
    let n = points.len();
    let k = points[0].len();
    let mut g = rng::stream(seed, restart);
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(q);
    let mut chosen = vec![false; n];
    let first = g.random_range(0..n);
    centers.push(points[first].clone());
    chosen[first] = true;
    let mut dmin: Vec<f64> = points.iter().map(|p| distance(metric, p, &centers[0]).max(0.0)).collect();
    while centers.len() < q {
        let total: f64 = dmin.iter().sum();
        let pick = if total > 0.0 {
            let mut t = g.random_range(0.0..total);
            let mut idx = n - 1;
            for (i, &d) in dmin.iter().enumerate() {
                if t < d {
                    idx = i;
                    break;
                }
                t -= d;
            }
            idx
        } else {
            let free: Vec<usize> = (0..n).filter(|&i| !chosen[i]).collect();
            free[g.random_range(0..free.len())]
        };
        chosen[pick] = true;
        centers.push(points[pick].clone());
        for (i, p) in points.iter().enumerate() {
            dmin[i] = dmin[i].min(distance(metric, p, centers.last().unwrap()).max(0.0));
        }
    }

    let mut labels = vec![usize::MAX; n];
    let mut dist = vec![0.0; n];
    for _ in 0..300 {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let mut best = (f64::INFINITY, 0);
            for (c, ctr) in centers.iter().enumerate() {
                let d = distance(metric, p, ctr);
                if d < best.0 {
                    best = (d, c);
                }
            }
            if labels[i] != best.1 {
                labels[i] = best.1;
                changed = true;
            }
            dist[i] = best.0;
        }
        // Re-seed empty clusters at the point farthest from its center.
        let mut counts = vec![0usize; q];
        labels.iter().for_each(|&l| counts[l] += 1);
        for c in 0..q {
            if counts[c] == 0 {
                let far = (0..n)
                    .filter(|&i| counts[labels[i]] > 1)
                    .max_by(|&a, &b| dist[a].partial_cmp(&dist[b]).unwrap().then(b.cmp(&a)))
                    .expect("more rows than clusters");
                counts[labels[far]] -= 1;
                labels[far] = c;
                counts[c] = 1;
                dist[far] = 0.0;
                changed = true;
            }
        }
        for (c, ctr) in centers.iter_mut().enumerate() {
            let mut mean = vec![0.0; k];
            for (i, p) in points.iter().enumerate() {
                if labels[i] == c {
                    mean.iter_mut().zip(p).for_each(|(m, v)| *m += v);
                }
            }
            let cnt = counts[c] as f64;
            mean.iter_mut().for_each(|m| *m /= cnt);
            if metric == Metric::Cosine {
                let nm = linalg::norm(&mean);
                if nm > 0.0 {
                    mean.iter_mut().for_each(|m| *m /= nm);
                } else {
                    continue;
                }
            }
            *ctr = mean;
        }
        if !changed {
            break;
        }
    }
    let objective = points.iter().zip(&labels).map(|(p, &l)| distance(metric, p, &centers[l])).sum();
    let centers = DMatrix::from_fn(q, k, |r, c| centers[r][c]);
    KMeansResult { labels, centers, objective }
}

/// `theta`: smallest angle between centers (`pi` for one cluster).
/// `Theta`: largest angle between members of one cluster (`0` for
/// singletons); the flag reports whether it was computed exactly.
pub fn angles(centers: &DMatrix<f64>, rows: &DMatrix<f64>, labels: &[usize]) -> (f64, f64, bool) {
    let q = centers.nrows();
    let mut theta = PI;
    for a in 0..q {
        for b in a + 1..q {
            theta = theta.min(linalg::angle(&row(centers, a), &row(centers, b)));
        }
    }
    let exact = rows.nrows() <= EXACT_THETA_LIMIT;
    let mut big = 0.0f64;
    let unit: Vec<Vec<f64>> = (0..rows.nrows())
        .map(|r| {
            let v = row(rows, r);
            let nv = linalg::norm(&v);
            v.into_iter().map(|x| x / nv).collect()
        })
        .collect();
    for c in 0..q {
        let members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        if exact {
            for (x, &a) in members.iter().enumerate() {
                for &b in &members[x + 1..] {
                    let cos = linalg::dot(&unit[a], &unit[b]).clamp(-1.0, 1.0);
                    big = big.max(cos.acos());
                }
            }
        } else {
            let ctr = row(centers, c);
            for &a in &members {
                big = big.max(2.0 * linalg::angle(&unit[a], &ctr));
            }
        }
    }
    (theta, big.min(PI), exact)
}

/// Output of stage 2.
#[derive(Debug, Clone)]
pub struct ClusterResult {
    pub n: usize,
    /// Type of every pair in pair order; 0 marks the absent set `I0`.
    pub labels: Vec<usize>,
    /// `K x Q_hat`, column `q - 1` is the center of type `q`.
    pub centers: DMatrix<f64>,
    pub q_hat: usize,
    /// Row norms of the input embedding.
    pub norms: Vec<f64>,
    pub theta: f64,
    pub big_theta: f64,
    pub theta_exact: bool,
    pub success: bool,
    pub threshold: f64,
}

impl ClusterResult {
    pub fn i0(&self) -> Vec<(usize, usize)> {
        (0..self.labels.len()).filter(|&p| self.labels[p] == 0).map(|p| pair_from_index(p, self.n)).collect()
    }

    /// Member pairs of each type, in label order.
    pub fn clusters(&self) -> Vec<Vec<(usize, usize)>> {
        let mut out = vec![Vec::new(); self.q_hat];
        for (p, &l) in self.labels.iter().enumerate() {
            if l > 0 {
                out[l - 1].push(pair_from_index(p, self.n));
            }
        }
        out
    }

    pub fn kappa_hat(&self) -> TypeMatrix {
        TypeMatrix::from_pair_labels(self.n, &self.labels)
    }

    pub fn assignment(&self) -> AssignmentMatrix {
        AssignmentMatrix::from_pair_labels(self.n, self.q_hat, self.labels.clone()).expect("labels within range")
    }
}

/// Maps 0-based k-means labels on `support` to first-occurrence order and
/// returns `(pair labels, permuted center rows)`.
fn relabel(n_pairs: usize, support: &[usize], km: &KMeansResult) -> (Vec<usize>, DMatrix<f64>) {
    let q = km.centers.nrows();
    let mut map = vec![usize::MAX; q];
    let mut next = 0;
    for &l in &km.labels {
        if map[l] == usize::MAX {
            map[l] = next;
            next += 1;
        }
    }
    let mut labels = vec![0; n_pairs];
    for (r, &p) in support.iter().enumerate() {
        labels[p] = map[km.labels[r]] + 1;
    }
    let k = km.centers.ncols();
    let mut centers = DMatrix::zeros(k, q);
    for (old, &new) in map.iter().enumerate().take(q) {
        if new != usize::MAX {
            centers.set_column(new, &km.centers.row(old).transpose());
        }
    }
    (labels, centers)
}

fn resolve_threshold(z: &Embedding, cfg: &ClusterConfig) -> f64 {
    cfg.delta * cfg.z0.unwrap_or_else(|| median_gap_threshold(&z.row_norms()))
}

fn kmeans_seed(seed: u64, q: usize) -> u64 {
    rng::derive(seed, &[q as u64])
}

fn assemble(z: &Embedding, rn: &RowNormalization, km: &KMeansResult, success: bool) -> ClusterResult {
    let (labels, centers) = relabel(rn.norms.len(), &rn.support, km);
    let (theta, big_theta, theta_exact) = angles(&km.centers, &rn.unit, &km.labels);
    ClusterResult {
        n: z.n(),
        labels,
        q_hat: centers.ncols(),
        centers,
        norms: rn.norms.clone(),
        theta,
        big_theta,
        theta_exact,
        success,
        threshold: rn.threshold,
    }
}

/// Clustering with a known number of types.
pub fn cluster_known_q(z: &Embedding, cfg: &ClusterConfig, q: usize) -> Result<ClusterResult> {
    cfg.validate()?;
    let rn = normalize_rows(z, resolve_threshold(z, cfg))?;
    let km = spherical_kmeans(&rn.unit, q, cfg.restarts, kmeans_seed(cfg.seed, q))?;
    Ok(assemble(z, &rn, &km, true))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Step {
    Dec,
    Inc,
}

/// Runs the adaptive search: decrease `Q` while centers are too close,
/// increase it while clusters are too wide.
fn adapt<F>(cfg: &ClusterConfig, n_rows: usize, mut run: F) -> Result<(KMeansResult, bool)>
where
    F: FnMut(usize) -> Result<(KMeansResult, f64, f64)>,
{
    let mut q = cfg.q0.clamp(1, n_rows);
    let mut steps: Vec<Step> = Vec::new();
    let mut last = None;
    for _ in 0..=cfg.n_max {
        let (km, theta, big) = run(q)?;
        last = Some(km);
        let step = if theta > cfg.theta0 && big < cfg.big_theta0 {
            return Ok((last.unwrap(), true));
        } else if theta < cfg.theta0 {
            if q == 1 {
                break;
            }
            q -= 1;
            Step::Dec
        } else if big > cfg.big_theta0 {
            if q == n_rows {
                break;
            }
            q += 1;
            Step::Inc
        } else {
            // Boundary case: a threshold is met with equality.
            break;
        };
        steps.push(step);
        let flips = steps.windows(2).filter(|w| w[0] == Step::Dec && w[1] == Step::Inc).count();
        if flips >= 2 {
            log::warn!("cluster count oscillates; stopping the search");
            break;
        }
    }
    Ok((last.expect("at least one run"), false))
}

/// Clustering with an unknown number of types.
pub fn cluster_adaptive(z: &Embedding, cfg: &ClusterConfig) -> Result<ClusterResult> {
    cfg.validate()?;
    let rn = normalize_rows(z, resolve_threshold(z, cfg))?;
    let (km, ok) = adapt(cfg, rn.unit.nrows(), |q| {
        let km = spherical_kmeans(&rn.unit, q, cfg.restarts, kmeans_seed(cfg.seed, q))?;
        let (t, b, _) = angles(&km.centers, &rn.unit, &km.labels);
        Ok((km, t, b))
    })?;
    Ok(assemble(z, &rn, &km, ok))
}

#[derive(Debug, Clone, PartialEq)]
pub enum PositionalMode {
    KnownQ(usize),
    Adaptive(ClusterConfig),
}

/// Euclidean k-means on the raw rows of a complete-network embedding.
///
/// Every pair is clustered; centers are rows of `Z`, so dividing by the
/// known uniform edge weight gives the coefficient matrix, returned second.
pub fn positional_cluster(
    z: &Embedding,
    mode: &PositionalMode,
    weight: f64,
    restarts: usize,
    seed: u64,
) -> Result<(ClusterResult, DMatrix<f64>)> {
    if !(weight > 0.0) {
        return Err(invalid("edge weight must be positive"));
    }
    let rows = z.matrix().clone();
    let all: Vec<usize> = (0..rows.nrows()).collect();
    let run = |q: usize| -> Result<(KMeansResult, f64, f64)> {
        let km = kmeans(&rows, q, restarts, kmeans_seed(seed, q), Metric::Euclidean)?;
        let (t, b, _) = angles(&km.centers, &rows, &km.labels);
        Ok((km, t, b))
    };
    let (km, ok) = match mode {
        PositionalMode::KnownQ(q) => (run(*q)?.0, true),
        PositionalMode::Adaptive(cfg) => {
            cfg.validate()?;
            adapt(cfg, rows.nrows(), run)?
        }
    };
    let (labels, centers) = relabel(rows.nrows(), &all, &km);
    let (theta, big_theta, theta_exact) = angles(&km.centers, &rows, &km.labels);
    let c_hat = &centers / weight;
    let res = ClusterResult {
        n: z.n(),
        labels,
        q_hat: centers.ncols(),
        centers,
        norms: z.row_norms(),
        theta,
        big_theta,
        theta_exact,
        success: ok,
        threshold: 0.0,
    };
    Ok((res, c_hat))
}
