//! End-to-end runs: simulate, estimate, evaluate, and write artifacts.

use std::fmt;
use std::fs;
use std::path::Path;
use web_time::Instant;

use nalgebra::DMatrix;

use crate::basis::{orthonormalize, BasisSet};
use crate::cluster::{
    cluster_adaptive, cluster_known_q, positional_cluster, ClusterConfig, ClusterResult, PositionalMode,
};
use crate::config::{PipelineConfig, QChoice, SystemKind};
use crate::error::{Error, Result};
use crate::factorize::{factorize, FactorizationReport, SV_FLOOR};
use crate::io;
use crate::linalg::pinv_solve;
use crate::metrics::{estimation_errors, subsample, trajectory_error, ErrorReport, Estimate, MAX_RHO_SAMPLES};
use crate::model::{
    build_embedding, complete_graph, separability_params, Embedding, GraphConvention, GraphMatrix, SeparabilityParams,
    SystemParams, TypeMatrix,
};
use crate::presets::build_system;
use crate::refine::{embedding_from_assignment, postprocess_als_with_stats, RefineOptions, RefineReport};
use crate::rng;
use crate::sensing::{als_fit_with_stats, build_sensing_tensors, AlsOptions, AlsReport};
use crate::simulate::{exploration_samples, simulate_em, SimConfig, TrajectoryBatch};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Config,
    System,
    Simulate,
    Basis,
    Sensing,
    Als,
    Cluster,
    Factorize,
    Refine,
    Metrics,
}

impl Stage {
    pub fn tag(self) -> &'static str {
        match self {
            Stage::Config => "config",
            Stage::System => "system",
            Stage::Simulate => "simulate",
            Stage::Basis => "basis",
            Stage::Sensing => "sensing",
            Stage::Als => "als",
            Stage::Cluster => "cluster",
            Stage::Factorize => "factorize",
            Stage::Refine => "refine",
            Stage::Metrics => "metrics",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageFailure {
    pub stage: Stage,
    pub message: String,
}

impl fmt::Display for StageFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] {}", self.stage, self.message)
    }
}

/// The data-generating system, with coefficients in its own basis.
#[derive(Debug, Clone)]
pub struct Truth {
    pub params: SystemParams,
    pub basis: BasisSet,
}

/// What the estimator may know about the truth.
#[derive(Debug, Clone, Copy)]
pub struct Oracle {
    pub separability: SeparabilityParams,
    pub q_act: usize,
}

/// Everything the three stages produced.
#[derive(Debug, Clone)]
pub struct Estimation {
    pub basis: BasisSet,
    pub rho: Vec<f64>,
    pub als: Option<AlsReport>,
    pub cluster: Option<ClusterResult>,
    pub factorization: Option<FactorizationReport>,
    pub refine: Option<RefineReport>,
    /// Known graph and positional coefficients in complete-network mode.
    pub known_graph: Option<GraphMatrix>,
    pub positional_c: Option<DMatrix<f64>>,
    pub failure: Option<StageFailure>,
    pub timings: Vec<(Stage, f64)>,
}

impl Estimation {
    /// Wall time of the estimation stages (tensors through refinement).
    pub fn estimation_seconds(&self) -> f64 {
        self.timings.iter().filter(|(s, _)| !matches!(s, Stage::Basis)).map(|(_, t)| t).sum()
    }

    pub fn z_hat(&self) -> Option<&Embedding> {
        self.als.as_ref().map(|a| &a.z_hat)
    }
}

/// One row of evaluation: the estimate after some stage.
#[derive(Debug, Clone)]
pub struct StageReport {
    pub name: &'static str,
    pub errors: ErrorReport,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub truth: Truth,
    /// True coefficients expressed in the hypothesis basis.
    pub c_star: DMatrix<f64>,
    pub z_star: Embedding,
    pub oracle: Oracle,
    pub estimation: Option<Estimation>,
    pub reports: Vec<StageReport>,
    pub failure: Option<StageFailure>,
    pub notes: Vec<String>,
    /// Wall time including simulation and evaluation.
    pub total_seconds: f64,
}

impl RunResult {
    /// The last stage's errors, or an all-NaN report.
    pub fn final_report(&self) -> ErrorReport {
        self.reports
            .last()
            .map(|r| r.errors.clone())
            .unwrap_or_else(|| ErrorReport::failed(self.truth.params.c.ncols()))
    }

    pub fn report(&self, name: &str) -> Option<&ErrorReport> {
        self.reports.iter().find(|r| r.name == name).map(|r| &r.errors)
    }

    pub fn q_hat(&self) -> Option<usize> {
        self.estimation.as_ref()?.cluster.as_ref().map(|c| c.q_hat)
    }

    /// `Q_hat` equals the number of active types and every active pair has
    /// its true type.
    pub fn types_recovered(&self) -> bool {
        let r = self.final_report();
        r.q_hat_matches && r.type_err == 0.0
    }

    pub fn estimation_seconds(&self) -> f64 {
        self.estimation.as_ref().map_or(f64::NAN, Estimation::estimation_seconds)
    }
}

fn timed<T>(timings: &mut Vec<(Stage, f64)>, stage: Stage, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let t0 = Instant::now();
    let out = f();
    timings.push((stage, t0.elapsed().as_secs_f64()));
    out
}

fn fail(stage: Stage, e: impl fmt::Display) -> StageFailure {
    StageFailure { stage, message: e.to_string() }
}

/// Builds the hypothesis basis, orthonormalized on the data if requested.
pub fn hypothesis_basis(cfg: &PipelineConfig, rho: &[f64]) -> Result<BasisSet> {
    let raw = cfg.basis.build()?;
    if cfg.orthonormalize {
        orthonormalize(&raw, &subsample(rho, 4 * MAX_RHO_SAMPLES))
    } else {
        Ok(raw)
    }
}

/// Expresses the true kernels in the hypothesis basis: exactly when the raw
/// bases agree, otherwise by least squares on the radial samples.
pub fn coefficients_in(truth: &Truth, cfg: &PipelineConfig, hyp: &BasisSet, rho: &[f64]) -> DMatrix<f64> {
    if cfg.basis == cfg.system.basis {
        return hyp.coefficients_from_raw(&truth.params.c);
    }
    let rho = subsample(rho, MAX_RHO_SAMPLES);
    let k = hyp.k();
    let q = truth.params.c.ncols();
    let psi = DMatrix::from_fn(rho.len(), k, |s, kk| hyp.eval(rho[s])[kk]);
    let gram = psi.tr_mul(&psi);
    let mut out = DMatrix::zeros(k, q);
    for t in 0..q {
        let col = truth.params.c.column(t);
        let f =
            nalgebra::DVector::from_iterator(rho.len(), rho.iter().map(|&r| truth.basis.combine(col.as_slice(), r)));
        out.set_column(t, &pinv_solve(&gram, &psi.tr_mul(&f), 1e-12).x);
    }
    out
}

fn als_rank(cfg: &PipelineConfig, oracle: Option<&Oracle>, n: usize, k: usize) -> Result<usize> {
    if cfg.als.rank > 0 {
        return Ok(cfg.als.rank);
    }
    Ok(match (cfg.cluster.q, oracle) {
        (QChoice::Fixed(q), _) => q,
        (QChoice::True, Some(o)) => o.q_act,
        (QChoice::True, None) => return Err(Error::InvalidArgument("cluster.q = true needs a known system".into())),
        (QChoice::Adaptive, _) => AlsOptions::default_rank(n, k),
    })
}

fn cluster_config(cfg: &PipelineConfig, oracle: Option<&Oracle>) -> ClusterConfig {
    let s = &cfg.cluster;
    let base = ClusterConfig {
        z0: s.z0,
        delta: 1.0,
        theta0: s.theta0,
        big_theta0: s.big_theta0,
        q0: s.q0,
        n_max: s.n_max,
        restarts: s.restarts,
        seed: rng::derive(cfg.seed, &[3]),
    };
    match oracle {
        Some(o) if s.oracle => base.with_oracle(o.separability.z_min, o.separability.theta_min),
        _ => base,
    }
}

/// Runs the three estimation stages on observed trajectories.
pub fn estimate(batch: &TrajectoryBatch, cfg: &PipelineConfig, oracle: Option<&Oracle>) -> Result<Estimation> {
    let mut timings = Vec::new();
    let rho = exploration_samples(batch).norms;
    let basis = timed(&mut timings, Stage::Basis, || hypothesis_basis(cfg, &rho))?;
    let mut est = Estimation {
        basis: basis.clone(),
        rho,
        als: None,
        cluster: None,
        factorization: None,
        refine: None,
        known_graph: None,
        positional_c: None,
        failure: None,
        timings: Vec::new(),
    };
    let n = batch.n_agents();
    let out = (|| -> std::result::Result<(), StageFailure> {
        let stb = timed(&mut timings, Stage::Sensing, || build_sensing_tensors(batch, &basis))
            .map_err(|e| fail(Stage::Sensing, e))?;
        let t0 = Instant::now();
        let stats = stb.stats();
        timings.push((Stage::Sensing, t0.elapsed().as_secs_f64()));

        let q_hat = als_rank(cfg, oracle, n, basis.k()).map_err(|e| fail(Stage::Als, e))?;
        let opts = AlsOptions {
            q_hat,
            eps: cfg.als.eps,
            max_iter: cfg.als.max_iter,
            regularize: cfg.als.regularize,
            restarts: cfg.als.restarts,
            seed: rng::derive(cfg.seed, &[2]),
            record_history: false,
        };
        let als = timed(&mut timings, Stage::Als, || als_fit_with_stats(&stb, &stats, &opts))
            .map_err(|e| fail(Stage::Als, e))?;
        if !als.converged {
            log::info!("ALS stopped after {} iterations without meeting the tolerance", als.iterations);
        }
        let z_hat = als.z_hat.clone();
        est.als = Some(als);

        let ccfg = cluster_config(cfg, oracle);
        let q_known = match cfg.cluster.q {
            QChoice::Fixed(q) => Some(q),
            QChoice::True => oracle.map(|o| o.q_act),
            QChoice::Adaptive => None,
        };

        if cfg.system.kind == SystemKind::Complete {
            let a = complete_graph(n, GraphConvention::Euclidean).map_err(|e| fail(Stage::Cluster, e))?;
            let mode = match q_known {
                Some(q) => PositionalMode::KnownQ(q),
                None => PositionalMode::Adaptive(ccfg.clone()),
            };
            let (cl, c_hat) = timed(&mut timings, Stage::Cluster, || {
                positional_cluster(&z_hat, &mode, a[(0, 1)], ccfg.restarts, ccfg.seed)
            })
            .map_err(|e| fail(Stage::Cluster, e))?;
            let ok = cl.success;
            est.cluster = Some(cl);
            est.known_graph = Some(a);
            est.positional_c = Some(c_hat);
            if !ok {
                return Err(fail(Stage::Cluster, "classification failed"));
            }
            return Ok(());
        }

        let cl = timed(&mut timings, Stage::Cluster, || match q_known {
            Some(q) => cluster_known_q(&z_hat, &ccfg, q),
            None => cluster_adaptive(&z_hat, &ccfg),
        })
        .map_err(|e| fail(Stage::Cluster, e))?;
        let ok = cl.success;
        est.cluster = Some(cl);
        if !ok {
            return Err(fail(Stage::Cluster, "classification failed"));
        }
        let cl = est.cluster.as_ref().expect("set above");
        let fac = timed(&mut timings, Stage::Factorize, || factorize(&z_hat, cl, SV_FLOOR))
            .map_err(|e| fail(Stage::Factorize, e))?;
        if fac.scale_ambiguous {
            log::warn!("design matrix has rank {} below {} active types", fac.rank_a, fac.active_types.len());
        }
        let a_init = fac.a_hat.clone();
        est.factorization = Some(fac);
        if cfg.refine.enabled {
            let ropts = RefineOptions { eps: cfg.refine.eps, max_iter: cfg.refine.max_iter };
            let k_hat = cl.assignment();
            let rep = timed(&mut timings, Stage::Refine, || {
                postprocess_als_with_stats(&stb, &stats, &k_hat, &a_init, &ropts)
            })
            .map_err(|e| fail(Stage::Refine, e))?;
            est.refine = Some(rep);
        }
        Ok(())
    })();
    est.failure = out.err();
    est.timings = timings;
    Ok(est)
}

fn eval_sim(cfg: &PipelineConfig) -> SimConfig {
    let e = &cfg.eval;
    SimConfig {
        n_traj: if e.traj_n_traj > 0 { e.traj_n_traj } else { cfg.sim.n_traj },
        n_steps: if e.traj_n_steps > 0 { e.traj_n_steps } else { cfg.sim.n_steps },
        sigma_obs: 0.0,
        seed: rng::derive(cfg.seed, &[4]),
        ..cfg.sim.clone()
    }
}

/// Errors of every available stage against the truth.
fn evaluate(
    truth: &Truth,
    z_star: &Embedding,
    est: &Estimation,
    cfg: &PipelineConfig,
    notes: &mut Vec<String>,
) -> Result<Vec<StageReport>> {
    let Some(als) = est.als.as_ref() else {
        return Ok(Vec::new());
    };
    let z_true = truth.params.embedding();
    let d = truth.params.dims.dim;
    let sim = eval_sim(cfg);
    let mut traj = |z: &Embedding| -> f64 {
        if !cfg.eval.trajectory {
            return f64::NAN;
        }
        match trajectory_error(&z_true, &truth.basis, z, &est.basis, d, &sim) {
            Ok(v) => v,
            Err(e) => {
                notes.push(format!("trajectory error: {e}"));
                f64::INFINITY
            }
        }
    };
    let mut out = Vec::new();
    let empty_kappa;
    let kappa_hat = match &est.cluster {
        Some(c) => c.kappa_hat(),
        None => {
            empty_kappa = TypeMatrix::zeros(z_star.n());
            empty_kappa
        }
    };
    let row = |name, z: &Embedding, a: &GraphMatrix, c: &DMatrix<f64>, amb: bool, t: f64| -> Result<StageReport> {
        let e =
            Estimate { z_hat: z, kappa_hat: &kappa_hat, a_hat: a, c_hat: c, basis: &est.basis, scale_ambiguous: amb };
        let mut errors = estimation_errors(&truth.params, &truth.basis, z_star, &e, &est.rho)?;
        errors.traj_err = t;
        Ok(StageReport { name, errors })
    };

    if let (Some(a), Some(c)) = (&est.known_graph, &est.positional_c) {
        let t = traj(&als.z_hat);
        out.push(row("positional", &als.z_hat, a, c, false, t)?);
        return Ok(out);
    }
    match &est.factorization {
        Some(f) => {
            let t = traj(&als.z_hat);
            out.push(row("factorization", &als.z_hat, &f.a_hat, &f.c_hat, f.scale_ambiguous, t)?);
            if let (Some(r), Some(cl)) = (&est.refine, &est.cluster) {
                let z = embedding_from_assignment(&r.a_hat, &cl.assignment(), &r.c_hat)?;
                let t = traj(&z);
                out.push(row("post_processing", &z, &r.a_hat, &r.c_hat, f.scale_ambiguous, t)?);
            }
        }
        None => {
            // Clustering failed or was not reached: only the embedding is usable.
            let t = traj(&als.z_hat);
            let nan = DMatrix::from_element(z_star.n(), z_star.n(), f64::NAN);
            let c = est.cluster.as_ref().map_or_else(|| DMatrix::zeros(est.basis.k(), 0), |c| c.centers.clone());
            out.push(row("sensing", &als.z_hat, &nan, &c, false, t)?);
        }
    }
    Ok(out)
}

/// Builds the true system, simulates data, estimates and evaluates.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<RunResult> {
    cfg.validate()?;
    let t0 = Instant::now();
    let params = build_system(&cfg.system)?;
    let truth = Truth { params, basis: cfg.system.basis.build()? };
    let sim = SimConfig { seed: rng::derive(cfg.seed, &[1]), ..cfg.sim.clone() };
    let batch = simulate_em(&truth.params, &truth.basis, &sim);

    let mut notes = Vec::new();
    let (estimation, c_star, failure) = match &batch {
        Ok(batch) => {
            let rho = exploration_samples(batch).norms;
            let hyp = hypothesis_basis(cfg, &rho)?;
            let c_star = coefficients_in(&truth, cfg, &hyp, &rho);
            let hyp_params = SystemParams::new(
                truth.params.a.clone(),
                c_star.clone(),
                truth.params.kappa.clone(),
                truth.params.dims.dim,
            )?;
            let oracle =
                Oracle { separability: separability_params(&hyp_params)?, q_act: hyp_params.active_types().len() };
            let est = estimate(batch, cfg, Some(&oracle))?;
            let f = est.failure.clone();
            (Some(est), c_star, f)
        }
        Err(e) => (None, truth.params.c.clone(), Some(fail(Stage::Simulate, e))),
    };
    let hyp_params =
        SystemParams::new(truth.params.a.clone(), c_star.clone(), truth.params.kappa.clone(), truth.params.dims.dim)?;
    let oracle = Oracle { separability: separability_params(&hyp_params)?, q_act: hyp_params.active_types().len() };
    let z_star = build_embedding(&truth.params.a, &truth.params.kappa, &c_star)?;
    let reports = match &estimation {
        Some(est) => evaluate(&truth, &z_star, est, cfg, &mut notes)?,
        None => Vec::new(),
    };
    if let Some(f) = &failure {
        log::warn!("run stopped: {f}");
    }
    Ok(RunResult {
        truth,
        c_star,
        z_star,
        oracle,
        estimation,
        reports,
        failure,
        notes,
        total_seconds: t0.elapsed().as_secs_f64(),
    })
}

/// Run manifest: configuration, outcome and summary numbers.
pub fn manifest(cfg: &PipelineConfig, run: &RunResult) -> io::KeyValues {
    let mut kv = vec![("version".to_string(), env!("CARGO_PKG_VERSION").to_string())];
    kv.extend(cfg.to_key_values());
    let push = |kv: &mut io::KeyValues, k: &str, v: String| kv.push((k.to_string(), v));
    push(&mut kv, "status", if run.failure.is_some() { "failed".into() } else { "ok".into() });
    if let Some(f) = &run.failure {
        push(&mut kv, "failed_stage", f.stage.tag().into());
        push(&mut kv, "failure", f.message.clone());
    }
    let s = &run.oracle.separability;
    push(&mut kv, "truth.q_act", run.oracle.q_act.to_string());
    push(&mut kv, "truth.theta_min", s.theta_min.to_string());
    push(&mut kv, "truth.z_min", s.z_min.to_string());
    push(&mut kv, "truth.eps0", s.eps0.to_string());
    if let Some(est) = &run.estimation {
        push(&mut kv, "basis.k_effective", est.basis.k().to_string());
        if let Some(a) = &est.als {
            push(&mut kv, "als.iterations", a.iterations.to_string());
            push(&mut kv, "als.converged", a.converged.to_string());
            push(&mut kv, "als.final_loss", a.final_loss.to_string());
        }
        if let Some(c) = &est.cluster {
            push(&mut kv, "cluster.q_hat", c.q_hat.to_string());
            push(&mut kv, "cluster.success", c.success.to_string());
            push(&mut kv, "cluster.threshold", c.threshold.to_string());
            push(&mut kv, "cluster.theta", c.theta.to_string());
            push(&mut kv, "cluster.big_theta", c.big_theta.to_string());
        }
        if let Some(f) = &est.factorization {
            push(&mut kv, "factorize.rank_a", f.rank_a.to_string());
            push(&mut kv, "factorize.sigma_min_a", f.sigma_min_a.to_string());
            push(&mut kv, "factorize.scale_ambiguous", f.scale_ambiguous.to_string());
        }
        if let Some(r) = &est.refine {
            push(&mut kv, "refine.iterations", r.iterations.to_string());
            push(&mut kv, "refine.converged", r.converged.to_string());
            push(&mut kv, "refine.final_loss", r.final_loss.to_string());
        }
    }
    for (i, n) in run.notes.iter().enumerate() {
        push(&mut kv, &format!("note.{i}"), n.clone());
    }
    kv
}

/// Writes the estimate files of a run.
pub fn write_estimation(dir: &Path, est: &Estimation) -> Result<()> {
    fs::create_dir_all(dir)?;
    if let Some(a) = &est.als {
        io::write_matrix(&dir.join("z_hat.csv"), a.z_hat.matrix())?;
    }
    if let Some(c) = &est.cluster {
        io::write_type_matrix(&dir.join("kappa_hat.csv"), &c.kappa_hat())?;
        io::write_matrix(&dir.join("centers.csv"), &c.centers)?;
    }
    let (a, c) = match (&est.refine, &est.factorization, &est.known_graph, &est.positional_c) {
        (Some(r), _, _, _) => (Some(&r.a_hat), Some(&r.c_hat)),
        (None, Some(f), _, _) => (Some(&f.a_hat), Some(&f.c_hat)),
        (_, _, Some(a), Some(c)) => (Some(a), Some(c)),
        _ => (None, None),
    };
    if let Some(a) = a {
        io::write_matrix(&dir.join("a_hat.csv"), a)?;
    }
    if let Some(c) = c {
        io::write_matrix(&dir.join("c_hat.csv"), c)?;
    }
    let timing_rows: Vec<String> = est.timings.iter().map(|(s, t)| format!("{},{t:.6}", s.tag())).collect();
    fs::write(dir.join("timings.csv"), io::table_to_csv(Some("manifest.txt"), "stage,seconds", &timing_rows))?;
    Ok(())
}

/// Writes truth, estimates, errors and the manifest into `dir`.
pub fn write_run(dir: &Path, cfg: &PipelineConfig, run: &RunResult) -> Result<()> {
    fs::create_dir_all(dir)?;
    io::write_matrix(&dir.join("a_star.csv"), &run.truth.params.a)?;
    io::write_type_matrix(&dir.join("kappa_star.csv"), &run.truth.params.kappa)?;
    io::write_matrix(&dir.join("c_star.csv"), &run.c_star)?;
    io::write_matrix(&dir.join("z_star.csv"), run.z_star.matrix())?;
    if let Some(est) = &run.estimation {
        write_estimation(dir, est)?;
    }
    let rows: Vec<String> = run.reports.iter().map(|r| format!("{},{}", r.name, r.errors.csv_row())).collect();
    let header = format!("stage,{}", ErrorReport::CSV_HEADER);
    fs::write(dir.join("errors.csv"), io::table_to_csv(Some("manifest.txt"), &header, &rows))?;
    io::write_key_values(&dir.join("manifest.txt"), &manifest(cfg, run))?;
    Ok(())
}
