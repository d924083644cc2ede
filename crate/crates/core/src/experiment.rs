//! Repeated runs over parameter sweeps, with long-format CSV output.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;

use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::io;
use crate::linalg::{linear_fit, quantile};
use crate::metrics::{fmt_f, ErrorReport};
use crate::pipeline::{run_pipeline, write_run, RunResult};
use crate::presets;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    ConvergenceM,
    ConvergenceN,
    SampleSize,
    PredatorPrey,
    SingleRun,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::ConvergenceM => "convergence_M",
            ExperimentKind::ConvergenceN => "convergence_N",
            ExperimentKind::SampleSize => "sample_size_NK",
            ExperimentKind::PredatorPrey => "predator_prey",
            ExperimentKind::SingleRun => "single_run",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "convergence_m" | "conv_m" => ExperimentKind::ConvergenceM,
            "convergence_n" | "conv_n" => ExperimentKind::ConvergenceN,
            "sample_size_nk" | "sample_size" => ExperimentKind::SampleSize,
            "predator_prey" => ExperimentKind::PredatorPrey,
            "single_run" | "single" => ExperimentKind::SingleRun,
            _ => return Err(Error::InvalidArgument(format!("unknown experiment '{s}'"))),
        })
    }
}

/// A sweep design.
///
/// `sweep` holds `M` values for the convergence-in-M and predator-prey
/// experiments, `N` values for convergence in `N`, and agent counts for the
/// sample-size grid, whose basis sizes are `k_values` and whose scanned
/// sample sizes are `m_scan`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    pub sweep: Vec<usize>,
    pub reps: usize,
    pub quantile: f64,
    pub k_values: Vec<usize>,
    pub m_scan: Vec<usize>,
    /// Use the complete-network variant for the convergence experiments.
    pub complete: bool,
}

fn powers_of_two(lo: u32, hi: u32) -> Vec<usize> {
    (lo..=hi).map(|p| 1usize << p).collect()
}

impl ExperimentSpec {
    /// Sweeps small enough to finish in minutes.
    pub fn desk(kind: ExperimentKind) -> Self {
        let base = ExperimentSpec {
            kind,
            sweep: Vec::new(),
            reps: 5,
            quantile: 0.9,
            k_values: Vec::new(),
            m_scan: Vec::new(),
            complete: false,
        };
        match kind {
            ExperimentKind::ConvergenceM => ExperimentSpec { sweep: powers_of_two(4, 9), ..base },
            ExperimentKind::ConvergenceN => ExperimentSpec { sweep: vec![4, 8, 16, 32], reps: 3, ..base },
            ExperimentKind::SampleSize => ExperimentSpec {
                sweep: vec![4, 8, 12],
                reps: 3,
                k_values: vec![2, 6, 10],
                m_scan: (2..=22).collect(),
                ..base
            },
            ExperimentKind::PredatorPrey => ExperimentSpec { sweep: vec![20], reps: 10, ..base },
            ExperimentKind::SingleRun => ExperimentSpec { sweep: vec![0], reps: 1, ..base },
        }
    }

    /// Full-size sweeps.
    pub fn full(kind: ExperimentKind) -> Self {
        let desk = Self::desk(kind);
        match kind {
            ExperimentKind::ConvergenceM => ExperimentSpec { sweep: powers_of_two(4, 10), reps: 10, ..desk },
            ExperimentKind::ConvergenceN => ExperimentSpec { sweep: vec![4, 8, 16, 32, 64], reps: 10, ..desk },
            ExperimentKind::SampleSize => ExperimentSpec {
                sweep: vec![4, 8, 12, 16],
                k_values: vec![2, 4, 6, 8, 10],
                m_scan: (2..=40).collect(),
                ..desk
            },
            _ => desk,
        }
    }

    /// Reads the sweep recorded in an experiment manifest, or `None` when the
    /// entries are not an experiment manifest.
    pub fn from_manifest(kv: &[(String, String)]) -> Result<Option<Self>> {
        let Some(kind) = io::lookup(kv, "experiment") else {
            return Ok(None);
        };
        let bad = |key: &str| Error::Parse(format!("experiment manifest: bad or missing '{key}'"));
        let list = |key: &str| -> Result<Vec<usize>> {
            match io::lookup(kv, key) {
                None | Some("") => Ok(Vec::new()),
                Some(s) => s.split(';').map(|x| x.trim().parse().map_err(|_| bad(key))).collect(),
            }
        };
        let field = |key: &str| io::lookup(kv, key).ok_or_else(|| bad(key));
        let spec = ExperimentSpec {
            kind: kind.parse()?,
            sweep: list("sweep")?,
            reps: field("reps")?.parse().map_err(|_| bad("reps"))?,
            quantile: field("quantile")?.parse().map_err(|_| bad("quantile"))?,
            k_values: list("k_values")?,
            m_scan: list("m_scan")?,
            complete: field("complete")?.parse().map_err(|_| bad("complete"))?,
        };
        spec.validate()?;
        Ok(Some(spec))
    }

    pub fn validate(&self) -> Result<()> {
        let increasing = |v: &[usize]| v.windows(2).all(|w| w[0] < w[1]);
        if self.reps == 0 {
            return Err(Error::InvalidArgument("repetitions must be at least 1".into()));
        }
        if self.sweep.is_empty() || !increasing(&self.sweep) {
            return Err(Error::InvalidArgument("sweep values must be nonempty and strictly increasing".into()));
        }
        if !(0.0..=1.0).contains(&self.quantile) {
            return Err(Error::InvalidArgument("quantile level must lie in [0, 1]".into()));
        }
        if self.kind == ExperimentKind::SampleSize
            && (self.k_values.is_empty()
                || !increasing(&self.k_values)
                || self.m_scan.is_empty()
                || !increasing(&self.m_scan))
        {
            return Err(Error::InvalidArgument("sample-size sweeps need increasing K and M values".into()));
        }
        Ok(())
    }
}

/// The outcome of one pipeline run in a sweep, reduced to numbers.
#[derive(Debug, Clone)]
pub struct RepRow {
    pub n: usize,
    pub k: usize,
    pub m: usize,
    pub rep: usize,
    pub seed: u64,
    /// Stage name of the report, or `"none"` when no estimate exists.
    pub stage: String,
    pub failed_stage: Option<String>,
    pub q_hat: Option<usize>,
    pub q_act: usize,
    pub eps0: f64,
    pub errors: ErrorReport,
    pub est_seconds: f64,
    pub total_seconds: f64,
}

impl RepRow {
    pub const CSV_HEADER_PREFIX: &'static str = "experiment,n,k,m,rep,seed,stage,status,failed_stage,q_hat,q_act,eps0";

    pub fn types_recovered(&self) -> bool {
        self.errors.q_hat_matches && self.errors.type_err == 0.0
    }

    fn csv_row(&self, kind: ExperimentKind) -> String {
        format!(
            "{kind},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.n,
            self.k,
            self.m,
            self.rep,
            self.seed,
            self.stage,
            if self.failed_stage.is_some() { "failed" } else { "ok" },
            self.failed_stage.as_deref().unwrap_or(""),
            self.q_hat.map_or(String::new(), |q| q.to_string()),
            self.q_act,
            fmt_f(self.eps0),
            self.errors.csv_row()
        )
    }
}

fn rows_from_run(cfg: &PipelineConfig, rep: usize, run: &RunResult) -> Vec<RepRow> {
    let base = RepRow {
        n: cfg.system.n_agents,
        k: cfg.basis.k,
        m: cfg.sim.n_traj,
        rep,
        seed: cfg.seed,
        stage: "none".into(),
        failed_stage: run.failure.as_ref().map(|f| f.stage.tag().to_string()),
        q_hat: run.q_hat(),
        q_act: run.oracle.q_act,
        eps0: run.oracle.separability.eps0,
        errors: ErrorReport::failed(run.truth.params.c.ncols()),
        est_seconds: run.estimation_seconds(),
        total_seconds: run.total_seconds,
    };
    if run.reports.is_empty() {
        return vec![base];
    }
    run.reports.iter().map(|r| RepRow { stage: r.name.to_string(), errors: r.errors.clone(), ..base.clone() }).collect()
}

/// Runs one configuration, folding configuration errors into a failed row.
fn run_one(cfg: &PipelineConfig, rep: usize, out: Option<&Path>) -> Vec<RepRow> {
    match run_pipeline(cfg) {
        Ok(run) => {
            if let Some(dir) = out {
                let sub = dir.join(format!("n{}_k{}_m{}_rep{}", cfg.system.n_agents, cfg.basis.k, cfg.sim.n_traj, rep));
                if let Err(e) = write_run(&sub, cfg, &run) {
                    log::warn!("could not write {}: {e}", sub.display());
                }
            }
            rows_from_run(cfg, rep, &run)
        }
        Err(e) => {
            log::warn!("run n={} m={} rep={rep} failed: {e}", cfg.system.n_agents, cfg.sim.n_traj);
            vec![RepRow {
                n: cfg.system.n_agents,
                k: cfg.basis.k,
                m: cfg.sim.n_traj,
                rep,
                seed: cfg.seed,
                stage: "none".into(),
                failed_stage: Some("config".into()),
                q_hat: None,
                q_act: 0,
                eps0: f64::NAN,
                errors: ErrorReport::failed(cfg.system.n_types),
                est_seconds: f64::NAN,
                total_seconds: f64::NAN,
            }]
        }
    }
}

/// Minimal sample size of one `(N, K)` cell of the sample-size grid.
#[derive(Debug, Clone, PartialEq)]
pub struct MinSampleSize {
    pub n: usize,
    pub k: usize,
    /// Smallest scanned `M` at which every repetition recovers `kappa`.
    pub min_m: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub spec: ExperimentSpec,
    pub rows: Vec<RepRow>,
    pub min_sample_sizes: Vec<MinSampleSize>,
}

/// Configuration of one sweep point and repetition.
pub fn derived_config(spec: &ExperimentSpec, base: &PipelineConfig, x: usize, rep: usize) -> PipelineConfig {
    let mut cfg = base.clone();
    match spec.kind {
        ExperimentKind::ConvergenceM | ExperimentKind::PredatorPrey => cfg.sim.n_traj = x,
        ExperimentKind::ConvergenceN => cfg.system.n_agents = x,
        ExperimentKind::SampleSize | ExperimentKind::SingleRun => {}
    }
    // The system stays fixed across repetitions; only the data changes.
    cfg.seed = rng::derive(base.seed, &[x as u64, rep as u64]);
    cfg
}

/// Default base configuration of an experiment.
pub fn base_config(spec: &ExperimentSpec) -> PipelineConfig {
    match spec.kind {
        ExperimentKind::ConvergenceM if spec.complete => presets::convergence_m_complete(spec.sweep[0]),
        ExperimentKind::ConvergenceM => presets::convergence_m(spec.sweep[0], 0.25),
        ExperimentKind::ConvergenceN => presets::convergence_n(spec.sweep[0], spec.complete),
        ExperimentKind::SampleSize => presets::sample_size(spec.sweep[0], spec.k_values[0], spec.m_scan[0]),
        ExperimentKind::PredatorPrey => presets::predator_prey(),
        ExperimentKind::SingleRun => PipelineConfig::default(),
    }
}

fn sample_size_cell(
    spec: &ExperimentSpec,
    base: &PipelineConfig,
    n: usize,
    k: usize,
    out: Option<&Path>,
) -> (Vec<RepRow>, MinSampleSize) {
    let mut rows = Vec::new();
    for &m in &spec.m_scan {
        let batch: Vec<Vec<RepRow>> = (0..spec.reps)
            .into_par_iter()
            .map(|b| {
                let mut cfg = base.clone();
                cfg.system.n_agents = n;
                cfg.system.basis.k = k;
                cfg.basis.k = k;
                cfg.sim.n_traj = m;
                // A fresh system per repetition, shared across the M scan.
                cfg.system.seed = rng::derive(base.system.seed, &[n as u64, k as u64, b as u64]);
                cfg.seed = rng::derive(base.seed, &[n as u64, k as u64, b as u64, m as u64]);
                run_one(&cfg, b, out)
            })
            .collect();
        let ok = batch.iter().all(|r| r.last().is_some_and(RepRow::types_recovered));
        rows.extend(batch.into_iter().flatten());
        if ok {
            return (rows, MinSampleSize { n, k, min_m: Some(m) });
        }
    }
    (rows, MinSampleSize { n, k, min_m: None })
}

/// Runs every sweep point and repetition; failed runs become rows with a
/// failure tag. Per-run artifacts go under `out/runs` when `out` is given.
pub fn run_experiment(spec: &ExperimentSpec, base: &PipelineConfig, out: Option<&Path>) -> Result<ExperimentResult> {
    spec.validate()?;
    let runs_dir = out.map(|o| o.join("runs"));
    let runs = runs_dir.as_deref();
    if spec.kind == ExperimentKind::SampleSize {
        let cells: Vec<(usize, usize)> =
            spec.sweep.iter().flat_map(|&n| spec.k_values.iter().map(move |&k| (n, k))).collect();
        let done: Vec<_> = cells.par_iter().map(|&(n, k)| sample_size_cell(spec, base, n, k, runs)).collect();
        let (rows, mins): (Vec<_>, Vec<_>) = done.into_iter().unzip();
        return Ok(ExperimentResult {
            spec: spec.clone(),
            rows: rows.into_iter().flatten().collect(),
            min_sample_sizes: mins,
        });
    }
    let jobs: Vec<(usize, usize)> = spec.sweep.iter().flat_map(|&x| (0..spec.reps).map(move |r| (x, r))).collect();
    let rows: Vec<Vec<RepRow>> =
        jobs.par_iter().map(|&(x, rep)| run_one(&derived_config(spec, base, x, rep), rep, runs)).collect();
    Ok(ExperimentResult {
        spec: spec.clone(),
        rows: rows.into_iter().flatten().collect(),
        min_sample_sizes: Vec::new(),
    })
}

pub fn mean(values: &[f64]) -> f64 {
    let v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// The metrics summarized per sweep point.
pub const SUMMARY_METRICS: &[&str] =
    &["z_err_2inf", "z_err_fro", "type_err", "graph_err", "kernel_err_mean", "traj_err"];

fn metric(row: &RepRow, name: &str) -> f64 {
    match name {
        "z_err_2inf" => row.errors.z_err_2inf,
        "z_err_fro" => row.errors.z_err_fro,
        "type_err" => row.errors.type_err,
        "graph_err" => row.errors.graph_err,
        "kernel_err_mean" => row.errors.kernel_err_mean,
        "traj_err" => row.errors.traj_err,
        _ => f64::NAN,
    }
}

/// Mean and quantile of one metric at one sweep point and stage.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub n: usize,
    pub k: usize,
    pub m: usize,
    pub stage: String,
    pub metric: &'static str,
    pub mean: f64,
    pub quantile: f64,
    pub median: f64,
    pub count: usize,
}

impl ExperimentResult {
    /// Rows of one stage, or of the last stage of every run when `stage` is
    /// `None`.
    pub fn stage_rows(&self, stage: Option<&str>) -> Vec<&RepRow> {
        match stage {
            Some(s) => self.rows.iter().filter(|r| r.stage == s).collect(),
            None => {
                let mut out: Vec<&RepRow> = Vec::new();
                for r in &self.rows {
                    match out.last_mut() {
                        Some(prev)
                            if (prev.n, prev.k, prev.m, prev.rep, prev.seed) == (r.n, r.k, r.m, r.rep, r.seed) =>
                        {
                            *prev = r
                        }
                        _ => out.push(r),
                    }
                }
                out
            }
        }
    }

    pub fn summary(&self) -> Vec<SummaryRow> {
        let mut keys: Vec<(usize, usize, usize, String)> = Vec::new();
        for r in &self.rows {
            let key = (r.n, r.k, r.m, r.stage.clone());
            if !keys.contains(&key) {
                keys.push(key);
            }
        }
        let mut out = Vec::new();
        for (n, k, m, stage) in keys {
            let group: Vec<&RepRow> =
                self.rows.iter().filter(|r| (r.n, r.k, r.m) == (n, k, m) && r.stage == stage).collect();
            for &name in SUMMARY_METRICS {
                let vals: Vec<f64> = group.iter().map(|r| metric(r, name)).collect();
                out.push(SummaryRow {
                    n,
                    k,
                    m,
                    stage: stage.clone(),
                    metric: name,
                    mean: mean(&vals),
                    quantile: quantile(&vals, self.spec.quantile),
                    median: quantile(&vals, 0.5),
                    count: vals.iter().filter(|v| v.is_finite()).count(),
                });
            }
        }
        out
    }

    pub fn rows_csv(&self, manifest: Option<&str>) -> String {
        let header = format!("{},{}", RepRow::CSV_HEADER_PREFIX, ErrorReport::CSV_HEADER);
        let rows: Vec<String> = self.rows.iter().map(|r| r.csv_row(self.spec.kind)).collect();
        io::table_to_csv(manifest, &header, &rows)
    }

    pub fn summary_csv(&self, manifest: Option<&str>) -> String {
        let rows: Vec<String> = self
            .summary()
            .iter()
            .map(|s| {
                format!(
                    "{},{},{},{},{},{},{},{},{}",
                    s.n,
                    s.k,
                    s.m,
                    s.stage,
                    s.metric,
                    fmt_f(s.mean),
                    fmt_f(s.quantile),
                    fmt_f(s.median),
                    s.count
                )
            })
            .collect();
        io::table_to_csv(manifest, "n,k,m,stage,metric,mean,quantile,median,count", &rows)
    }

    pub fn min_sample_size_csv(&self, manifest: Option<&str>) -> String {
        let rows: Vec<String> = self
            .min_sample_sizes
            .iter()
            .map(|c| format!("{},{},{}", c.n, c.k, c.min_m.map_or("none".to_string(), |m| m.to_string())))
            .collect();
        io::table_to_csv(manifest, "n,k,min_m", &rows)
    }

    /// Wall-clock seconds per run, kept apart from the reproducible tables.
    pub fn timings_csv(&self, manifest: Option<&str>) -> String {
        let rows: Vec<String> = self
            .stage_rows(None)
            .iter()
            .map(|r| {
                format!("{},{},{},{},{},{:.6},{:.6}", r.n, r.k, r.m, r.rep, r.seed, r.est_seconds, r.total_seconds)
            })
            .collect();
        io::table_to_csv(manifest, "n,k,m,rep,seed,est_seconds,total_seconds", &rows)
    }

    /// Fit of the minimal sample size against `N + K` over cells that
    /// succeeded.
    /// Returns `(slope, intercept, R^2)`.
    pub fn sample_size_fit(&self) -> Option<(f64, f64, f64)> {
        let (x, y): (Vec<f64>, Vec<f64>) =
            self.min_sample_sizes.iter().filter_map(|c| c.min_m.map(|m| ((c.n + c.k) as f64, m as f64))).unzip();
        (x.len() >= 2).then(|| linear_fit(&x, &y))
    }

    /// Writes `rows.csv`, `summary.csv`, `timings.csv`, the sample-size table
    /// when present, and a manifest with the sweep and base configuration.
    pub fn write(&self, dir: &Path, base: &PipelineConfig) -> Result<()> {
        fs::create_dir_all(dir)?;
        let m = Some("manifest.txt");
        fs::write(dir.join("rows.csv"), self.rows_csv(m))?;
        fs::write(dir.join("summary.csv"), self.summary_csv(m))?;
        fs::write(dir.join("timings.csv"), self.timings_csv(m))?;
        if self.spec.kind == ExperimentKind::SampleSize {
            fs::write(dir.join("min_sample_size.csv"), self.min_sample_size_csv(m))?;
        }
        let join = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";");
        let mut kv: io::KeyValues = vec![
            ("version".into(), env!("CARGO_PKG_VERSION").into()),
            ("experiment".into(), self.spec.kind.name().into()),
            ("sweep".into(), join(&self.spec.sweep)),
            ("reps".into(), self.spec.reps.to_string()),
            ("quantile".into(), self.spec.quantile.to_string()),
            ("complete".into(), self.spec.complete.to_string()),
        ];
        if self.spec.kind == ExperimentKind::SampleSize {
            kv.push(("k_values".into(), join(&self.spec.k_values)));
            kv.push(("m_scan".into(), join(&self.spec.m_scan)));
        }
        kv.extend(base.to_key_values());
        io::write_key_values(&dir.join("manifest.txt"), &kv)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_skips_missing_values() {
        assert_eq!(mean(&[1.0, f64::NAN, 3.0]), 2.0);
        assert!(mean(&[f64::NAN]).is_nan());
    }

    #[test]
    fn specs_validate() {
        for kind in [
            ExperimentKind::ConvergenceM,
            ExperimentKind::ConvergenceN,
            ExperimentKind::SampleSize,
            ExperimentKind::PredatorPrey,
            ExperimentKind::SingleRun,
        ] {
            ExperimentSpec::desk(kind).validate().unwrap();
            ExperimentSpec::full(kind).validate().unwrap();
            assert_eq!(kind.name().parse::<ExperimentKind>().unwrap(), kind);
        }
        let bad = ExperimentSpec { sweep: vec![4, 4], ..ExperimentSpec::desk(ExperimentKind::ConvergenceM) };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn tiny_sweep_writes_tables() {
        let spec =
            ExperimentSpec { sweep: vec![50, 100], reps: 2, ..ExperimentSpec::desk(ExperimentKind::ConvergenceM) };
        let mut base = presets::noiseless();
        base.eval.trajectory = false;
        let res = run_experiment(&spec, &base, None).unwrap();
        assert_eq!(res.stage_rows(None).len(), 4);
        assert!(res.stage_rows(None).iter().all(|r| r.types_recovered()));
        let dir = tempfile::tempdir().unwrap();
        res.write(dir.path(), &base).unwrap();
        let rows = fs::read_to_string(dir.path().join("rows.csv")).unwrap();
        assert!(rows.starts_with("# manifest=manifest.txt\nexperiment,n,k,m"));
        assert_eq!(rows.lines().count(), 2 + res.rows.len());
        let again = run_experiment(&spec, &base, None).unwrap();
        let strip = |r: &RepRow| format!("{} {}", r.seed, r.errors.csv_row());
        assert_eq!(res.rows.iter().map(strip).collect::<Vec<_>>(), again.rows.iter().map(strip).collect::<Vec<_>>());
    }
}
