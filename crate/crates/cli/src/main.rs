//! Command-line front end: simulation, estimation, full pipeline runs and
//! experiment sweeps. Every output directory gets a `manifest.txt` that can be
//! passed back through `--config` to reproduce it.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hetips::config::{PipelineConfig, QChoice};
use hetips::experiment::{base_config, run_experiment, ExperimentKind, ExperimentResult, ExperimentSpec};
use hetips::io::{self, KeyValues, TrajectoryMeta};
use hetips::pipeline::{self, Estimation, RunResult};
use hetips::presets::{self, build_system, truth_basis};
use hetips::rng;
use hetips::simulate::{simulate_em, SimConfig};

#[derive(Parser)]
#[command(name = "hetips", version, about = "Heterogeneous interacting particle systems on networks")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Config file, or a manifest written by an earlier run.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides the top-level seed.
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,
    #[arg(long, global = true, value_name = "DIR", default_value = "hetips_out")]
    out: PathBuf,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, value_name = "N", default_value_t = 0)]
    threads: usize,
    /// Use the full-size experiment sweeps instead of the desk-sized ones.
    #[arg(long, global = true)]
    full_scale: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate trajectories of a system and write them with the truth.
    Simulate {
        #[arg(long, value_name = "NAME")]
        preset: Option<String>,
    },
    /// Estimate the system from a trajectory CSV.
    Estimate {
        /// Trajectory CSV with its `.meta` sidecar.
        trajectories: PathBuf,
        #[arg(long, value_name = "NAME")]
        preset: Option<String>,
    },
    /// Simulate, estimate and score against the truth.
    Pipeline {
        #[arg(long, value_name = "NAME")]
        preset: Option<String>,
    },
    /// Run a parameter sweep: convergence_M, convergence_N, sample_size_NK,
    /// predator_prey or single_run.
    Experiment {
        kind: Option<String>,
        /// Use the complete-network variant.
        #[arg(long)]
        complete: bool,
        #[arg(long)]
        reps: Option<usize>,
    },
    /// Repeated predator-prey runs with median errors per stage.
    PredatorPrey,
}

/// An error tagged with the stage that produced it.
struct Failure {
    stage: &'static str,
    message: String,
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] {}", self.stage, self.message)
    }
}

fn tagged<E: fmt::Display>(stage: &'static str) -> impl Fn(E) -> Failure {
    move |e| Failure { stage, message: e.to_string() }
}

type Result<T> = std::result::Result<T, Failure>;

/// Parsed `--config` contents.
enum Source {
    None,
    Text(String),
    Manifest(KeyValues),
}

fn read_source(path: Option<&Path>) -> Result<Source> {
    let Some(path) = path else {
        return Ok(Source::None);
    };
    let text = fs::read_to_string(path)
        .map_err(|e| Failure { stage: "config", message: format!("{}: {e}", path.display()) })?;
    match io::key_values_from_str(&text) {
        Ok(kv) if io::lookup(&kv, "version").is_some() => Ok(Source::Manifest(kv)),
        _ => Ok(Source::Text(text)),
    }
}

/// Preset, then config file or manifest, then `--seed`.
fn pipeline_config(common: &Common, preset: Option<&str>) -> Result<PipelineConfig> {
    let mut cfg = match read_source(common.config.as_deref())? {
        Source::Manifest(kv) => PipelineConfig::from_manifest(&kv).map_err(tagged("config"))?,
        src => {
            let mut cfg = match preset {
                Some(name) => presets::by_name(name).map_err(tagged("config"))?,
                None => PipelineConfig::default(),
            };
            if let Source::Text(t) = src {
                cfg.apply_str(&t).map_err(tagged("config"))?;
            }
            cfg
        }
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    cfg.validate().map_err(tagged("config"))?;
    Ok(cfg)
}

fn create_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Failure { stage: "io", message: format!("{}: {e}", dir.display()) })
}

fn cmd_simulate(common: &Common, preset: Option<&str>) -> Result<()> {
    let cfg = pipeline_config(common, preset)?;
    let params = build_system(&cfg.system).map_err(tagged("system"))?;
    let basis = truth_basis(&cfg.system).map_err(tagged("system"))?;
    let sim = SimConfig { seed: rng::derive(cfg.seed, &[1]), ..cfg.sim.clone() };
    let batch = simulate_em(&params, &basis, &sim).map_err(tagged("simulate"))?;
    let out = &common.out;
    create_out(out)?;
    let meta = TrajectoryMeta { dt: sim.dt, sigma: sim.sigma, sigma_obs: sim.sigma_obs, seed: sim.seed };
    let io_err = tagged("io");
    io::write_trajectories(&out.join("trajectories.csv"), &batch, &meta).map_err(&io_err)?;
    io::write_matrix(&out.join("a_star.csv"), &params.a).map_err(&io_err)?;
    io::write_type_matrix(&out.join("kappa_star.csv"), &params.kappa).map_err(&io_err)?;
    io::write_matrix(&out.join("c_star.csv"), &params.c).map_err(&io_err)?;
    let mut kv = vec![("version".to_string(), env!("CARGO_PKG_VERSION").to_string())];
    kv.extend(cfg.to_key_values());
    io::write_key_values(&out.join("manifest.txt"), &kv).map_err(&io_err)?;
    println!(
        "simulated {} trajectories of {} agents over {} steps into {}",
        batch.n_traj(),
        batch.n_agents(),
        batch.n_steps(),
        out.display()
    );
    Ok(())
}

fn estimation_manifest(cfg: &PipelineConfig, input: &Path, est: &Estimation) -> KeyValues {
    let mut kv = vec![("version".to_string(), env!("CARGO_PKG_VERSION").to_string())];
    kv.extend(cfg.to_key_values());
    kv.push(("input".into(), input.display().to_string()));
    kv.push(("status".into(), if est.failure.is_some() { "failed" } else { "ok" }.into()));
    if let Some(f) = &est.failure {
        kv.push(("failed_stage".into(), f.stage.tag().into()));
        kv.push(("failure".into(), f.message.clone()));
    }
    kv.push(("basis.k_effective".into(), est.basis.k().to_string()));
    if let Some(a) = &est.als {
        kv.push(("als.iterations".into(), a.iterations.to_string()));
        kv.push(("als.final_loss".into(), a.final_loss.to_string()));
    }
    if let Some(c) = &est.cluster {
        kv.push(("cluster.q_hat".into(), c.q_hat.to_string()));
    }
    kv
}

fn cmd_estimate(common: &Common, input: &Path, preset: Option<&str>) -> Result<()> {
    let cfg = pipeline_config(common, preset)?;
    if cfg.cluster.q == QChoice::True {
        return Err(Failure {
            stage: "config",
            message: "cluster.q = true needs the true system; set cluster.q to adaptive or a number".into(),
        });
    }
    let (batch, _) = io::read_trajectories(input).map_err(tagged("io"))?;
    let est = pipeline::estimate(&batch, &cfg, None).map_err(tagged("estimate"))?;
    let out = &common.out;
    create_out(out)?;
    pipeline::write_estimation(out, &est).map_err(tagged("io"))?;
    io::write_key_values(&out.join("manifest.txt"), &estimation_manifest(&cfg, input, &est)).map_err(tagged("io"))?;
    if let Some(f) = &est.failure {
        return Err(Failure { stage: f.stage.tag(), message: f.message.clone() });
    }
    let q = est.cluster.as_ref().map_or(0, |c| c.q_hat);
    println!("estimated {q} types from {} trajectories into {}", batch.n_traj(), out.display());
    Ok(())
}

fn print_run(run: &RunResult) {
    for r in &run.reports {
        let e = &r.errors;
        println!(
            "{:<16} z_2inf={:.3e} z_fro={:.3e} type={:.3e} graph={:.3e} kernel={:.3e} traj={:.3e}",
            r.name, e.z_err_2inf, e.z_err_fro, e.type_err, e.graph_err, e.kernel_err_mean, e.traj_err
        );
    }
}

fn cmd_pipeline(common: &Common, preset: Option<&str>) -> Result<()> {
    let cfg = pipeline_config(common, preset)?;
    let run = pipeline::run_pipeline(&cfg).map_err(tagged("config"))?;
    pipeline::write_run(&common.out, &cfg, &run).map_err(tagged("io"))?;
    print_run(&run);
    if let Some(f) = &run.failure {
        return Err(Failure { stage: f.stage.tag(), message: f.message.clone() });
    }
    Ok(())
}

fn experiment_setup(
    common: &Common,
    kind: Option<&str>,
    complete: bool,
    reps: Option<usize>,
) -> Result<(ExperimentSpec, PipelineConfig)> {
    let (mut spec, mut base) = match read_source(common.config.as_deref())? {
        Source::Manifest(kv) => {
            let spec = ExperimentSpec::from_manifest(&kv).map_err(tagged("config"))?.ok_or_else(|| Failure {
                stage: "config",
                message: "manifest does not describe an experiment".into(),
            })?;
            if let Some(name) = kind {
                let wanted: ExperimentKind = name.parse().map_err(tagged("config"))?;
                if wanted != spec.kind {
                    return Err(Failure {
                        stage: "config",
                        message: format!("manifest is for {}, not {name}", spec.kind),
                    });
                }
            }
            (spec, PipelineConfig::from_manifest(&kv).map_err(tagged("config"))?)
        }
        src => {
            let name = kind.ok_or_else(|| Failure { stage: "config", message: "missing experiment kind".into() })?;
            let kind: ExperimentKind = name.parse().map_err(tagged("config"))?;
            let mut spec = if common.full_scale { ExperimentSpec::full(kind) } else { ExperimentSpec::desk(kind) };
            spec.complete = complete;
            let mut base = base_config(&spec);
            if let Source::Text(t) = src {
                base.apply_str(&t).map_err(tagged("config"))?;
            }
            (spec, base)
        }
    };
    if let Some(s) = common.seed {
        base.seed = s;
    }
    if let Some(r) = reps {
        spec.reps = r;
    }
    base.validate().map_err(tagged("config"))?;
    spec.validate().map_err(tagged("config"))?;
    Ok((spec, base))
}

fn run_sweep(common: &Common, spec: &ExperimentSpec, base: &PipelineConfig) -> Result<ExperimentResult> {
    create_out(&common.out)?;
    let result = run_experiment(spec, base, Some(&common.out)).map_err(tagged("experiment"))?;
    result.write(&common.out, base).map_err(tagged("io"))?;
    Ok(result)
}

fn cmd_experiment(common: &Common, kind: Option<&str>, complete: bool, reps: Option<usize>) -> Result<()> {
    let (spec, base) = experiment_setup(common, kind, complete, reps)?;
    let result = run_sweep(common, &spec, &base)?;
    let failed = result.stage_rows(None).iter().filter(|r| r.failed_stage.is_some()).count();
    println!(
        "{}: {} runs, {failed} failed, tables in {}",
        spec.kind,
        result.stage_rows(None).len(),
        common.out.display()
    );
    if let Some((slope, intercept, r2)) = result.sample_size_fit() {
        println!("min M ~ {slope:.3} (N + K) + {intercept:.3}, R^2 = {r2:.3}");
    }
    Ok(())
}

fn cmd_predator_prey(common: &Common) -> Result<()> {
    let (spec, base) = experiment_setup(common, Some("predator_prey"), false, None)?;
    let result = run_sweep(common, &spec, &base)?;
    println!("{:<16} {:>10} {:>10} {:>10} {:>10}", "stage", "z_fro", "graph", "kernel", "traj");
    for stage in ["factorization", "post_processing"] {
        let med = |name: &str| {
            result.summary().iter().find(|s| s.stage == stage && s.metric == name).map_or(f64::NAN, |s| s.median)
        };
        println!(
            "{stage:<16} {:>10.3e} {:>10.3e} {:>10.3e} {:>10.3e}",
            med("z_err_fro"),
            med("graph_err"),
            med("kernel_err_mean"),
            med("traj_err")
        );
    }
    let exact = result.stage_rows(None).iter().filter(|r| r.types_recovered()).count();
    println!("types recovered exactly in {exact} of {} runs", spec.reps);
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    if cli.common.threads > 0 {
        rayon::ThreadPoolBuilder::new().num_threads(cli.common.threads).build_global().map_err(tagged("config"))?;
    }
    let c = &cli.common;
    match &cli.command {
        Command::Simulate { preset } => cmd_simulate(c, preset.as_deref()),
        Command::Estimate { trajectories, preset } => cmd_estimate(c, trajectories, preset.as_deref()),
        Command::Pipeline { preset } => cmd_pipeline(c, preset.as_deref()),
        Command::Experiment { kind, complete, reps } => cmd_experiment(c, kind.as_deref(), *complete, *reps),
        Command::PredatorPrey => cmd_predator_prey(c),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error {f}");
            ExitCode::FAILURE
        }
    }
}
