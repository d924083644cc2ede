//! Run configuration and its flat `key = value` text form.
//!
//! Keys are dotted (`sim.n_traj = 20`); a `[sim]` line prefixes the keys
//! that follow it. Blank lines and `#` comments are ignored and unknown keys
//! are errors.

use std::fmt;
use std::str::FromStr;

use crate::basis::Family;
use crate::error::{Error, Result};
use crate::simulate::SimConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SystemKind {
    /// Random graph with minimum nonzero weight `a0`.
    Random,
    /// Complete graph with equal weights, treated as known.
    Complete,
    PredatorPrey,
}

impl FromStr for SystemKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" | "sparse" => Ok(SystemKind::Random),
            "complete" => Ok(SystemKind::Complete),
            "predator_prey" | "predator-prey" => Ok(SystemKind::PredatorPrey),
            _ => Err(Error::Parse(format!("unknown system kind '{s}'"))),
        }
    }
}

impl fmt::Display for SystemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SystemKind::Random => "random",
            SystemKind::Complete => "complete",
            SystemKind::PredatorPrey => "predator_prey",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BasisConfig {
    pub family: Family,
    pub lo: f64,
    pub hi: f64,
    pub k: usize,
}

impl BasisConfig {
    pub fn build(&self) -> Result<crate::basis::BasisSet> {
        crate::basis::make_basis(self.family, self.lo, self.hi, self.k)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SystemConfig {
    pub kind: SystemKind,
    pub n_agents: usize,
    pub dim: usize,
    pub n_types: usize,
    pub a0: f64,
    pub seed: u64,
    /// Basis in which the true kernels are defined.
    pub basis: BasisConfig,
}

/// How many clusters to look for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QChoice {
    Adaptive,
    /// The number of active true types.
    True,
    Fixed(usize),
}

impl FromStr for QChoice {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" | "adaptive" => Ok(QChoice::Adaptive),
            "true" => Ok(QChoice::True),
            _ => {
                s.parse::<usize>().ok().filter(|&q| q > 0).map(QChoice::Fixed).ok_or_else(|| {
                    Error::Parse(format!("cluster.q must be auto, true or a positive integer, got '{s}'"))
                })
            }
        }
    }
}

impl fmt::Display for QChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            QChoice::Adaptive => f.write_str("auto"),
            QChoice::True => f.write_str("true"),
            QChoice::Fixed(q) => write!(f, "{q}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlsConfig {
    /// 0 picks the number of active true types when known, else a default.
    pub rank: usize,
    pub eps: f64,
    pub max_iter: usize,
    pub regularize: bool,
    pub restarts: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterSettings {
    pub q: QChoice,
    /// Derive thresholds from the true separability parameters.
    pub oracle: bool,
    /// Support threshold; `None` selects it from the row norms.
    pub z0: Option<f64>,
    pub theta0: f64,
    pub big_theta0: f64,
    pub q0: usize,
    pub n_max: usize,
    pub restarts: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefineConfig {
    pub enabled: bool,
    pub eps: f64,
    pub max_iter: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub trajectory: bool,
    /// 0 reuses the training value.
    pub traj_n_traj: usize,
    pub traj_n_steps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    /// Seed for data, estimation and evaluation.
    pub seed: u64,
    pub system: SystemConfig,
    /// Hypothesis basis used for estimation.
    pub basis: BasisConfig,
    pub orthonormalize: bool,
    pub sim: SimConfig,
    pub als: AlsConfig,
    pub cluster: ClusterSettings,
    pub refine: RefineConfig,
    pub eval: EvalConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let basis = BasisConfig { family: Family::Fourier, lo: 0.0, hi: 6.0, k: 10 };
        PipelineConfig {
            seed: 0,
            system: SystemConfig {
                kind: SystemKind::Random,
                n_agents: 12,
                dim: 2,
                n_types: 3,
                a0: 0.25,
                seed: 0,
                basis: basis.clone(),
            },
            basis,
            orthonormalize: false,
            sim: SimConfig { n_traj: 64, n_steps: 1, dt: 0.1, sigma: 1e-4, ..Default::default() },
            als: AlsConfig { rank: 0, eps: 1e-8, max_iter: 500, regularize: false, restarts: 1 },
            cluster: ClusterSettings {
                q: QChoice::True,
                oracle: true,
                z0: None,
                theta0: 0.4,
                big_theta0: 0.2,
                q0: 2,
                n_max: 20,
                restarts: 10,
            },
            refine: RefineConfig { enabled: true, eps: 1e-8, max_iter: 100 },
            eval: EvalConfig { trajectory: true, traj_n_traj: 0, traj_n_steps: 0 },
        }
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    v.parse().map_err(|e| Error::Parse(format!("{key}: cannot parse '{v}': {e}")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Parse(format!("{key}: expected a boolean, got '{v}'"))),
    }
}

fn set_basis(b: &mut BasisConfig, field: &str, key: &str, v: &str) -> Result<bool> {
    match field {
        "family" => b.family = parse(key, v)?,
        "lo" => b.lo = parse(key, v)?,
        "hi" => b.hi = parse(key, v)?,
        "k" => b.k = parse(key, v)?,
        // Knot intervals for cubic splines.
        "knots" => b.k = parse::<usize>(key, v)? + 3,
        _ => return Ok(false),
    }
    Ok(true)
}

impl PipelineConfig {
    /// Sets one dotted key.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let v = v.trim();
        let known = match key {
            "seed" => {
                self.seed = parse(key, v)?;
                true
            }
            "orthonormalize" => {
                self.orthonormalize = parse_bool(key, v)?;
                true
            }
            _ => {
                let (sec, field) = key.split_once('.').unwrap_or(("", key));
                match sec {
                    "system" => match field {
                        "kind" => {
                            self.system.kind = parse(key, v)?;
                            true
                        }
                        "n_agents" => {
                            self.system.n_agents = parse(key, v)?;
                            true
                        }
                        "dim" => {
                            self.system.dim = parse(key, v)?;
                            true
                        }
                        "n_types" => {
                            self.system.n_types = parse(key, v)?;
                            true
                        }
                        "a0" => {
                            self.system.a0 = parse(key, v)?;
                            true
                        }
                        "seed" => {
                            self.system.seed = parse(key, v)?;
                            true
                        }
                        _ => match field.strip_prefix("basis.") {
                            Some(f) => set_basis(&mut self.system.basis, f, key, v)?,
                            None => false,
                        },
                    },
                    "basis" => set_basis(&mut self.basis, field, key, v)?,
                    "sim" => {
                        let s = &mut self.sim;
                        match field {
                            "n_traj" => s.n_traj = parse(key, v)?,
                            "n_steps" => s.n_steps = parse(key, v)?,
                            "dt" => s.dt = parse(key, v)?,
                            "sigma" => s.sigma = parse(key, v)?,
                            "sigma_obs" => s.sigma_obs = parse(key, v)?,
                            "init_low" => s.init_low = parse(key, v)?,
                            "init_high" => s.init_high = parse(key, v)?,
                            _ => return Err(unknown(key)),
                        }
                        true
                    }
                    "als" => {
                        let a = &mut self.als;
                        match field {
                            "rank" => a.rank = parse(key, v)?,
                            "eps" => a.eps = parse(key, v)?,
                            "max_iter" => a.max_iter = parse(key, v)?,
                            "regularize" => a.regularize = parse_bool(key, v)?,
                            "restarts" => a.restarts = parse(key, v)?,
                            _ => return Err(unknown(key)),
                        }
                        true
                    }
                    "cluster" => {
                        let c = &mut self.cluster;
                        match field {
                            "q" => c.q = parse(key, v)?,
                            "oracle" => c.oracle = parse_bool(key, v)?,
                            "z0" => c.z0 = if v == "auto" { None } else { Some(parse(key, v)?) },
                            "theta0" => c.theta0 = parse(key, v)?,
                            "big_theta0" => c.big_theta0 = parse(key, v)?,
                            "q0" => c.q0 = parse(key, v)?,
                            "n_max" => c.n_max = parse(key, v)?,
                            "restarts" => c.restarts = parse(key, v)?,
                            _ => return Err(unknown(key)),
                        }
                        true
                    }
                    "refine" => {
                        let r = &mut self.refine;
                        match field {
                            "enabled" => r.enabled = parse_bool(key, v)?,
                            "eps" => r.eps = parse(key, v)?,
                            "max_iter" => r.max_iter = parse(key, v)?,
                            _ => return Err(unknown(key)),
                        }
                        true
                    }
                    "eval" => {
                        let e = &mut self.eval;
                        match field {
                            "trajectory" => e.trajectory = parse_bool(key, v)?,
                            "traj_n_traj" => e.traj_n_traj = parse(key, v)?,
                            "traj_n_steps" => e.traj_n_steps = parse(key, v)?,
                            _ => return Err(unknown(key)),
                        }
                        true
                    }
                    _ => false,
                }
            }
        };
        if known {
            Ok(())
        } else {
            Err(unknown(key))
        }
    }

    /// Applies a config text on top of `self`.
    pub fn apply_str(&mut self, text: &str) -> Result<()> {
        let mut section = String::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(s) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                section = s.trim().to_string();
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("config line {}: expected key = value", n + 1)))?;
            let k = k.trim();
            let key = if section.is_empty() { k.to_string() } else { format!("{section}.{k}") };
            self.set(&key, v).map_err(|e| Error::Parse(format!("config line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn from_str_with_defaults(text: &str) -> Result<Self> {
        let mut c = PipelineConfig::default();
        c.apply_str(text)?;
        c.validate()?;
        Ok(c)
    }

    /// Rebuilds the configuration recorded in a run manifest, skipping the
    /// manifest's result entries.
    pub fn from_manifest(kv: &[(String, String)]) -> Result<Self> {
        let mut c = PipelineConfig::default();
        let keys: Vec<String> = c.to_key_values().into_iter().map(|(k, _)| k).collect();
        for (k, v) in kv {
            if keys.contains(k) {
                c.set(k, v)?;
            }
        }
        c.validate()?;
        Ok(c)
    }

    /// Every key with its current value, in a fixed order.
    pub fn to_key_values(&self) -> Vec<(String, String)> {
        let s = &self.system;
        let mut kv: Vec<(String, String)> = vec![
            ("seed".into(), self.seed.to_string()),
            ("system.kind".into(), s.kind.to_string()),
            ("system.n_agents".into(), s.n_agents.to_string()),
            ("system.dim".into(), s.dim.to_string()),
            ("system.n_types".into(), s.n_types.to_string()),
            ("system.a0".into(), s.a0.to_string()),
            ("system.seed".into(), s.seed.to_string()),
        ];
        for (pre, b) in [("system.basis", &s.basis), ("basis", &self.basis)] {
            kv.push((format!("{pre}.family"), b.family.to_string()));
            kv.push((format!("{pre}.lo"), b.lo.to_string()));
            kv.push((format!("{pre}.hi"), b.hi.to_string()));
            kv.push((format!("{pre}.k"), b.k.to_string()));
        }
        let sim = &self.sim;
        let a = &self.als;
        let c = &self.cluster;
        let r = &self.refine;
        let e = &self.eval;
        kv.extend([
            ("orthonormalize".into(), self.orthonormalize.to_string()),
            ("sim.n_traj".into(), sim.n_traj.to_string()),
            ("sim.n_steps".into(), sim.n_steps.to_string()),
            ("sim.dt".into(), sim.dt.to_string()),
            ("sim.sigma".into(), sim.sigma.to_string()),
            ("sim.sigma_obs".into(), sim.sigma_obs.to_string()),
            ("sim.init_low".into(), sim.init_low.to_string()),
            ("sim.init_high".into(), sim.init_high.to_string()),
            ("als.rank".into(), a.rank.to_string()),
            ("als.eps".into(), a.eps.to_string()),
            ("als.max_iter".into(), a.max_iter.to_string()),
            ("als.regularize".into(), a.regularize.to_string()),
            ("als.restarts".into(), a.restarts.to_string()),
            ("cluster.q".into(), c.q.to_string()),
            ("cluster.oracle".into(), c.oracle.to_string()),
            ("cluster.z0".into(), c.z0.map_or("auto".into(), |z| z.to_string())),
            ("cluster.theta0".into(), c.theta0.to_string()),
            ("cluster.big_theta0".into(), c.big_theta0.to_string()),
            ("cluster.q0".into(), c.q0.to_string()),
            ("cluster.n_max".into(), c.n_max.to_string()),
            ("cluster.restarts".into(), c.restarts.to_string()),
            ("refine.enabled".into(), r.enabled.to_string()),
            ("refine.eps".into(), r.eps.to_string()),
            ("refine.max_iter".into(), r.max_iter.to_string()),
            ("eval.trajectory".into(), e.trajectory.to_string()),
            ("eval.traj_n_traj".into(), e.traj_n_traj.to_string()),
            ("eval.traj_n_steps".into(), e.traj_n_steps.to_string()),
        ]);
        kv
    }

    pub fn to_text(&self) -> String {
        self.to_key_values().iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.system;
        crate::model::Dims::new(s.n_agents, s.dim, s.n_types, s.basis.k)?;
        if self.basis.k == 0 {
            return Err(Error::InvalidArgument("basis.k must be positive".into()));
        }
        if s.kind == SystemKind::Random && !(s.a0 > 0.0 && s.a0 <= 1.0) {
            return Err(Error::InvalidArgument("system.a0 must lie in (0, 1]".into()));
        }
        if s.kind == SystemKind::PredatorPrey && (s.n_agents != 10 || s.n_types != 4) {
            return Err(Error::InvalidArgument("predator_prey needs n_agents = 10 and n_types = 4".into()));
        }
        self.sim.validate()?;
        if self.als.max_iter == 0 || !(self.als.eps > 0.0) {
            return Err(Error::InvalidArgument("als.max_iter and als.eps must be positive".into()));
        }
        if self.cluster.restarts == 0 || self.cluster.n_max == 0 || self.cluster.q0 == 0 {
            return Err(Error::InvalidArgument("cluster.restarts, n_max and q0 must be positive".into()));
        }
        if self.refine.max_iter == 0 {
            return Err(Error::InvalidArgument("refine.max_iter must be positive".into()));
        }
        Ok(())
    }
}

fn unknown(key: &str) -> Error {
    Error::Parse(format!("unknown config key '{key}'"))
}
