//! Plain-text formats: matrix CSV, integer type CSV, trajectory CSV with a
//! `key=value` sidecar, and `key=value` manifests.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use ndarray::Array4;

use crate::error::{Error, Result};
use crate::model::TypeMatrix;
use crate::simulate::TrajectoryBatch;

fn parse_err(what: &str, line: usize, detail: impl std::fmt::Display) -> Error {
    Error::Parse(format!("{what}, line {line}: {detail}"))
}

/// Shortest-roundtrip-safe decimal with 17 significant digits.
pub fn fmt_real(v: f64) -> String {
    format!("{v:.16e}")
}

/// Lines that are neither blank nor `#` comments, with 1-based line numbers.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().map(|(n, l)| (n + 1, l.trim())).filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

pub fn matrix_to_csv(m: &DMatrix<f64>) -> String {
    let mut s = String::new();
    for r in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|c| fmt_real(m[(r, c)])).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

pub fn matrix_from_csv(text: &str) -> Result<DMatrix<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (ln, line) in content_lines(text) {
        let row = line
            .split(',')
            .map(|t| t.trim().parse::<f64>().map_err(|e| parse_err("matrix", ln, e)))
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(parse_err("matrix", ln, format!("expected {} columns, got {}", first.len(), row.len())));
            }
        }
        rows.push(row);
    }
    let nc = rows.first().map_or(0, |r| r.len());
    Ok(DMatrix::from_fn(rows.len(), nc, |r, c| rows[r][c]))
}

pub fn type_matrix_to_csv(k: &TypeMatrix) -> String {
    let n = k.n();
    let mut s = String::new();
    for i in 0..n {
        let row: Vec<String> = (0..n).map(|j| k.get(i, j).to_string()).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

pub fn type_matrix_from_csv(text: &str) -> Result<TypeMatrix> {
    let mut rows = Vec::new();
    for (ln, line) in content_lines(text) {
        let row = line
            .split(',')
            .map(|t| t.trim().parse::<usize>().map_err(|e| parse_err("type matrix", ln, e)))
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    TypeMatrix::from_rows(&rows)
}

pub fn write_matrix(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    Ok(fs::write(path, matrix_to_csv(m))?)
}

pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    matrix_from_csv(&fs::read_to_string(path)?)
}

pub fn write_type_matrix(path: &Path, k: &TypeMatrix) -> Result<()> {
    Ok(fs::write(path, type_matrix_to_csv(k))?)
}

pub fn read_type_matrix(path: &Path) -> Result<TypeMatrix> {
    type_matrix_from_csv(&fs::read_to_string(path)?)
}

/// Ordered `key=value` pairs.
pub type KeyValues = Vec<(String, String)>;

pub fn key_values_to_string(kv: &[(String, String)]) -> String {
    kv.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
}

pub fn key_values_from_str(text: &str) -> Result<KeyValues> {
    content_lines(text)
        .map(|(ln, line)| {
            let (k, v) = line.split_once('=').ok_or_else(|| parse_err("key=value", ln, "missing '='"))?;
            Ok((k.trim().to_string(), v.trim().to_string()))
        })
        .collect()
}

pub fn write_key_values(path: &Path, kv: &[(String, String)]) -> Result<()> {
    Ok(fs::write(path, key_values_to_string(kv))?)
}

pub fn read_key_values(path: &Path) -> Result<KeyValues> {
    key_values_from_str(&fs::read_to_string(path)?)
}

pub fn lookup<'a>(kv: &'a [(String, String)], key: &str) -> Option<&'a str> {
    kv.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
}

/// Metadata stored next to a trajectory CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryMeta {
    pub dt: f64,
    pub sigma: f64,
    pub sigma_obs: f64,
    pub seed: u64,
}

impl TrajectoryMeta {
    fn to_kv(&self, batch: &TrajectoryBatch) -> KeyValues {
        vec![
            ("dt".into(), fmt_real(self.dt)),
            ("sigma".into(), fmt_real(self.sigma)),
            ("sigma_obs".into(), fmt_real(self.sigma_obs)),
            ("seed".into(), self.seed.to_string()),
            ("n_traj".into(), batch.n_traj().to_string()),
            ("n_steps".into(), batch.n_steps().to_string()),
            ("n_agents".into(), batch.n_agents().to_string()),
            ("dim".into(), batch.dim().to_string()),
        ]
    }
}

/// Sidecar path: `traj.csv` -> `traj.meta`.
pub fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("meta")
}

pub fn trajectories_to_csv(batch: &TrajectoryBatch) -> String {
    let (m, l1, n, d) = batch.states.dim();
    let mut s = String::with_capacity(m * l1 * n * d * 32);
    s.push_str("m,l,i,coord,value\n");
    for mm in 0..m {
        for l in 0..l1 {
            for i in 0..n {
                for c in 0..d {
                    s.push_str(&format!("{mm},{l},{i},{c},{}\n", fmt_real(batch.states[[mm, l, i, c]])));
                }
            }
        }
    }
    s
}

pub fn write_trajectories(path: &Path, batch: &TrajectoryBatch, meta: &TrajectoryMeta) -> Result<()> {
    fs::write(path, trajectories_to_csv(batch))?;
    write_key_values(&sidecar_path(path), &meta.to_kv(batch))
}

fn get_parsed<T: std::str::FromStr>(kv: &[(String, String)], key: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    let v = lookup(kv, key).ok_or_else(|| Error::Parse(format!("trajectory metadata lacks '{key}'")))?;
    v.parse().map_err(|e| Error::Parse(format!("trajectory metadata '{key}': {e}")))
}

/// Parses a trajectory CSV given its sidecar metadata.
pub fn trajectories_from_csv(text: &str, kv: &[(String, String)]) -> Result<(TrajectoryBatch, TrajectoryMeta)> {
    let meta = TrajectoryMeta {
        dt: get_parsed(kv, "dt")?,
        sigma: get_parsed(kv, "sigma")?,
        sigma_obs: get_parsed(kv, "sigma_obs")?,
        seed: get_parsed(kv, "seed")?,
    };
    let shape: (usize, usize, usize, usize) = (
        get_parsed(kv, "n_traj")?,
        get_parsed::<usize>(kv, "n_steps")? + 1,
        get_parsed(kv, "n_agents")?,
        get_parsed(kv, "dim")?,
    );
    let mut states = Array4::from_elem(shape, f64::NAN);
    let mut lines = content_lines(text);
    match lines.next() {
        Some((_, h)) if h.replace(' ', "") == "m,l,i,coord,value" => {}
        _ => return Err(Error::Parse("trajectory CSV must start with header m,l,i,coord,value".into())),
    }
    for (ln, line) in lines {
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 5 {
            return Err(parse_err("trajectory", ln, "expected 5 fields"));
        }
        let idx = |t: &str| t.parse::<usize>().map_err(|e| parse_err("trajectory", ln, e));
        let (m, l, i, c) = (idx(f[0])?, idx(f[1])?, idx(f[2])?, idx(f[3])?);
        let v: f64 = f[4].parse().map_err(|e| parse_err("trajectory", ln, e))?;
        let slot = states.get_mut([m, l, i, c]).ok_or_else(|| parse_err("trajectory", ln, "index out of range"))?;
        *slot = v;
    }
    if states.iter().any(|v| v.is_nan()) {
        return Err(Error::Parse("trajectory CSV does not cover every (m, l, i, coord)".into()));
    }
    Ok((TrajectoryBatch::from_states(states, meta.dt)?, meta))
}

pub fn read_trajectories(path: &Path) -> Result<(TrajectoryBatch, TrajectoryMeta)> {
    let kv = read_key_values(&sidecar_path(path))?;
    trajectories_from_csv(&fs::read_to_string(path)?, &kv)
}

/// A CSV table with a manifest reference comment and a header row.
pub fn table_to_csv(manifest: Option<&str>, header: &str, rows: &[String]) -> String {
    let mut s = String::new();
    if let Some(m) = manifest {
        s.push_str(&format!("# manifest={m}\n"));
    }
    s.push_str(header);
    s.push('\n');
    for r in rows {
        s.push_str(r);
        s.push('\n');
    }
    s
}
