//! Browser bindings for a small interactive demo: simulate a preset system,
//! run the full estimation pipeline on it, and plot the predator-prey kernels.

use std::fmt::Write;

use hetips::pipeline::run_pipeline;
use hetips::presets::{self, build_system, truth_basis};
use hetips::rng;
use hetips::simulate::{simulate_em, SimConfig};
use wasm_bindgen::prelude::wasm_bindgen;

fn json_num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:e}")
    } else {
        "null".into()
    }
}

fn json_str(s: &str) -> String {
    let mut out = String::from("\"");
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            c if (c as u32) < 0x20 => write!(out, "\\u{:04x}", c as u32).unwrap(),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

/// Runs a preset end to end and reports the errors of every stage as JSON.
pub fn pipeline_report(preset: &str, seed: u64) -> Result<String, String> {
    let mut cfg = presets::by_name(preset).map_err(|e| e.to_string())?;
    cfg.seed = seed;
    let run = run_pipeline(&cfg).map_err(|e| e.to_string())?;
    let stages: Vec<String> = run
        .reports
        .iter()
        .map(|r| {
            let e = &r.errors;
            format!(
                "{{\"name\":{},\"z_err_2inf\":{},\"z_err_fro\":{},\"type_err\":{},\"graph_err\":{},\"kernel_err\":{},\"traj_err\":{}}}",
                json_str(r.name),
                json_num(e.z_err_2inf),
                json_num(e.z_err_fro),
                json_num(e.type_err),
                json_num(e.graph_err),
                json_num(e.kernel_err_mean),
                json_num(e.traj_err)
            )
        })
        .collect();
    let failure = run.failure.as_ref().map_or("null".into(), |f| json_str(&f.to_string()));
    let q_hat = run.q_hat().map_or("null".into(), |q| q.to_string());
    Ok(format!(
        "{{\"preset\":{},\"seed\":{seed},\"q_act\":{},\"q_hat\":{q_hat},\"failure\":{failure},\"stages\":[{}]}}",
        json_str(preset),
        run.oracle.q_act,
        stages.join(",")
    ))
}

/// Positions of one simulated trajectory, flattened as `[step][agent][coord]`.
pub fn trajectory(preset: &str, seed: u64, steps: usize) -> Result<Vec<f64>, String> {
    let cfg = presets::by_name(preset).map_err(|e| e.to_string())?;
    let params = build_system(&cfg.system).map_err(|e| e.to_string())?;
    let basis = truth_basis(&cfg.system).map_err(|e| e.to_string())?;
    let sim = SimConfig { n_traj: 1, n_steps: steps.max(1), seed: rng::derive(seed, &[1]), ..cfg.sim };
    let batch = simulate_em(&params, &basis, &sim).map_err(|e| e.to_string())?;
    Ok(batch.states.iter().copied().collect())
}

/// Values of predator-prey kernel `q` at `samples` evenly spaced radii in
/// `[0, r_max]`.
pub fn kernel_curve(q: usize, r_max: f64, samples: usize) -> Vec<f64> {
    let n = samples.max(2);
    (0..n).map(|s| presets::predator_prey_kernel(q, r_max * s as f64 / (n - 1) as f64)).collect()
}

#[wasm_bindgen(js_name = pipelineReport)]
pub fn pipeline_report_js(preset: &str, seed: u64) -> Result<String, String> {
    pipeline_report(preset, seed)
}

#[wasm_bindgen(js_name = trajectory)]
pub fn trajectory_js(preset: &str, seed: u64, steps: usize) -> Result<Vec<f64>, String> {
    trajectory(preset, seed, steps)
}

#[wasm_bindgen(js_name = kernelCurve)]
pub fn kernel_curve_js(q: usize, r_max: f64, samples: usize) -> Vec<f64> {
    kernel_curve(q, r_max, samples)
}
