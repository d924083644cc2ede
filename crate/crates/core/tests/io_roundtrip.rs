use std::fs;

use hetips::config::PipelineConfig;
use hetips::experiment::{run_experiment, ExperimentKind, ExperimentSpec};
use hetips::io::{self, TrajectoryMeta};
use hetips::model::TypeMatrix;
use hetips::pipeline::{manifest, run_pipeline, write_run};
use hetips::presets;
use hetips::simulate::simulate_em;
use nalgebra::DMatrix;
use proptest::prelude::*;

proptest! {
    #[test]
    fn matrix_csv_is_exact(rows in 1usize..6, cols in 1usize..6, vals in prop::collection::vec(any::<f64>(), 36)) {
        let vals: Vec<f64> = vals.into_iter().map(|v| if v.is_finite() { v } else { 0.5 }).collect();
        let m = DMatrix::from_fn(rows, cols, |i, j| vals[i * cols + j]);
        let back = io::matrix_from_csv(&io::matrix_to_csv(&m)).unwrap();
        prop_assert_eq!(back, m);
    }

    #[test]
    fn type_matrix_csv_roundtrips(n in 2usize..8, labels in prop::collection::vec(0usize..5, 56)) {
        let k = TypeMatrix::from_pair_labels(n, &labels[..n * (n - 1)]);
        let back = io::type_matrix_from_csv(&io::type_matrix_to_csv(&k)).unwrap();
        prop_assert_eq!(back.pair_labels(), k.pair_labels());
    }
}

#[test]
fn trajectories_roundtrip_through_files() {
    let cfg = presets::predator_prey();
    let params = presets::build_system(&cfg.system).unwrap();
    let basis = presets::truth_basis(&cfg.system).unwrap();
    let sim = hetips::simulate::SimConfig { n_traj: 3, n_steps: 4, ..cfg.sim.clone() };
    let batch = simulate_em(&params, &basis, &sim).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("traj.csv");
    let meta = TrajectoryMeta { dt: sim.dt, sigma: sim.sigma, sigma_obs: sim.sigma_obs, seed: sim.seed };
    io::write_trajectories(&path, &batch, &meta).unwrap();
    let (back, meta_back) = io::read_trajectories(&path).unwrap();
    assert_eq!(meta_back, meta);
    assert_eq!(back.states, batch.states);
    assert_eq!(back.velocities, batch.velocities);
}

#[test]
fn truncated_trajectory_csv_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.csv");
    fs::write(&path, "m,l,i,coord,value\n0,0,0,0,1.0\n").unwrap();
    fs::write(
        io::sidecar_path(&path),
        "dt=0.1\nsigma=0\nsigma_obs=0\nseed=0\nn_traj=1\nn_steps=1\nn_agents=2\ndim=1\n",
    )
    .unwrap();
    assert!(io::read_trajectories(&path).is_err());
}

#[test]
fn config_text_and_manifest_roundtrip() {
    for name in presets::PRESET_NAMES {
        let cfg = presets::by_name(name).unwrap();
        assert_eq!(PipelineConfig::from_str_with_defaults(&cfg.to_text()).unwrap(), cfg, "{name}");
        let mut kv = vec![("version".to_string(), "0".to_string()), ("cluster.q_hat".to_string(), "3".to_string())];
        kv.extend(cfg.to_key_values());
        assert_eq!(PipelineConfig::from_manifest(&kv).unwrap(), cfg, "{name}");
    }
}

#[test]
fn sections_and_comments_in_config_text() {
    let cfg =
        PipelineConfig::from_str_with_defaults("# comment\nseed = 4\n[sim]\nn_traj = 7 # inline\n[basis]\nknots = 5\n")
            .unwrap();
    assert_eq!(cfg.seed, 4);
    assert_eq!(cfg.sim.n_traj, 7);
    assert_eq!(cfg.basis.k, 8);
    assert!(PipelineConfig::from_str_with_defaults("sim.nope = 1\n").is_err());
}

#[test]
fn pipeline_outputs_are_reproducible() {
    let mut cfg = presets::noiseless();
    cfg.sim.sigma = 1e-3;
    cfg.seed = 21;
    let (a, b) = (run_pipeline(&cfg).unwrap(), run_pipeline(&cfg).unwrap());
    assert_eq!(manifest(&cfg, &a), manifest(&cfg, &b));
    let dir = tempfile::tempdir().unwrap();
    write_run(&dir.path().join("a"), &cfg, &a).unwrap();
    let kv = io::read_key_values(&dir.path().join("a/manifest.txt")).unwrap();
    let again = PipelineConfig::from_manifest(&kv).unwrap();
    assert_eq!(again, cfg);
    write_run(&dir.path().join("b"), &again, &run_pipeline(&again).unwrap()).unwrap();
    for f in ["errors.csv", "manifest.txt", "z_hat.csv", "a_hat.csv", "c_hat.csv", "kappa_hat.csv"] {
        let read = |d: &str| fs::read_to_string(dir.path().join(d).join(f)).unwrap();
        assert_eq!(read("a"), read("b"), "{f}");
    }
}

#[test]
fn experiment_manifest_restores_the_sweep() {
    let spec = ExperimentSpec { sweep: vec![12, 20], reps: 2, ..ExperimentSpec::desk(ExperimentKind::ConvergenceM) };
    let mut base = presets::noiseless();
    base.sim.sigma = 1e-3;
    let dir = tempfile::tempdir().unwrap();
    let first = run_experiment(&spec, &base, None).unwrap();
    first.write(dir.path(), &base).unwrap();
    let kv = io::read_key_values(&dir.path().join("manifest.txt")).unwrap();
    assert_eq!(ExperimentSpec::from_manifest(&kv).unwrap(), Some(spec.clone()));
    assert_eq!(PipelineConfig::from_manifest(&kv).unwrap(), base);
    let second = run_experiment(&spec, &base, None).unwrap();
    assert_eq!(first.rows_csv(None), second.rows_csv(None));
    assert_eq!(first.summary_csv(None), second.summary_csv(None));
    assert!(ExperimentSpec::from_manifest(&[("seed".into(), "1".into())]).unwrap().is_none());
}
