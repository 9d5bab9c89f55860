use std::path::Path;
use std::process::{Command, Output};

use agdiff::config::{parse_config, parse_config_str, ConfigError, InitialSpec};
use agdiff::runs;
use agdiff_core::dynamics::Method;
use agdiff_core::{GridDensity, KernelSpec, TorusDomain};

const UNIFORM: &str = "domain.L = 4\nkernel.kind = double_yukawa\nkernel.beta = 2\nphi.m = 2\n\
                       initial.kind = uniform\nn_particles = 64\nintegrator.t_end = 0.1\noutputs.grid = 64\n";

const HAT: &str = "domain.L = 8\nkernel.kind = zero\nphi.m = 2\ninitial.kind = hat\ninitial.width = 1\n\
                   n_particles = 64\nintegrator.t_end = 0.05\noutputs.sample_every = 0.005\noutputs.grid = 128\n";

fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn agdiff(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_agdiff")).args(args).env("AGDIFF_THREADS", "1").output().unwrap()
}

#[test]
fn minimal_config_gets_documented_defaults() {
    let c = parse_config_str(UNIFORM, Path::new("/tmp/x")).unwrap();
    assert_eq!(c.integrator.method, Method::Rk4);
    assert_eq!(c.integrator.safety, 0.2);
    assert!((c.sample_every() - 0.1 / 100.0).abs() < 1e-18);
    assert_eq!(c.vacuum_floor, 0.0);
    assert_eq!(c.domain.mass(), 1.0);
    assert_eq!(c.min_time, 0.1);
    assert_eq!(c.outputs.dir, Path::new("/tmp/x/out"));
}

#[test]
fn missing_beta_is_named() {
    let text = UNIFORM.replace("kernel.beta = 2\n", "");
    let err = parse_config_str(&text, Path::new("")).unwrap_err();
    assert!(matches!(&err, ConfigError::Missing { key, .. } if key == "kernel.beta"));
    assert!(err.to_string().contains("kernel.beta"));
}

#[test]
fn sublinear_exponent_cites_the_requirement() {
    let err = parse_config_str(&UNIFORM.replace("phi.m = 2", "phi.m = 0.5"), Path::new("")).unwrap_err();
    assert!(err.to_string().contains("m >= 1"), "{err}");
}

#[test]
fn unknown_and_unused_keys_are_errors() {
    let err = parse_config_str(&format!("{UNIFORM}outputs.colour = red\n"), Path::new("")).unwrap_err();
    assert!(matches!(err, ConfigError::UnknownKey(k) if k == "outputs.colour"));
    // a hat width means nothing to a uniform datum
    let err = parse_config_str(&format!("{UNIFORM}initial.width = 1\n"), Path::new("")).unwrap_err();
    assert!(matches!(err, ConfigError::UnknownKey(k) if k == "initial.width"));
}

#[test]
fn json_and_flat_configs_agree() {
    let json = r#"{"domain": {"L": 4}, "kernel": {"kind": "double_yukawa", "beta": 2}, "phi": {"m": 2},
                   "initial": {"kind": "uniform"}, "n_particles": 64, "integrator": {"t_end": 0.1},
                   "outputs": {"grid": 64}}"#;
    let dir = tempfile::tempdir().unwrap();
    let a = parse_config(&write(dir.path(), "a.json", json)).unwrap();
    let b = parse_config(&write(dir.path(), "b.cfg", UNIFORM)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn simulate_uniform_is_stationary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "u.cfg", UNIFORM);
    let out = agdiff(&["simulate", cfg.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("out/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["termination"], "completed");
    assert_eq!(summary["inequality_violations"], 0);
    let (e0, e1) = (summary["energy_initial"].as_f64().unwrap(), summary["energy_final"].as_f64().unwrap());
    assert!((e0 - e1).abs() <= 1e-10, "{e0} vs {e1}");
    let final_state = GridDensity::read_csv(&dir.path().join("out/final_state.csv")).unwrap();
    assert_eq!(final_state.cell_count(), 64);
    let diag = std::fs::read_to_string(dir.path().join("out/diagnostics.csv")).unwrap();
    assert_eq!(diag.lines().count(), 1 + 101);
}

#[test]
fn pure_diffusion_energy_column_decreases() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = parse_config(&write(dir.path(), "h.cfg", HAT)).unwrap();
    let out = runs::run_simulate(&cfg).unwrap();
    assert!(out.ok);
    let rows = &out.trajectory.rows;
    assert!(rows.windows(2).all(|w| w[1].energy < w[0].energy));
}

#[test]
fn collapse_before_min_time_fails_the_run() {
    // a huge gap floor forces an immediate collapse
    let dir = tempfile::tempdir().unwrap();
    let text = format!("{HAT}integrator.min_gap_floor = 0.1\nintegrator.max_retries = 1\n");
    let cfg = write(dir.path(), "c.cfg", &text);
    let out = agdiff(&["simulate", cfg.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("minimum time"));
}

#[test]
fn validate_accepts_default_and_linear_diffusion() {
    let dir = tempfile::tempdir().unwrap();
    let ok = agdiff(&["validate", write(dir.path(), "a.cfg", UNIFORM).to_str().unwrap()]);
    assert!(ok.status.success(), "{}", String::from_utf8_lossy(&ok.stdout));
    let linear = agdiff(&["validate", write(dir.path(), "b.cfg", &UNIFORM.replace("phi.m = 2", "phi.m = 1")).to_str().unwrap()]);
    assert!(linear.status.success());
    assert!(String::from_utf8_lossy(&linear.stderr).contains("warning"));
}

#[test]
fn validate_rejects_an_asymmetric_table() {
    let dir = tempfile::tempdir().unwrap();
    let text = UNIFORM.replace(
        "kernel.kind = double_yukawa\nkernel.beta = 2\n",
        "kernel.kind = tabulated\nkernel.nodes = -2,-1,0,1,2\nkernel.values = 0,0.5,1,0.4,0\n",
    );
    let out = agdiff(&["validate", write(dir.path(), "t.cfg", &text).to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("k1_symmetry") && stdout.contains("witness"), "{stdout}");
}

#[test]
fn file_datum_is_renormalized_and_floored() {
    let dir = tempfile::tempdir().unwrap();
    let d = TorusDomain::new(4.0, 1.0).unwrap();
    let mut vals = vec![0.0; 16];
    vals[6..10].fill(1.0);
    GridDensity::new(d, vals).unwrap().write_csv(&dir.path().join("rho.csv")).unwrap();
    let text = UNIFORM
        .replace("initial.kind = uniform", "initial.kind = from_file\ninitial.path = rho.csv\ninitial.vacuum_floor = 0.1")
        .replace("domain.L = 4", "domain.L = 4\ndomain.mass = 0.5");
    let cfg = parse_config(&write(dir.path(), "f.cfg", &text)).unwrap();
    assert!(matches!(cfg.initial, InitialSpec::FromFile { .. }));
    let datum = agdiff::datum::build_datum(&cfg).unwrap();
    let g = datum.to_grid(16).unwrap();
    assert!((g.mass() - 0.5).abs() < 1e-12);
    assert!((g.min() - 0.1 * 0.5 / 1.4).abs() < 1e-12);
}

#[test]
fn sweep_arguments_are_checked() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = parse_config(&write(dir.path(), "h.cfg", HAT)).unwrap();
    assert!(runs::run_sweep_n(&cfg, &[64, 128], 1024).is_err());
    assert!(runs::run_sweep_n(&cfg, &[16, 64, 128], 1024).is_err());
    assert!(runs::run_sweep_n(&cfg, &[32, 64, 128], 1000).is_err());
    assert!(runs::run_sweep_domain(&cfg, &[16.0, 8.0]).is_err());
    assert!(runs::run_sweep_positivity(&cfg, &[1e-3, 1e-2]).is_err());
}

#[test]
fn identical_floors_give_zero_differences() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = parse_config(&write(dir.path(), "h.cfg", HAT)).unwrap();
    let t = runs::run_sweep_positivity(&cfg, &[1e-2, 1e-2, 1e-2]).unwrap();
    assert!(t.rows.iter().filter_map(|r| r.l1_diff_prev).all(|d| d == 0.0));
    assert!(dir.path().join("out/sweep_positivity.csv").exists());
}

#[test]
fn zero_kernel_compact_datum_domain_sweep_is_seam_free() {
    let dir = tempfile::tempdir().unwrap();
    let text = HAT.replace("n_particles = 64", "n_particles = 32");
    let cfg = parse_config(&write(dir.path(), "h.cfg", &text)).unwrap();
    let t = runs::run_sweep_domain(&cfg, &[8.0, 16.0]).unwrap();
    assert!(t.rows.iter().all(|r| !r.seam_flag));
    assert_eq!(t.rows[1].n, 64);
    assert!((t.rows[1].mass - 1.0).abs() < 1e-12);
}

#[test]
fn oracle_writes_reference_snapshots() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "h.cfg", &HAT.replace("outputs.sample_every = 0.005", "outputs.sample_every = 0.025"));
    let out = agdiff(&["oracle", cfg.to_str().unwrap(), "--m", "256"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for t in ["0", "0.025", "0.05"] {
        let g = GridDensity::read_csv(&dir.path().join(format!("out/ref_t{t}.csv"))).unwrap();
        assert!((g.mass() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn tabulated_kernel_round_trips_through_config() {
    let text = UNIFORM.replace(
        "kernel.kind = double_yukawa\nkernel.beta = 2\n",
        "kernel.kind = tabulated\nkernel.nodes = 0,1,2\nkernel.values = 1,0.25,0\n",
    );
    let c = parse_config_str(&text, Path::new("")).unwrap();
    assert_eq!(c.kernel, KernelSpec::Tabulated { nodes: vec![0.0, 1.0, 2.0], values: vec![1.0, 0.25, 0.0] });
}
