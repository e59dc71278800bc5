use std::path::Path;
use std::process::{Command, Output};

fn tfim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tfim")).args(args).output().expect("run tfim")
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

#[test]
fn missing_key_exits_2_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let out = tfim(&["verify", "ed", "--graph", "path:2", "--beta", "1", "--h", "0.3", "--out-dir", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("`lambda`"));
}

#[test]
fn bad_value_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = tfim(&["dynamics", "--graph", "torus:3", "--beta", "1", "--lambda", "1", "--h", "0", "--t-end", "1", "--out-dir", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("`graph`"));
}

#[test]
fn verify_ed_from_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("two_site.cfg");
    std::fs::write(&cfg, "graph = \"path:2\"\nbeta = 1.0\nlambda = 0.7\nh = 0.3\nn_samples = 20000\nseed = 5\n").unwrap();
    let out_dir = dir.path().join("out");
    let out = tfim(&["verify", "ed", "--config", cfg.to_str().unwrap(), "--out-dir", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("szsz_0_1") && stdout.contains("PASS"));
    let csv = read(&out_dir, "ed_check.csv");
    assert!(csv.starts_with("# schema_version: 1\nobservable,exact,estimate,se,z,n_eff\n"));
    let manifest: serde_json::Value = serde_json::from_str(&read(&out_dir, "manifest.json")).unwrap();
    assert_eq!(manifest["seed"], 5);
    assert_eq!(manifest["config"]["burn_in"], "50");
    assert!(manifest["wall_time_seconds"].is_number());
}

#[test]
fn flags_override_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.cfg");
    std::fs::write(&cfg, "beta = 1.0\nn_samples = 2000\npoints = \"0.4:0.6\"\n").unwrap();
    let out_dir = dir.path().join("out");
    let out = tfim(&["verify", "single-site", "--config", cfg.to_str().unwrap(), "--beta", "2", "--out-dir", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let manifest: serde_json::Value = serde_json::from_str(&read(&out_dir, "manifest.json")).unwrap();
    assert_eq!(manifest["config"]["beta"], "2");
}

fn dynamics_run(dir: &Path, seed: &str, mode: &str) -> String {
    let out = tfim(&[
        "dynamics", "--graph", "tree:2:2", "--beta", "1", "--lambda", "1", "--h", "0", "--t-end", "2", "--replicas", "4",
        "--mode", mode, "--grid-n", "4", "--schedule", "0@subtree:1;1@full", "--seed", seed, "--threads", "2",
        "--out-dir", dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    read(dir, "dynamics.csv")
}

#[test]
fn dynamics_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    for mode in ["continuum", "grid"] {
        let a = dynamics_run(&dir.path().join("a"), "11", mode);
        let b = dynamics_run(&dir.path().join("b"), "11", mode);
        let c = dynamics_run(&dir.path().join("c"), "12", mode);
        assert!(a.starts_with("# schema_version: 1\ntime,site,statistic,value\n"));
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}

#[test]
fn censoring_passes_on_small_grid() {
    let dir = tempfile::tempdir().unwrap();
    let out = tfim(&[
        "verify", "censoring", "--graph", "path:2", "--beta", "1", "--lambda", "1", "--h", "0.2", "--grid-n", "4",
        "--schedule-a", "0@sites:0;0.5@full", "--schedule-b", "full", "--times", "0.25,0.5,1,2",
        "--out-dir", dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    assert!(!read(dir.path(), "censoring.csv").contains("false"));
}

#[test]
fn cavity_plus_boundary_kappa() {
    let dir = tempfile::tempdir().unwrap();
    let out = tfim(&["cavity", "--b", "2", "--grid-n", "8", "--kmax", "2", "--out-dir", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let s: serde_json::Value = serde_json::from_str(&read(dir.path(), "cavity.json")).unwrap();
    assert!(s["kappa_hat"].as_f64().unwrap() <= 0.575);
    assert_eq!(s["schema_version"], 1);
    assert!(s["dk_norms"].as_array().unwrap().len() == 3);
    assert!(!s["nu_convergence"].as_array().unwrap().is_empty());
}

#[test]
fn gap_scan_and_kappa_mc_run() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let out = tfim(&["gap-scan", "--depths", "1,2", "--beta", "1", "--lambda", "1", "--h", "0", "--t-total", "200", "--replicas", "2", "--out-dir", d]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(read(dir.path(), "gap_scan.csv").contains("depth,tau,se,n_samples,min_len_over_tau"));
    let out = tfim(&["kappa-mc", "--depth", "3", "--n-samples", "500", "--out-dir", d]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(read(dir.path(), "kappa_mc.json").contains("kappa_hat"));
}
