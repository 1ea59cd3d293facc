use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn shelab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_shelab"))
        .args(args)
        .env_remove("SHELAB_THREADS")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("run.toml");
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

const MINIMAL: &str = "seed = 5\npaths = 10\n\n[solver]\nnx = 15\nhorizon = 0.01\nsnapshot_every = 10\n";

#[test]
fn simulate_writes_records_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), MINIMAL);
    let out = tmp.path().join("run");
    let o = shelab(&["simulate", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read_dir(out.join("trajectories")).unwrap().count(), 10);
    assert_eq!(fs::read_dir(out.join("hits")).unwrap().count(), 10);
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 5);
    assert_eq!(manifest["config"]["solver"]["nx"], 15);
    assert_eq!(manifest["outputs"].as_array().unwrap().len(), 21);
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 11);
}

#[test]
fn same_seed_gives_identical_csvs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), MINIMAL);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert!(shelab(&["simulate", "--config", &cfg, "--out", a.to_str().unwrap()]).status.success());
    assert!(shelab(&["simulate", "--config", &cfg, "--out", b.to_str().unwrap(), "--threads", "1"]).status.success());
    for rel in ["summary.csv", "trajectories/traj_00003.csv", "hits/hits_00007.csv"] {
        assert_eq!(fs::read(a.join(rel)).unwrap(), fs::read(b.join(rel)).unwrap(), "{rel}");
    }
}

#[test]
fn cfl_violation_exits_two_with_line() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "[solver]\nnx = 15\ndt_factor = 0.75\n");
    let o = shelab(&["simulate", "--config", &cfg, "--out", tmp.path().join("x").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 3") && err.contains("CFL"), "{err}");
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(shelab(&["verify", "nonsense"]).status.code(), Some(2));
    assert_eq!(shelab(&["frobnicate"]).status.code(), Some(2));
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "[sweep]\ngammas = []\n");
    assert_eq!(shelab(&["sweep-gamma", "--config", &cfg]).status.code(), Some(2));
}

#[test]
fn sweep_gamma_single_exponent() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), MINIMAL);
    let out = tmp.path().join("sweep");
    let o = shelab(&[
        "sweep-gamma", "--config", &cfg, "--out", out.to_str().unwrap(), "--gammas", "2.0", "--levels", "1.5,3",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("sweep_gamma.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows[0], shelab::experiments::SWEEP_CSV_HEADER);
    assert_eq!(rows.len(), 3);
    assert!(rows[1].starts_with("2,1.5,10,"));
}

#[test]
fn verify_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let o = shelab(&["verify", "gw", "--paths", "2000", "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let verdict: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("verify_gw.json")).unwrap()).unwrap();
    assert_eq!(verdict[0]["checks"][0]["passed"], true);
    let o = shelab(&["verify", "gw", "--paths", "2000", "--negative-control"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL"));
}

#[test]
fn gw_and_ruin_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "paths = 2000\n[gw]\npoints = [[2.0, 10.0, 1.0]]\ntrees = 500\n");
    let out = tmp.path().join("o");
    assert!(shelab(&["gw", "--config", &cfg, "--out", out.to_str().unwrap()]).status.success());
    let gw = fs::read_to_string(out.join("gw_sweep.csv")).unwrap();
    assert_eq!(gw.lines().count(), 2);
    let o = shelab(&["ruin", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    assert_eq!(fs::read_to_string(out.join("ruin.csv")).unwrap().lines().count(), 4);
}
