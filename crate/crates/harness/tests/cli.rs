use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn brwre(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_brwre"))
        .args(args)
        .current_dir(dir)
        .env_remove("BRWRE_WORKERS")
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn single(pmf: &str, moving: &str, extra: &str) -> String {
    format!(
        r#"{{"model": {{"states": [{{"probability": 1.0,
            "offspring": {{"family": "explicit_pmf", "pmf": {pmf}}},
            "moving": {moving}}}]}}{extra}}}"#
    )
}

const GAUSS: &str = r#"{"family": "gaussian", "mu": 0.0, "sigma": 1.0}"#;

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn validate_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let ok = write(d, "ok.json", &single("[0.0, 0.0, 1.0]", GAUSS, ""));
    let o = brwre(&["validate", ok.to_str().unwrap()], d);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));

    let critical = write(d, "crit.json", &single("[0.0, 1.0]", GAUSS, ""));
    let o = brwre(&["validate", critical.to_str().unwrap()], d);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("E ln m_0 = 0"), "{}", stdout(&o));

    let lattice = r#"{"family": "two_point", "x1": -1.0, "p": 0.5, "x2": 1.0}"#;
    let lat = write(d, "lat.json", &single("[0.0, 0.0, 1.0]", lattice, ""));
    let o = brwre(&["validate", lat.to_str().unwrap()], d);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("WARN lattice_moving_law"));

    let broken = write(d, "broken.json", "{\n  \"model\": {\"states\": [\n");
    let o = brwre(&["validate", broken.to_str().unwrap()], d);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line"));
}

#[test]
fn binary_tree_population_and_normalization() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = write(d, "c.json", &single("[0.0, 0.0, 1.0]", GAUSS, r#", "n_list": [10], "replicas": 2"#));
    let o = brwre(&["simulate", cfg.to_str().unwrap(), "--out", "run"], d);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let mut rdr = csv::Reader::from_path(d.join("run/martingales.csv")).unwrap();
    assert_eq!(
        rdr.headers().unwrap().iter().collect::<Vec<_>>(),
        ["replica", "n", "W_n", "N1", "N2", "N3", "Wbar_k", "N1bar_k", "N2bar_k", "N3bar_k", "population"]
    );
    let mut rows = 0;
    for rec in rdr.records() {
        let rec = rec.unwrap();
        let n: u32 = rec[1].parse().unwrap();
        assert_eq!(rec[10].parse::<u64>().unwrap(), 1 << n);
        assert!((rec[2].parse::<f64>().unwrap() - 1.0).abs() < 1e-12);
        rows += 1;
    }
    assert_eq!(rows, 2 * 11);
    let manifest = json(&d.join("run/simulate_manifest.json"));
    let stages = manifest["stages"].as_array().unwrap();
    assert!(!stages.is_empty());
    assert!(stages.iter().all(|s| s["records"].as_u64().unwrap() > 0));
    assert_eq!(manifest["replica_seeds"].as_array().unwrap().len(), 2);
}

#[test]
fn repeated_simulation_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = write(d, "c.json", &single("[0.1, 0.3, 0.6]", GAUSS, r#", "n_list": [9], "replicas": 2, "seed": 5"#));
    for out in ["a", "b"] {
        let o = brwre(&["simulate", cfg.to_str().unwrap(), "--out", out], d);
        assert_eq!(o.status.code(), Some(0));
    }
    for f in ["martingales.csv", "simulate_summary.json"] {
        assert_eq!(std::fs::read(d.join("a").join(f)).unwrap(), std::fs::read(d.join("b").join(f)).unwrap());
    }
    let o = brwre(&["simulate", cfg.to_str().unwrap(), "--out", "c", "--seed", "6"], d);
    assert_eq!(o.status.code(), Some(0));
    assert_ne!(
        std::fs::read(d.join("a/martingales.csv")).unwrap(),
        std::fs::read(d.join("c/martingales.csv")).unwrap()
    );
    let (ha, hc) = (json(&d.join("a/simulate_manifest.json")), json(&d.join("c/simulate_manifest.json")));
    assert_ne!(ha["config_hash"], hc["config_hash"]);
}

#[test]
fn capped_majority_is_advisory() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = write(
        d,
        "c.json",
        &single("[0.0, 0.0, 1.0]", GAUSS, r#", "n_list": [12], "replicas": 3, "particle_cap": 100"#),
    );
    let o = brwre(&["simulate", cfg.to_str().unwrap(), "--out", "run"], d);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("particle cap"));
    assert_eq!(json(&d.join("run/simulate_summary.json"))["capped"], 3);
}

#[test]
fn workers_variable_overrides_flag() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = write(d, "c.json", &single("[0.0, 0.5, 0.5]", GAUSS, r#", "n_list": [6], "replicas": 2"#));
    let o = Command::new(env!("CARGO_BIN_EXE_brwre"))
        .args(["simulate", cfg.to_str().unwrap(), "--out", "run", "--workers", "5"])
        .current_dir(d)
        .env("BRWRE_WORKERS", "2")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(json(&d.join("run/simulate_manifest.json"))["workers"], 2);
    let o = brwre(&["simulate", cfg.to_str().unwrap(), "--out", "run", "--workers", "5"], d);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(json(&d.join("run/simulate_manifest.json"))["workers"], 5);
}

#[test]
fn selftest_passes_and_detects_a_corrupted_q2() {
    let dir = tempfile::tempdir().unwrap();
    let o = brwre(&["selftest"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(!stdout(&o).contains("FAIL"));
    let o = brwre(&["selftest", "--inject-fault", "q2"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("FAIL generic_vs_closed_q"));
}

#[test]
fn verify_edgeworth_writes_csv_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let uniform = r#"{"family": "uniform", "a": -1.0, "b": 1.0}"#;
    let cfg = write(
        d,
        "c.json",
        &single("[0.0, 0.0, 1.0]", uniform, r#", "edgeworth_study": {"lengths": [8, 16], "environments": 1}"#),
    );
    let o = brwre(&["verify-edgeworth", cfg.to_str().unwrap(), "--out", "ew"], d);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let text = std::fs::read_to_string(d.join("ew/edgeworth.csv")).unwrap();
    assert!(text.starts_with("env,L,x,oracle,oracle_band,phi,ew3,ew4,ew5\n"));
    assert_eq!(text.lines().count(), 1 + 2 * 25);
    let summary = json(&d.join("ew/edgeworth_summary.json"));
    assert_eq!(summary["passed"], true);
    assert_eq!(summary["windows"].as_array().unwrap().len(), 2);
}
