use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn exclab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_exclab")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("config.toml");
    std::fs::write(&path, text).unwrap();
    path
}

fn run_config(text: &str, extra: &[&str]) -> (Output, PathBuf, tempfile::TempDir) {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), text);
    let out_dir = tmp.path().join("out");
    let mut args = vec!["run", cfg.to_str().unwrap(), "--output-dir", out_dir.to_str().unwrap()];
    args.extend_from_slice(extra);
    (exclab(&args), out_dir, tmp)
}

fn read_summary(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap()
}

const KINDS: [&str; 9] = [
    "simulate",
    "duality",
    "infinitesimal",
    "derivative",
    "green",
    "cesaro",
    "potential",
    "stationarity",
    "oracle-compare",
];

const DUALITY_20: &str = r#"
seed = 21
replicas = 100000

[graph]
family = "path"
sides = [20]
base_rate = 1.0

[measure]
type = "bernoulli"
rho = 0.5

[experiment]
kind = "duality"
horizon = 2.0
cylinder = [9, 10]
"#;

#[test]
fn list_names_every_kind() {
    let out = exclab(&["list"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for k in KINDS {
        assert!(text.lines().any(|l| l == k), "catalog lacks {k}");
    }
    assert_eq!(text.matches("supports:").count(), 9);
}

#[test]
fn list_json_is_machine_readable() {
    let out = exclab(&["list", "--json"]);
    assert!(out.status.success());
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    let kinds: Vec<&str> = v["experiments"].as_array().unwrap().iter().map(|e| e["kind"].as_str().unwrap()).collect();
    assert_eq!(kinds, KINDS);
    assert!(v["experiments"].as_array().unwrap().iter().all(|e| !e["supports"].as_str().unwrap().is_empty()));
}

#[test]
fn duality_on_twenty_site_path_exits_zero() {
    let (out, dir, _tmp) = run_config(DUALITY_20, &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let s = read_summary(&dir);
    assert_eq!(s["passed"], Value::Bool(true));
    assert_eq!(s["results"]["report"]["pathwise_equal"], Value::Bool(true));
    assert_eq!(s["replicas"], Value::from(100_000));
}

#[test]
fn too_negative_eps_is_a_config_error_naming_the_entry() {
    let text = r#"
seed = 1
replicas = 10

[graph]
family = "path"
sides = [6]
base_rate = 0.5

[[perturbation]]
x = 1
y = 2
eps = 0.2

[[perturbation]]
x = 3
y = 4
eps = -0.5

[measure]
type = "bernoulli"
rho = 0.5

[experiment]
kind = "simulate"
horizon = 1.0
cylinders = [[2]]
"#;
    let (out, dir, _tmp) = run_config(text, &[]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("perturbation entry 1"), "{err}");
    assert!(err.contains("eps=-0.5"), "{err}");
    assert!(!dir.join("summary.json").exists());
}

#[test]
fn unknown_fields_and_missing_files_exit_two() {
    let (out, _, _tmp) = run_config(&DUALITY_20.replace("horizon = 2.0", "horizon = 2.0\nhorizn = 3.0"), &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("horizn"));
    let out = exclab(&["run", "/nonexistent/config.toml"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn failed_assertion_exits_one_and_still_writes_results() {
    // a constant-density product measure is not invariant once an edge is biased
    let text = r#"
seed = 1
replicas = 1

[graph]
family = "path"
sides = [8]
base_rate = 0.5

[[perturbation]]
x = 3
y = 4
eps = 0.3

[measure]
type = "bernoulli"
rho = 0.3

[experiment]
kind = "stationarity"
max_size = 2
"#;
    let (out, dir, _tmp) = run_config(text, &[]);
    assert_eq!(out.status.code(), Some(1));
    let s = read_summary(&dir);
    assert_eq!(s["passed"], Value::Bool(false));
    assert!(s["results"]["max_abs_residual"].as_f64().unwrap() > 1e-3);
    assert!(dir.join("stationarity.csv").exists());
}

#[test]
fn nu_c_stationarity_config_passes() {
    let cfg = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/c01_nu_c_stationarity.toml");
    let tmp = tempfile::tempdir().unwrap();
    let out = exclab(&["run", cfg.to_str().unwrap(), "--output-dir", tmp.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let s = read_summary(tmp.path());
    assert!(s["results"]["max_abs_residual"].as_f64().unwrap() <= 1e-12);
}

#[test]
fn summary_bytes_do_not_depend_on_threads() {
    let small = DUALITY_20.replace("replicas = 100000", "replicas = 5000");
    let (a, dir_a, _t1) = run_config(&format!("threads = 1\n{small}"), &[]);
    let (b, dir_b, _t2) = run_config(&format!("threads = 3\n{small}"), &[]);
    assert!(a.status.success() && b.status.success());
    let sa = std::fs::read(dir_a.join("summary.json")).unwrap();
    let sb = std::fs::read(dir_b.join("summary.json")).unwrap();
    assert_eq!(sa, sb);
    // timing lives in the sidecar only
    assert!(!String::from_utf8(sa).unwrap().contains("wall_clock"));
    let rt: Value = serde_json::from_str(&std::fs::read_to_string(dir_b.join("runtime.json")).unwrap()).unwrap();
    assert_eq!(rt["threads"], Value::from(3));
    assert!(rt["wall_clock_seconds"].as_f64().unwrap() >= 0.0);
}

#[test]
fn seed_override_changes_seed_and_fingerprint() {
    let small = DUALITY_20.replace("replicas = 100000", "replicas = 100");
    let (a, dir_a, _t1) = run_config(&small, &[]);
    let (b, dir_b, _t2) = run_config(&small, &["--seed-override", "99"]);
    assert!(a.status.success() && b.status.success());
    let (sa, sb) = (read_summary(&dir_a), read_summary(&dir_b));
    assert_eq!(sb["seed"], Value::from(99));
    assert_ne!(sa["config_fingerprint"], sb["config_fingerprint"]);
}

#[test]
fn json_flag_prints_the_summary() {
    let small = DUALITY_20.replace("replicas = 100000", "replicas = 100");
    let (out, dir, _tmp) = run_config(&small, &["--json"]);
    assert!(out.status.success());
    assert_eq!(out.stdout, std::fs::read(dir.join("summary.json")).unwrap());
}

#[test]
fn simulate_writes_detail_tables() {
    let text = r#"
seed = 3
replicas = 2000

[graph]
family = "box"
sides = [5, 5]
base_rate = 0.25

[[perturbation]]
x = { offset = [0, 0] }
y = { offset = [1, 0] }
eps = 0.5

[measure]
type = "bernoulli"
rho = 0.5

[experiment]
kind = "simulate"
horizon = 2.0
times = [1.0, 2.0]
cylinders = [[{ offset = [0, 0] }], [[0, 0], [4, 4]]]
engine = "coupled"
trajectory = true
"#;
    let (out, dir, _tmp) = run_config(text, &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.join("simulate.csv")).unwrap();
    // header plus 2 times x 2 cylinders x 2 marginals
    assert_eq!(csv.lines().count(), 9);
    let traj = std::fs::read_to_string(dir.join("trajectory.csv")).unwrap();
    assert_eq!(traj.lines().count(), 3);
}
