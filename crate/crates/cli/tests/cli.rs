use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const MINIMAL: &str = r#"
kappa = 1.0
gamma = 2.0
n_particles = 16
tau = 0.02
t_end = 0.1
samples_per_step = 4

[initial]
kind = "riemann"
x_min = -1.0
x_max = 1.0
interface = 0.0
left_density = 2.0
right_density = 1.0
left_velocity = 0.0
right_velocity = 0.0
"#;

fn isoflow(args: &[&str], root: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_isoflow"))
        .args(args)
        .env("ISOFLOW_OUTPUT_ROOT", root)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn run_writes_a_passing_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "a.toml", MINIMAL);
    let out = isoflow(&["run", "--config", &cfg, "--output", "r"], tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(tmp.path().join("r/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["all_invariants_passed"], true);
    assert!(manifest["invariants"].as_array().unwrap().iter().all(|c| c["margin"].as_f64().unwrap() >= 0.0));
    assert!(tmp.path().join("r/timing.json").exists());
    assert!(tmp.path().join("r/trajectory/states/step_000005.csv").exists());
}

#[test]
fn config_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let bad_gamma = write_config(tmp.path(), "g.toml", &MINIMAL.replace("gamma = 2.0", "gamma = 0.9"));
    let out = isoflow(&["run", "--config", &bad_gamma], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("gamma > 1"));

    let no_tau = write_config(tmp.path(), "t.toml", &MINIMAL.replace("tau = 0.02\n", ""));
    let out = isoflow(&["run", "--config", &no_tau], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("tau"));

    let unknown = write_config(tmp.path(), "u.toml", &format!("colour = 3\n{MINIMAL}"));
    let out = isoflow(&["run", "--config", &unknown], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("colour"));
}

#[test]
fn solver_failures_exit_with_three() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "s.toml",
        &format!("{MINIMAL}\n[solver]\nmax_iters = 1\nstart = \"current\"\n"),
    );
    let out = isoflow(&["run", "--config", &cfg], tmp.path());
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("step 0"));
}

#[test]
fn ensemble_then_select_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "e.toml", MINIMAL);
    for dir in ["e1", "e2"] {
        let out = isoflow(&["ensemble", "--config", &cfg, "--output", dir, "--k", "4"], tmp.path());
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let out = isoflow(&["select", "--ensemble-dir", dir, "--objective", "acceleration"], tmp.path());
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let read = |p: &str| fs::read(tmp.path().join(p)).unwrap();
    let sel: serde_json::Value = serde_json::from_slice(&read("e1/selection.json")).unwrap();
    assert!(!sel["minimal"].as_array().unwrap().is_empty());
    assert_eq!(read("e1/selection.json"), read("e2/selection.json"));
    assert_eq!(read("e1/member_002/diagnostics.csv"), read("e2/member_002/diagnostics.csv"));

    // re-running select on the same directory reproduces the file
    let before = read("e1/selection.json");
    let out = isoflow(&["select", "--ensemble-dir", "e1"], tmp.path());
    assert!(out.status.success());
    assert_eq!(before, read("e1/selection.json"));
}

#[test]
fn metrics_of_identical_files_vanish() {
    let tmp = tempfile::tempdir().unwrap();
    let a = write_config(tmp.path(), "a.csv", "x,w\n0.0,0.25\n1.0,0.75\n");
    let b = write_config(tmp.path(), "b.csv", "x,w\n0.5,1.0\n");
    for metric in ["w1", "w2", "bl"] {
        let out = isoflow(&["metrics", &a, &a, "--metric", metric], tmp.path());
        let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
        assert_eq!(v["metric"], metric);
        assert_eq!(v["value"].as_f64().unwrap(), 0.0);
    }
    let out = isoflow(&["metrics", &a, &b, "--metric", "w1"], tmp.path());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!((v["value"].as_f64().unwrap() - 0.5).abs() < 1e-15);
}

#[test]
fn oracle_compare_on_resting_dust() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "o.toml",
        r#"
kappa = 0.0
gamma = 2.0
n_particles = 40
tau = 0.05
t_end = 0.5

[initial]
kind = "block"
x_min = -1.0
x_max = 1.0
profile = "uniform"
"#,
    );
    let out = isoflow(&["oracle-compare", "--config", &cfg, "--output", "o"], tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(tmp.path().join("o/comparison.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("t,W2,relative_energy"));
    let mut rows = 0;
    for line in lines {
        let w2: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
        assert!(w2 <= 1e-6);
        rows += 1;
    }
    assert_eq!(rows, 11);
}

#[test]
fn shipped_configs_parse() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for entry in fs::read_dir(root).unwrap() {
        let text = fs::read_to_string(entry.unwrap().path()).unwrap();
        let v: toml::Value = toml::from_str(&text).unwrap();
        assert!(v.get("initial").is_some());
    }
}
