use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_delaypred"))
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run_with(config: &Path, out: &Path, extra: &[&str]) -> Output {
    bin()
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(extra)
        .output()
        .expect("spawn delaypred")
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path
}

fn summary(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap()
}

#[test]
fn sweep_f_reports_the_minimiser() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("sweep");
    let res = run_with(&configs().join("sweep_f.json"), &out, &[]);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    let s = summary(&out);
    assert!((s["argmin_p"].as_f64().unwrap() - 1.93).abs() < 1e-12);
    let csv = fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("p,f"));
    let best = csv
        .lines()
        .skip(1)
        .map(|l| {
            let mut it = l.split(',').map(|v| v.parse::<f64>().unwrap());
            (it.next().unwrap(), it.next().unwrap())
        })
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap();
    assert!((best.0 - 1.93).abs() < 1e-12);
    assert!((best.1 - 64.71).abs() < 0.05);
}

#[test]
fn linear_simulation_decays() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("sim");
    let res = run_with(&configs().join("scalar_simulate.json"), &out, &[]);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    let s = summary(&out);
    assert!(s["decay_fit"]["rate"].as_f64().unwrap() > 0.0);
    assert!(s["m_ratio"].as_f64().unwrap() < 1e-3);
    let csv = fs::read_to_string(out.join("trajectory.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("t,x_1,z_1,u_1,is_sample_instant,N_used"));
    let echo: Value = serde_json::from_str(&fs::read_to_string(out.join("config.json")).unwrap()).unwrap();
    assert_eq!(echo["mode"], "simulate");
}

#[test]
fn design_linear_finds_the_minimal_grid() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("design");
    let res = run_with(&configs().join("scalar_design.json"), &out, &[]);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    let text = fs::read_to_string(out.join("summary.json")).unwrap();
    assert!(text.contains("65"), "{text}");
}

#[test]
fn same_config_gives_identical_bytes() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = configs().join("cubic_simulate.json");
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert_eq!(run_with(&cfg, &a, &[]).status.code(), Some(0));
    assert_eq!(run_with(&cfg, &b, &[]).status.code(), Some(0));
    for name in ["summary.json", "trajectory.csv", "config.json"] {
        assert_eq!(
            fs::read(a.join(name)).unwrap(),
            fs::read(b.join(name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn seed_override_changes_a_random_schedule() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = configs().join("cubic_simulate.json");
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert_eq!(run_with(&cfg, &a, &["--seed", "1"]).status.code(), Some(0));
    assert_eq!(run_with(&cfg, &b, &["--seed", "2"]).status.code(), Some(0));
    assert_ne!(
        fs::read(a.join("trajectory.csv")).unwrap(),
        fs::read(b.join("trajectory.csv")).unwrap()
    );
}

#[test]
fn invalid_configs_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let cases = [
        (
            "missing_tau.json",
            r#"{"mode": "simulate", "system": {"cubic": {}}, "r": 0.25}"#,
        ),
        ("unknown_mode.json", r#"{"mode": "nope", "tau": 1.0}"#),
        ("unknown_field.json", r#"{"mode": "sweep-f", "r": 1.0, "bogus": 3}"#),
        ("not_json.json", "{"),
    ];
    for (name, body) in cases {
        let cfg = write_config(tmp.path(), name, body);
        let res = run_with(&cfg, &out, &[]);
        assert_eq!(
            res.status.code(),
            Some(2),
            "{name}: {}",
            String::from_utf8_lossy(&res.stderr)
        );
    }
    let res = run_with(&tmp.path().join("absent.json"), &out, &[]);
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn unreachable_accuracy_exits_with_three() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "far.json",
        r#"{"mode": "predict", "system": {"cubic": {}}, "tau": 0.5, "r": 0.25, "x0": [0.5], "u0": [0.0]}"#,
    );
    let res = run_with(&cfg, &tmp.path().join("out"), &[]);
    assert_eq!(res.status.code(), Some(3), "{}", String::from_utf8_lossy(&res.stderr));
    assert!(String::from_utf8_lossy(&res.stderr).contains("cap"));
}

#[test]
fn scalar_bound_verification_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("verify");
    let res = run_with(&configs().join("verify_scalar.json"), &out, &[]);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
}
