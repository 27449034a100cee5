use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use kam_core::config::RunConfig;
use serde_json::Value;

fn kam(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kam")).args(args).output().expect("binary runs")
}

fn config_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn run(cfg: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--quiet"];
    args.extend_from_slice(extra);
    kam(&args)
}

#[test]
fn zero_perturbation_exits_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&config_path("zero.json"), dir.path(), &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(dir.path().join("steps.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1);
    assert!(csv.starts_with("nu,s_nu,sigma_nu,tau_nu,Lambda_nu,eps_budget,eps_measured,p0_norm,F_norm,tail_charge,q_eff"));
    let r = read_json(&dir.path().join("report.json"));
    assert!(r["verification"]["defect_max"].as_f64().unwrap() <= 1e-9);
}

#[test]
fn large_perturbation_exits_with_named_margin() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = read_json(&config_path("desk.json"));
    // α = 1, Λ(150) = 150³; h = 1/(2Λ) in original units
    let h = 1.0 / (2.0 * 150f64.powi(3));
    cfg["h"] = h.into();
    cfg["perturbation"]["random"]["eps"] = (h / 8.0).into();
    let path = dir.path().join("big.json");
    std::fs::write(&path, cfg.to_string()).unwrap();
    let o = run(&path, &dir.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(2));
    let r = read_json(&dir.path().join("out/report.json"));
    assert_eq!(r["status"]["margin"], "eps < h/16");
    assert!(r["smallness"]["passed"] == false && r["certification"].is_object());
    assert!(!dir.path().join("out/conjugacy.json").exists());
}

#[test]
fn desk_run_artifacts_are_self_contained() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&config_path("desk.json"), dir.path(), &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let r = read_json(&dir.path().join("report.json"));
    assert!(r["run"]["converged"].as_bool().unwrap());
    assert!(r["run"]["eps_final_measured"].as_f64().unwrap() < 1e-12);
    let rows = std::fs::read_to_string(dir.path().join("steps.csv")).unwrap().lines().count() - 1;
    assert_eq!(rows as u64, r["run"]["steps"].as_u64().unwrap());

    let v = kam(&["verify-only", "--conjugacy", dir.path().join("conjugacy.json").to_str().unwrap()]);
    assert_eq!(v.status.code(), Some(0));
    let again: Value = serde_json::from_slice(&v.stdout).unwrap();
    for key in ["defect_max", "orbit_dev", "phi_shift_norm"] {
        let a = r["verification"][key].as_f64().unwrap();
        let b = again[key].as_f64().unwrap();
        assert!((a - b).abs() <= 1e-12, "{key}: {a} vs {b}");
    }

    // the echo is the canonical form of the input
    let input = RunConfig::from_json(&std::fs::read_to_string(config_path("desk.json")).unwrap()).unwrap();
    let echo = std::fs::read_to_string(dir.path().join("config.json")).unwrap();
    assert_eq!(echo, input.to_json_pretty() + "\n");
    assert_eq!(RunConfig::from_json(&echo).unwrap().to_json_pretty() + "\n", echo);
    assert_eq!(serde_json::to_value(&input).unwrap(), r["config"]);
}

#[test]
fn seed_flag_overrides_config() {
    let a = tempfile::tempdir().unwrap();
    let o = run(&config_path("desk.json"), a.path(), &["--seed", "7"]);
    assert_eq!(o.status.code(), Some(0));
    let r = read_json(&a.path().join("report.json"));
    assert_eq!(r["config"]["perturbation"]["random"]["seed"], 7);
}

#[test]
fn integral_table_matches_closed_form() {
    let o = kam(&["integral-table", "--rho", "2", "--tau", "10,100,1000"]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8(o.stdout).unwrap();
    let rows: Vec<Vec<f64>> =
        text.lines().skip(1).map(|l| l.split_whitespace().map(|x| x.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 3);
    for r in rows {
        let exact = 3.0 * (1.0 + r[0].ln()) / r[0];
        assert!((r[1] - exact).abs() <= 1e-12 * exact, "{} vs {exact}", r[1]);
    }
}

#[test]
fn certify_reports_fibonacci_minima() {
    let o = kam(&["certify", "--omega", "golden2", "-k", "50"]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8(o.stdout).unwrap();
    let last = text.lines().last().unwrap();
    // the smallest divisor up to |k| = 50 sits at (21, -13): consecutive Fibonacci numbers
    assert!(last.contains("[21, -13]"), "{text}");
    let orders: Vec<u32> = text.lines().skip(1).map(|l| l.split_whitespace().next().unwrap().parse().unwrap()).collect();
    assert_eq!(orders, vec![1, 2, 3, 5, 8, 13, 21, 34, 50]);
}

#[test]
fn step_once_on_zero_is_all_zero() {
    let o = kam(&["step-once", "--config", config_path("zero.json").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    let rec = &v["record"];
    for key in ["eps_in", "eps_out_measured", "tail_charge", "generator_norm", "residual"] {
        assert_eq!(rec[key].as_f64().unwrap(), 0.0, "{key}");
    }
    assert_eq!(rec["F"]["modes"].as_array().unwrap().len(), 0);
}

#[test]
fn bad_config_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, r#"{"n": 2}"#).unwrap();
    let o = run(&path, dir.path(), &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("error"));
}
