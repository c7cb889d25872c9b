use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn kwflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kwflow"))
        .args(args)
        .env("RAYON_NUM_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

/// J column of a series.csv.
fn j_series(path: &Path) -> Vec<f64> {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == "J").expect("J column");
    lines.map(|l| l.split(',').nth(col).unwrap().parse().unwrap()).collect()
}

#[test]
fn constant_weight_at_critical_rho_converges() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = kwflow(&["run", "--n", "32", "--weight", "const", "--rho", "8pi", "--u0", "zero", "--out", out]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let s = json(&dir.path().join("summary.json"));
    assert_eq!(s["termination"], "Converged");
    assert_eq!(s["config"]["grid"]["n"], 32);
    assert!((s["config"]["rho"].as_f64().unwrap() - 8.0 * PI).abs() < 1e-12);
    assert!(dir.path().join("series.csv").exists());
    assert!(dir.path().join("u_t0.000000.kwf").exists());
}

#[test]
fn zero_time_budget_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = kwflow(&["run", "--n", "32", "--weight", "one_plus_half_cos", "--t-max", "0", "--out", out]);
    assert_eq!(code(&o), 3);
    assert_eq!(json(&dir.path().join("summary.json"))["termination"], "BudgetExhausted");
}

#[test]
fn missing_field_file_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.kwf");
    let o = kwflow(&["run", "--n", "32", "--u0", missing.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("nope.kwf"));
}

#[test]
fn bad_config_key_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[flow]\ntmax = 3\n").unwrap();
    let o = kwflow(&["run", "-c", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
}

#[test]
fn check_constant_weight_is_satisfied() {
    let dir = tempfile::tempdir().unwrap();
    let o = kwflow(&["check", "--n", "64", "--weight", "const", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let r = json(&dir.path().join("condition.json"));
    assert!((r["simplified"].as_f64().unwrap() - 8.0 * PI).abs() < 1e-9);
    assert_eq!(r["satisfied"], true);
}

#[test]
fn check_reports_failure_with_exit_4() {
    let dir = tempfile::tempdir().unwrap();
    let o = kwflow(&["check", "--n", "64", "--weight", "vanishing_patch", "--out", dir.path().to_str().unwrap()]);
    let r = json(&dir.path().join("condition.json"));
    let expected = if r["satisfied"].as_bool().unwrap() { 0 } else { 4 };
    assert_eq!(code(&o), expected);
}

#[test]
fn green_on_flat_torus_is_symmetric() {
    let dir = tempfile::tempdir().unwrap();
    let o = kwflow(&["green", "--n", "64", "--pole", "5,9", "--dump", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let g = json(&dir.path().join("green.json"));
    for k in 0..2 {
        assert!(g["b"][k].as_f64().unwrap().abs() <= 1e-3);
    }
    assert!((g["A"].as_f64().unwrap() + 5.2421).abs() < 1e-2);
    assert!(dir.path().join("green.kwf").exists());
}

#[test]
fn seed_reports_negative_margin() {
    let dir = tempfile::tempdir().unwrap();
    let o = kwflow(&["seed", "--n", "64", "--weight", "one_plus_half_cos", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let s = json(&dir.path().join("seed.json"));
    let (j0, c0) = (s["seed"]["J0"].as_f64().unwrap(), s["seed"]["C0"].as_f64().unwrap());
    assert!(j0 < c0);
    assert!((s["seed"]["margin"].as_f64().unwrap() - (j0 - c0)).abs() < 1e-12);
    assert!(dir.path().join("u0.kwf").exists());
}

#[test]
fn stationary_then_run_from_the_solution() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = kwflow(&["stationary", "--n", "32", "--rho", "4pi", "--weight", "near_vanishing", "--out", out]);
    assert_eq!(code(&o), 0);
    let n = json(&dir.path().join("newton.json"));
    assert_eq!(n["newton"]["converged"], true);
    let star = dir.path().join("u_star.kwf");
    let run_dir = dir.path().join("run");
    let o = kwflow(&[
        "run", "--n", "32", "--rho", "4pi", "--weight", "near_vanishing",
        "--u0", star.to_str().unwrap(), "--out", run_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0);
    assert_eq!(json(&run_dir.join("summary.json"))["steps"], 0);
}

#[test]
fn identical_configs_give_identical_series() {
    let dir = tempfile::tempdir().unwrap();
    let args = |sub: &str| {
        let p = dir.path().join(sub);
        vec![
            "run".to_string(), "--n".into(), "32".into(), "--weight".into(), "one_plus_half_cos".into(),
            "--t-max".into(), "0.5".into(), "--out".into(), p.to_str().unwrap().into(),
        ]
    };
    for sub in ["a", "b"] {
        let a = args(sub);
        let refs: Vec<&str> = a.iter().map(String::as_str).collect();
        kwflow(&refs);
    }
    let a = fs::read(dir.path().join("a/series.csv")).unwrap();
    let b = fs::read(dir.path().join("b/series.csv")).unwrap();
    assert!(!a.is_empty());
    assert_eq!(a, b);
}

#[test]
fn shipped_configs_run_with_non_increasing_energy() {
    let dir = tempfile::tempdir().unwrap();
    let mut seen = 0;
    for entry in fs::read_dir(configs_dir()).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().and_then(|e| e.to_str()) != Some("toml") {
            continue;
        }
        let name = path.file_stem().unwrap().to_str().unwrap().to_string();
        let out = dir.path().join(&name);
        let o = kwflow(&["run", "-c", path.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert!(matches!(code(&o), 0 | 2 | 3), "{name}: {}", String::from_utf8_lossy(&o.stderr));
        let j = j_series(&out.join("series.csv"));
        for w in j.windows(2) {
            assert!(w[1] - w[0] <= 1e-10 * (1.0 + w[0].abs()), "{name}: J rose from {} to {}", w[0], w[1]);
        }
        seen += 1;
    }
    assert!(seen >= 4);
}

#[test]
fn verify_quick_passes() {
    let o = kwflow(&["verify", "--level", "quick"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
}

#[test]
fn verify_names_the_corrupted_laplacian() {
    let o = kwflow(&["verify", "--level", "quick", "--corrupt-laplacian"]);
    assert_ne!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stderr).contains("poisson round-trip"));
}
