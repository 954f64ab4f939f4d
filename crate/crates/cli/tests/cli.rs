use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn skt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_skt")).args(args).output().expect("run skt")
}

fn run_with(cfg: &Path, out: &Path, cmd: &[&str]) -> Output {
    let mut args = vec!["--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(cmd);
    skt(&args)
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn write_cfg(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn blowup_text() -> String {
    fs::read_to_string(configs().join("blowup.cfg")).unwrap()
}

#[test]
fn classify_global_config() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("nested/report.json");
    let out = run_with(
        &configs().join("global.cfg"),
        dir.path(),
        &["classify", "--regime-report", report.to_str().unwrap()],
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&report);
    assert_eq!(v["schema_version"], 1);
    assert_eq!(v["global"]["verdict"], "certified_global");
    assert_eq!(v["global"]["lambda0_mode"], "principal");
    let ineqs = v["global"]["inequalities"].as_array().unwrap();
    assert_eq!(ineqs.len(), 6);
    assert!(ineqs.iter().all(|i| i["holds"] == true));
}

#[test]
fn classify_blowup_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_with(&configs().join("blowup.cfg"), dir.path(), &["classify"]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&dir.path().join("regime_report.json"));
    let b = &v["blowup"];
    assert_eq!(b["verdict"], "certified_blowup_if");
    assert_eq!(b["p_hat0"], 2.0);
    assert!((b["threshold"].as_f64().unwrap() - 4.0 / 3.0).abs() < 1e-15);
    // T0 from tau = 1, psi_under = 0.75, p_hat0 = 2
    assert!((v["t0"].as_f64().unwrap() - 3f64.ln()).abs() < 1e-12);
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let no_model = write_cfg(dir.path(), "a.cfg", "[grid]\nlx = 1\nnx = 9\n");
    let out = run_with(&no_model, dir.path(), &["classify"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("[model]"));

    let unknown = write_cfg(dir.path(), "b.cfg", &blowup_text().replace("[solver]\n", "[solver]\ntheta = 1\n"));
    let out = run_with(&unknown, dir.path(), &["simulate"]);
    assert_eq!(out.status.code(), Some(2));
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains("[solver]") && msg.contains("theta"), "{msg}");

    assert_eq!(skt(&["classify"]).status.code(), Some(2));
    assert_eq!(skt(&["frobnicate"]).status.code(), Some(2));
    let missing = dir.path().join("nope.cfg");
    assert_eq!(run_with(&missing, dir.path(), &["classify"]).status.code(), Some(2));
}

#[test]
fn simulate_global_config_stays_in_window() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_with(&configs().join("global.cfg"), dir.path(), &["simulate"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&dir.path().join("simulation_summary.json"));
    assert_eq!(v["termination"]["status"], "completed");
    let caps = v["bracket_caps"].as_array().unwrap();
    assert!(v["max_u1"].as_f64().unwrap() <= caps[0].as_f64().unwrap());
    assert!(v["max_u2"].as_f64().unwrap() <= caps[1].as_f64().unwrap());
    assert!(v["worst_ordering_violation"].as_f64().unwrap() <= 1e-10);

    let csv = fs::read_to_string(dir.path().join("snapshots.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("t,x,u1,u2,h1,h2"));
    // 21 snapshots of 33 nodes
    assert_eq!(lines.count(), 21 * 33);
}

#[test]
fn simulate_zero_data() {
    let dir = tempfile::tempdir().unwrap();
    let text = blowup_text().replace("u1 = 1\nu2 = 1", "u1 = 0\nu2 = 0").replace("t_end = 2", "t_end = 0.05");
    let cfg = write_cfg(dir.path(), "z.cfg", &text);
    let out = run_with(&cfg, dir.path(), &["simulate"]);
    assert_eq!(out.status.code(), Some(0));
    let csv = fs::read_to_string(dir.path().join("snapshots.csv")).unwrap();
    for line in csv.lines().skip(1) {
        let cols: Vec<f64> = line.split(',').map(|c| c.parse().unwrap()).collect();
        assert!(cols[2..].iter().all(|v| *v == 0.0));
    }
}

#[test]
fn simulate_blowup_overflows() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_with(&configs().join("blowup.cfg"), dir.path(), &["simulate"]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&dir.path().join("simulation_summary.json"));
    assert_eq!(v["termination"]["status"], "overflowed");
    let t = v["termination"]["t"].as_f64().unwrap();
    assert!(t > 0.0 && t < 3f64.ln());
    assert!(v["window_bracket_error"].as_str().unwrap().contains("N1"));
}

#[test]
fn window_bracket_required_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let text = blowup_text().replace("[solver]\n", "[solver]\nrequire_window_bracket = true\n");
    let cfg = write_cfg(dir.path(), "w.cfg", &text);
    let out = run_with(&cfg, dir.path(), &["simulate"]);
    assert_eq!(out.status.code(), Some(3));
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains("(a1*c2 + a2*c1)/(c2*b1 - c1*b2)"), "{msg}");
}

#[test]
fn solver_failure_exit_4() {
    let dir = tempfile::tempdir().unwrap();
    let text = blowup_text().replace("[solver]\n", "[solver]\nmax_inner_iters = 1\nmax_dt_halvings = 2\n");
    let cfg = write_cfg(dir.path(), "f.cfg", &text);
    let out = run_with(&cfg, dir.path(), &["simulate"]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&dir.path().join("simulation_summary.json"));
    assert_eq!(v["termination"]["status"], "failed");
    assert_eq!(v["termination"]["kind"], "convergence");
}

#[test]
fn blowup_report_and_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_with(&configs().join("blowup.cfg"), dir.path(), &["blowup"]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&dir.path().join("blowup_report.json"));
    assert_eq!(v["schema_version"], 1);
    let t0 = v["t0"].as_f64().unwrap();
    let detected = v["detected_blowup_time"].as_f64().unwrap();
    assert!(detected <= 1.1 * t0);
    assert_eq!(v["bound_violations"], 0);
    assert_eq!(v["within_t0_slack"], true);
    let last = v["samples"].as_array().unwrap().last().unwrap()["t"].as_f64().unwrap();
    assert!(detected >= last);

    let csv = fs::read_to_string(dir.path().join("blowup_trajectory.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("t,p_hat,riccati_bound,max_u1_plus_u2"));
}

#[test]
fn blowup_below_threshold_not_certified() {
    let dir = tempfile::tempdir().unwrap();
    let text = blowup_text().replace("u1 = 1\nu2 = 1", "u1 = 0.5\nu2 = 0.5").replace("t_end = 2", "t_end = 0.1");
    let cfg = write_cfg(dir.path(), "low.cfg", &text);
    let out = run_with(&cfg, dir.path(), &["blowup"]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&dir.path().join("blowup_report.json"));
    assert_eq!(v["certificate"]["verdict"], "not_certified");
    assert!(v["certificate"]["failed_condition"].as_str().unwrap().contains("threshold"));
    assert!(v["t0"].is_null() && v["detected_blowup_time"].is_null());
    let csv = fs::read_to_string(dir.path().join("blowup_trajectory.csv")).unwrap();
    // bound column empty everywhere
    assert!(csv.lines().skip(1).all(|l| l.split(',').nth(2) == Some("")));
}

#[test]
fn sweep_rows_and_validation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("blowup.cfg");
    let out = run_with(
        &cfg,
        dir.path(),
        &["sweep", "--axis", "c1", "--min", "0.1", "--max", "4", "--count", "40"],
    );
    assert_eq!(out.status.code(), Some(0));
    let csv = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    let rows: Vec<Vec<&str>> = csv.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 40);
    for r in &rows {
        let c1: f64 = r[0].parse().unwrap();
        assert_eq!(r[4] == "true", c1 + 0.5 < 4.0, "c1 = {c1}");
    }

    let bad_log = run_with(
        &cfg,
        dir.path(),
        &["sweep", "--axis", "c1", "--min", "0", "--max", "4", "--count", "5", "--scale", "log"],
    );
    assert_eq!(bad_log.status.code(), Some(2));
    let bad_axis = run_with(&cfg, dir.path(), &["sweep", "--axis", "zeta", "--min", "1", "--max", "2", "--count", "2"]);
    assert_eq!(bad_axis.status.code(), Some(2));
}

#[test]
fn sweep_single_row_matches_classify() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("blowup.cfg");
    let out = run_with(&cfg, dir.path(), &["sweep", "--axis", "mu1", "--min", "1", "--max", "1", "--count", "1"]);
    assert_eq!(out.status.code(), Some(0));
    run_with(&cfg, dir.path(), &["classify"]);
    let v = json(&dir.path().join("regime_report.json"));
    let csv = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    let row: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[1], v["global"]["verdict"]);
    assert_eq!(row[2], v["blowup"]["verdict"]);
    assert_eq!(row[8].parse::<f64>().unwrap(), v["blowup"]["p_hat0"].as_f64().unwrap());
    assert_eq!(row[10].parse::<f64>().unwrap(), v["t0"].as_f64().unwrap());
}

#[test]
fn sweep_with_simulation() {
    let dir = tempfile::tempdir().unwrap();
    let text = blowup_text().replace("nx = 17", "nx = 9");
    let cfg = write_cfg(dir.path(), "s.cfg", &text);
    let out = run_with(
        &cfg,
        dir.path(),
        &["sweep", "--axis", "b1", "--min", "1.5", "--max", "3", "--count", "3", "--simulate"],
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert!(csv.lines().next().unwrap().ends_with("termination,detected_blowup_time,bound_violations"));
    assert!(csv.lines().skip(1).all(|l| l.contains("overflowed")));
}

#[test]
fn rectangle_config_with_search() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("self_diffusion_2d.cfg");
    let out = run_with(&cfg, dir.path(), &["classify"]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&dir.path().join("regime_report.json"));
    assert_eq!(v["lambda0_mode"], "first_positive");
    // first positive Neumann eigenvalue of [0,2]x[0,1] is (pi/2)^2
    let l0 = v["lambda0"].as_f64().unwrap();
    assert!((l0 - (std::f64::consts::PI / 2.0).powi(2)).abs() < 1e-2, "{l0}");

    let out = run_with(&cfg, dir.path(), &["--lambda0-mode", "principal", "simulate"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&dir.path().join("simulation_summary.json"));
    assert_eq!(v["lambda0_mode"], "principal");
    assert_eq!(v["termination"]["status"], "completed");
    let header = fs::read_to_string(dir.path().join("snapshots.csv")).unwrap();
    assert!(header.starts_with("t,x,y,u1,u2,h1,h2\n"));
}
