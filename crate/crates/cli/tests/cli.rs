use std::path::Path;
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use competing_sweeps::forward::{theorem_fixation_prob, TheoremOptions};
use competing_sweeps::ModelParams;
use sweeps_cli::config::{Method, Mode, RunConfig};
use tempfile::tempdir;

fn sweeps(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sweeps")).args(args).env_remove("SWEEPS_THREADS").output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

/// Rows as column maps.
fn rows(csv: &str) -> Vec<std::collections::HashMap<String, String>> {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().expect("header").split(',').collect();
    lines.map(|l| header.iter().map(|h| h.to_string()).zip(l.split(',').map(str::to_string)).collect()).collect()
}

fn num(row: &std::collections::HashMap<String, String>, col: &str) -> f64 {
    row[col].parse().unwrap()
}

#[test]
fn minimal_simulation_is_fast_and_well_formed() {
    let start = Instant::now();
    let o = sweeps(&["simulate", "--two-n", "100", "--trials", "100"]);
    assert!(start.elapsed() < Duration::from_secs(5));
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    assert!(out.starts_with(
        "two_n,sigma,gamma,rho,rho_2n,zeta,u_count,arrival,target,seed,p_hat,se,ci_low,ci_high,n_trials,n_hits,n_censored,wall_time_s,events_total,status\n"
    ));
    assert!(!out.contains('\r'));
    let r = rows(&out);
    assert_eq!(r.len(), 1);
    assert_eq!(r[0]["n_trials"], "100");
    assert_eq!(r[0]["status"], "ok");
    let p = num(&r[0], "p_hat");
    assert!(num(&r[0], "ci_low") <= p && p <= num(&r[0], "ci_high"));
}

#[test]
fn output_is_byte_identical_across_runs_and_thread_counts() {
    let base = ["simulate", "--two-n-grid", "100,200", "--trials", "300", "--seed", "9", "--no-timing"];
    let a = sweeps(&[&base[..], &["--threads", "1"]].concat());
    let b = sweeps(&[&base[..], &["--threads", "3"]].concat());
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(rows(&stdout(&a)).len(), 2);
}

#[test]
fn figure3b_emits_the_recombination_grid_with_theory() {
    let o = sweeps(&["figure3b", "--two-n", "1000", "--trials", "10", "--no-timing"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let r = rows(&stdout(&o));
    let grid: Vec<f64> = r.iter().map(|row| num(row, "rho_2n")).collect();
    let want = [0.05, 0.1, 0.2, 0.5, 1.0, 2.0];
    assert_eq!(grid.len(), want.len());
    for (g, w) in grid.iter().zip(want) {
        assert!((g - w).abs() < 1e-12);
    }
    for row in &r {
        assert_eq!(num(row, "sigma"), 0.02);
        assert_eq!(num(row, "gamma"), 0.6);
        assert_eq!(num(row, "zeta"), 0.3);
        assert!(num(row, "large_n") > 0.0);
    }
    let theory: Vec<f64> = r.iter().map(|row| num(row, "large_n")).collect();
    assert!(theory.windows(2).all(|w| w[1] > w[0]));
}

#[test]
fn no_recombination_gives_zero_for_every_method() {
    for extra in [&["--method", "thm31"][..], &["--method", "moderate-n"], &["--moderate-n"], &["--zeta", "0.7"]] {
        let o = sweeps(&[&["theory", "--two-n", "2000", "--rho", "0"][..], extra].concat());
        assert_eq!(o.status.code(), Some(0), "{extra:?}: {}", String::from_utf8_lossy(&o.stderr));
        let r = rows(&stdout(&o));
        assert_eq!(r[0]["status"], "ok");
        assert_eq!(num(&r[0], "value"), 0.0, "{extra:?}");
    }
}

#[test]
fn theory_matches_the_library_value() {
    let o = sweeps(&["theory", "--two-n", "100000", "--rho-2n", "0.2"]);
    let r = rows(&stdout(&o));
    assert_eq!(r[0]["method"], "thm31");
    let params = ModelParams::with_rho_2n(100_000, 0.02, 0.6, 0.2).unwrap();
    let lib = theorem_fixation_prob(&params, 0.3, &TheoremOptions::default()).unwrap();
    assert_eq!(num(&r[0], "value").to_bits(), lib.to_bits());
    assert!((lib - 0.020_773).abs() < 5e-6);
}

#[test]
fn late_arrival_routes_to_case1b() {
    let r = rows(&stdout(&sweeps(&["theory", "--zeta", "0.7"])));
    assert_eq!(r[0]["method"], "case1b");
    assert_eq!(r[0]["status"], "ok");
    // An explicit method that does not cover the regime is reported in-row.
    let o = sweeps(&["theory", "--zeta", "0.7", "--method", "thm31"]);
    assert_eq!(o.status.code(), Some(0));
    let r = rows(&stdout(&o));
    assert_eq!(r[0]["status"], "regime_mismatch");
    assert_eq!(r[0]["value"], "NaN");
}

#[test]
fn self_comparison_passes_with_zero_z() {
    let dir = tempdir().unwrap();
    let path = dir.path().join("theory.csv");
    let p = path.to_str().unwrap();
    let o = sweeps(&["theory", "--two-n-grid", "1000,4000", "--out", p]);
    assert_eq!(o.status.code(), Some(0));
    let o = sweeps(&["compare", "--two-n-grid", "1000,4000", "--sim-csv", p, "--theory-csv", p]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let r = rows(&stdout(&o));
    assert_eq!(r.len(), 2);
    for row in &r {
        assert_eq!(num(row, "z_score"), 0.0);
        assert_eq!(row["pass"], "true");
    }
    assert!(String::from_utf8_lossy(&o.stderr).contains("verdict PASS: 2/2"));
}

#[test]
fn compare_simulates_against_theory() {
    let o = sweeps(&["compare", "--two-n", "400", "--trials", "300", "--moderate-n", "--no-timing"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let r = rows(&stdout(&o));
    assert_eq!(r[0]["method"], "moderate_n");
    assert!(num(&r[0], "theory") > 0.0);
}

#[test]
fn mismatched_grids_exit_with_config_error() {
    let dir = tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    assert!(sweeps(&["theory", "--two-n-grid", "1000,4000", "--out", a.to_str().unwrap()]).status.success());
    assert!(sweeps(&["theory", "--two-n-grid", "1000,8000", "--out", b.to_str().unwrap()]).status.success());
    let o = sweeps(&["compare", "--sim-csv", a.to_str().unwrap(), "--theory-csv", b.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("grids differ"));
}

#[test]
fn exit_codes() {
    assert_eq!(sweeps(&["simulate", "--sigma", "0.9"]).status.code(), Some(2));
    assert_eq!(sweeps(&["simulate", "--rho", "0.1", "--rho-2n", "0.2"]).status.code(), Some(2));
    assert_eq!(sweeps(&["simulate", "--trials", "0"]).status.code(), Some(2));
    assert_eq!(sweeps(&["simulate", "--config", "/nonexistent/run.json"]).status.code(), Some(2));
    let o = sweeps(&["simulate", "--two-n", "50", "--trials", "5", "--out", "/nonexistent/dir/out.csv"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(!o.stderr.is_empty());
}

#[test]
fn config_file_with_flag_overrides() {
    let dir = tempdir().unwrap();
    let path = dir.path().join("run.json");
    std::fs::write(&path, r#"{"params": {"two_n": 150, "rho": 0.001}, "n_trials": 40, "master_seed": 5}"#).unwrap();
    let p = path.to_str().unwrap();
    let o = sweeps(&["simulate", "--config", p, "--trials", "25", "--print-config"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let c = RunConfig::from_json_overlay(Mode::Simulate, &stdout(&o)).unwrap();
    assert_eq!(c.params.two_n, 150);
    assert_eq!(c.params.rho, Some(0.001));
    assert_eq!(c.params.rho_2n, None);
    assert_eq!(c.n_trials, 25);
    assert_eq!(c.master_seed, 5);
    // A file written for another mode is rejected.
    std::fs::write(&path, r#"{"mode": "theory"}"#).unwrap();
    assert_eq!(sweeps(&["simulate", "--config", p]).status.code(), Some(2));
}

#[test]
fn thread_count_from_environment_only_without_flag() {
    let run = |args: &[&str]| {
        let o = Command::new(env!("CARGO_BIN_EXE_sweeps")).args(args).env("SWEEPS_THREADS", "3").output().unwrap();
        RunConfig::from_json_overlay(Mode::Simulate, &stdout(&o)).unwrap()
    };
    assert_eq!(run(&["simulate", "--print-config"]).threads, Some(3));
    assert_eq!(run(&["simulate", "--threads", "2", "--print-config"]).threads, Some(2));
}

#[test]
fn run_config_round_trip() {
    for mode in [Mode::Simulate, Mode::Theory, Mode::Compare, Mode::Figure1, Mode::Figure3a, Mode::Figure3b] {
        let mut c = RunConfig::defaults(mode);
        c.threads = Some(4);
        c.output_path = Some(Path::new("out.csv").to_path_buf());
        c.method = Method::ModerateN;
        c.u_count = Some(12);
        c.zeta = None;
        let back = RunConfig::from_json_overlay(mode, &c.to_json()).unwrap();
        assert_eq!(back, c);
        assert_eq!(serde_json::to_string(&back).unwrap(), serde_json::to_string(&c).unwrap());
    }
}
