use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use amswarm_core::SolveReport;

fn amswarm(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_amswarm"))
        .args(args)
        .current_dir(dir)
        .env_remove("AMSWARM_CACHE_DIR")
        .env("RUST_LOG", "info")
        .output()
        .expect("spawn amswarm")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn square_solve_succeeds_and_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = amswarm(
        dir.path(),
        &[
            "solve",
            "--generator",
            "square",
            "--n",
            "8",
            "--side",
            "8",
            "--radius",
            "0.4",
            "--csv",
        ],
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = fs::read_to_string(dir.path().join("out/report.json")).unwrap();
    let report = SolveReport::from_json(&text).unwrap();
    assert!(report.converged && report.metrics.collision_free);
    assert_eq!(report.to_json().unwrap(), text);

    let csv = fs::read_to_string(dir.path().join("out/agent_3.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("t,x,y,z"));
    assert_eq!(lines.count(), report.m);
}

#[test]
fn missing_scenario_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = amswarm(dir.path(), &["solve", "--scenario", "missing.json"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("missing.json"));
}

#[test]
fn overlapping_start_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = amswarm(
        dir.path(),
        &[
            "solve",
            "--generator",
            "square",
            "--n",
            "4",
            "--side",
            "0.5",
            "--radius",
            "0.4",
        ],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("overlap"));
}

#[test]
fn malformed_scenario_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.json"), "{\"n\": 2").unwrap();
    let out = amswarm(dir.path(), &["solve", "--scenario", "bad.json"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn iteration_cap_reports_non_convergence() {
    let dir = tempfile::tempdir().unwrap();
    let out = amswarm(
        dir.path(),
        &["solve", "--generator", "random", "--n", "8", "--max-iters", "2"],
    );
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    let report =
        SolveReport::from_json(&fs::read_to_string(dir.path().join("out/report.json")).unwrap()).unwrap();
    assert!(!report.converged);
    assert_eq!(report.iterations, 2);
}

#[test]
fn generated_scenarios_solve_from_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = amswarm(
        dir.path(),
        &[
            "generate",
            "--generator",
            "random",
            "--n",
            "4",
            "--seed",
            "5",
            "--out",
            "s.json",
        ],
    );
    assert_eq!(out.status.code(), Some(0));
    let out = amswarm(dir.path(), &["solve", "--scenario", "s.json", "--m", "60"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let report =
        SolveReport::from_json(&fs::read_to_string(dir.path().join("out/report.json")).unwrap()).unwrap();
    assert_eq!(report.m, 60);
}

#[test]
fn cache_build_is_reused_and_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let build = amswarm(dir.path(), &["cache", "--n", "8", "--cache-dir", "kkt"]);
    assert_eq!(build.status.code(), Some(0), "{}", stderr(&build));
    let manifest = fs::read_dir(dir.path().join("kkt"))
        .unwrap()
        .next()
        .unwrap()
        .unwrap()
        .path()
        .join("manifest.json");
    let before = fs::read(&manifest).unwrap();
    let rebuild = amswarm(dir.path(), &["cache", "--n", "8", "--cache-dir", "kkt"]);
    assert_eq!(rebuild.status.code(), Some(0));
    assert_eq!(fs::read(&manifest).unwrap(), before);
    assert!(String::from_utf8_lossy(&rebuild.stdout).contains("on disk"));

    for seed in ["1", "2"] {
        let out = amswarm(
            dir.path(),
            &[
                "solve",
                "--generator",
                "square",
                "--n",
                "8",
                "--perturb",
                "0.1",
                "--seed",
                seed,
                "--cache-dir",
                "kkt",
            ],
        );
        assert_eq!(out.status.code(), Some(0));
        let log = stderr(&out);
        assert_eq!(log.matches("kkt cache hit (disk)").count(), 10, "{log}");
        assert!(!log.contains("kkt cache miss"));
    }

    let other = amswarm(
        dir.path(),
        &[
            "solve",
            "--generator",
            "random",
            "--n",
            "16",
            "--bounds",
            "10,10,3",
            "--cache-dir",
            "kkt",
        ],
    );
    assert!(stderr(&other).contains("kkt cache miss"));
}

#[test]
fn square_bench_writes_tables() {
    let dir = tempfile::tempdir().unwrap();
    let out = amswarm(
        dir.path(),
        &[
            "bench",
            "--suite",
            "square",
            "--sizes",
            "4,8",
            "--seeds",
            "5",
            "--perturb",
            "0.1",
            "--jobs",
            "4",
        ],
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let mut reader = csv::Reader::from_path(dir.path().join("bench/bench.csv")).unwrap();
    let header: Vec<String> = reader.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(
        &header[..11],
        [
            "n",
            "n_obs",
            "seed",
            "converged",
            "iterations",
            "final_residual",
            "min_norm_dist",
            "mean_arc_length",
            "mean_smoothness",
            "setup_time_s",
            "loop_time_s"
        ]
    );
    let rows: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 10);
    assert!(rows.iter().all(|r| &r[3] == "true"));
    assert!(dir.path().join("bench/summary.csv").exists());
    assert!(dir.path().join("bench/residuals.csv").exists());
    assert_eq!(fs::read_dir(dir.path().join("bench/runs")).unwrap().count(), 10);
}

#[test]
fn bench_run_errors_are_recorded() {
    let dir = tempfile::tempdir().unwrap();
    // odd hallway sizes are rejected by the generator
    let out = amswarm(
        dir.path(),
        &["bench", "--suite", "hallway", "--sizes", "2,3", "--seeds", "1"],
    );
    assert_eq!(out.status.code(), Some(1));
    let csv = fs::read_to_string(dir.path().join("bench/bench.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn empty_size_list_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        &["bench", "--suite", "square"][..],
        &["bench", "--suite", "square", "--sizes", ""],
    ] {
        let out = amswarm(dir.path(), args);
        assert_eq!(out.status.code(), Some(1));
    }
}
