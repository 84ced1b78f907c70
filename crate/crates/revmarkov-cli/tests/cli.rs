//! End-to-end tests driving the compiled binary through its public interface.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nalgebra::DMatrix;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_revmarkov"))
}

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/southern_women.mtx")
}

fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("binary should launch");
    assert!(
        out.status.success(),
        "command failed\nstdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn stdout_metric(out: &Output, name: &str) -> f64 {
    let text = String::from_utf8_lossy(&out.stdout);
    for line in text.lines() {
        if let Some(rest) = line.strip_prefix(&format!("{name} = ")) {
            return rest.trim().parse().expect("metric line should hold a float");
        }
    }
    panic!("no \"{name} = ...\" line in stdout:\n{text}");
}

/// Minimal Matrix Market array reader for checking outputs.
fn read_mm(path: &Path) -> DMatrix<f64> {
    let text = std::fs::read_to_string(path).expect("output file should exist");
    let mut lines = text.lines().filter(|l| !l.starts_with('%') && !l.trim().is_empty());
    let dims: Vec<usize> =
        lines.next().unwrap().split_whitespace().map(|t| t.parse().unwrap()).collect();
    let data: Vec<f64> = lines.map(|l| l.trim().parse().unwrap()).collect();
    assert_eq!(data.len(), dims[0] * dims[1]);
    DMatrix::from_vec(dims[0], dims[1], data)
}

#[test]
fn solve_reproduces_the_clamped_affiliation_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let output = dir.path().join("p.mtx");
    let report = dir.path().join("report.json");
    let out = run_ok(bin().args([
        "solve",
        "--input",
        fixture().to_str().unwrap(),
        "--output",
        output.to_str().unwrap(),
        "--report",
        report.to_str().unwrap(),
    ]));

    let rel = stdout_metric(&out, "rel_frobenius");
    assert!((0.307..=0.317).contains(&rel), "rel_frobenius {rel} outside window");
    assert!(stdout_metric(&out, "detailed_balance_inf") <= 1e-13);
    assert!(stdout_metric(&out, "stochasticity_inf") <= 1e-12);

    let doc: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(doc["schema"], 1);
    assert_eq!(doc["command"], "solve");
    assert_eq!(doc["transient"].as_array().unwrap().len(), 9);
    assert_eq!(doc["classes"].as_array().unwrap().len(), 1);
    assert_eq!(doc["class_traces"][0]["stop"], "gradient_tolerance");
    assert!(doc["metrics"]["rel_frobenius"].as_f64().unwrap() > 0.3);
    assert_eq!(doc["pi_supplied"], false);

    // The women-by-event half of the matrix is untouched transient rows.
    let p = read_mm(&output);
    assert_eq!(p.nrows(), 18);
}

#[test]
fn solving_an_already_reversible_output_is_a_fixed_point() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.mtx");
    let p1 = dir.path().join("p1.mtx");
    let p2 = dir.path().join("p2.mtx");
    run_ok(bin().args(["generate", "--kind", "uniform", "--n", "12", "--seed", "9"])
        .args(["--output", a.to_str().unwrap()]));
    run_ok(bin().args(["solve", "--input", a.to_str().unwrap()])
        .args(["--output", p1.to_str().unwrap()])
        .args(["--report", dir.path().join("r1.json").to_str().unwrap()]));
    let out = run_ok(bin().args(["solve", "--input", p1.to_str().unwrap()])
        .args(["--output", p2.to_str().unwrap()])
        .args(["--report", dir.path().join("r2.json").to_str().unwrap()]));
    // Projecting a point already on the constraint set moves it (almost) nowhere.
    assert!(stdout_metric(&out, "rel_frobenius") <= 1e-7);
}

#[test]
fn oracle_and_solve_agree_on_the_objective() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.mtx");
    run_ok(bin().args(["generate", "--kind", "normal", "--n", "15", "--seed", "3"])
        .args(["--output", a.to_str().unwrap()]));
    let solve = run_ok(bin().args(["solve", "--input", a.to_str().unwrap()])
        .args(["--output", dir.path().join("p.mtx").to_str().unwrap()])
        .args(["--report", dir.path().join("r.json").to_str().unwrap()]));
    let oracle = run_ok(bin().args(["oracle", "--input", a.to_str().unwrap()])
        .args(["--output", dir.path().join("q.mtx").to_str().unwrap()]));
    let fs = stdout_metric(&solve, "objective");
    let fo = stdout_metric(&oracle, "objective");
    assert!(
        (fs - fo).abs() <= 1e-6 * fo.max(1e-30),
        "objectives diverge: solve {fs}, oracle {fo}"
    );
}

#[test]
fn inconsistent_supplied_pi_is_flagged_not_fixed() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.mtx");
    let pi = dir.path().join("pi.csv");
    run_ok(bin().args(["generate", "--kind", "uniform", "--n", "6", "--seed", "4"])
        .args(["--output", a.to_str().unwrap()]));
    // Uniform weights are almost surely not stationary for a random chain.
    std::fs::write(&pi, "0.25\n0.25\n0.125\n0.125\n0.125\n0.125\n").unwrap();
    let report = dir.path().join("r.json");
    let out = run_ok(bin().args(["solve", "--input", a.to_str().unwrap()])
        .args(["--pi", pi.to_str().unwrap()])
        .args(["--output", dir.path().join("p.mtx").to_str().unwrap()])
        .args(["--report", report.to_str().unwrap()]));
    let doc: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(doc["pi_supplied"], true);
    assert_eq!(doc["pi_inconsistent"], true);
    assert!(doc["pi_residual"].as_f64().unwrap() > 1e-8);
    assert!(!doc["warnings"].as_array().unwrap().is_empty());
    assert!(String::from_utf8_lossy(&out.stderr).contains("warning"));
}

#[test]
fn generate_is_bit_reproducible_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let paths: Vec<PathBuf> = (0..3).map(|i| dir.path().join(format!("g{i}.mtx"))).collect();
    for (path, seed) in paths.iter().zip(["11", "11", "12"]) {
        run_ok(bin().args(["generate", "--kind", "sbm", "--n", "16", "--seed", seed])
            .args(["--output", path.to_str().unwrap()]));
    }
    let bytes: Vec<Vec<u8>> = paths.iter().map(|p| std::fs::read(p).unwrap()).collect();
    assert_eq!(bytes[0], bytes[1], "same seed must be bit-identical");
    assert_ne!(bytes[0], bytes[2], "different seeds must differ");
}

#[test]
fn decompose_reports_blocks_and_transient_states() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.mtx");
    run_ok(bin().args(["generate", "--kind", "multi-ergodic", "--n", "13", "--seed", "2"])
        .args(["--output", a.to_str().unwrap()]));
    let out = run_ok(bin().args(["decompose", "--input", a.to_str().unwrap()]));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("states = 13"));
    assert!(text.contains("class 0"));
    assert!(text.contains("class 1"), "multi-ergodic chains have several classes:\n{text}");
}

#[test]
fn simulate_emits_counts_and_a_stochastic_chain() {
    let dir = tempfile::tempdir().unwrap();
    let counts = dir.path().join("counts.mtx");
    let chain = dir.path().join("chain.mtx");
    run_ok(bin().args(["simulate", "--steps", "30000", "--bins", "12", "--seed", "8"])
        .args(["--output-counts", counts.to_str().unwrap()])
        .args(["--output-matrix", chain.to_str().unwrap()]));
    let c = read_mm(&counts);
    assert_eq!(c.nrows(), 12);
    let total: f64 = c.iter().sum();
    assert_eq!(total, 30000.0, "every step lands in exactly one bin pair");
    let p = read_mm(&chain);
    for i in 0..p.nrows() {
        let row: f64 = p.row(i).iter().sum();
        assert!((row - 1.0).abs() <= 1e-12, "row {i} sums to {row}");
    }
}

#[test]
fn bench_writes_merged_metrics_and_profiles() {
    let dir = tempfile::tempdir().unwrap();
    let suite = dir.path().join("suite.txt");
    std::fs::write(&suite, "# two small problems\nuniform,8,1\nsbm,10,2\n").unwrap();
    let out_dir = dir.path().join("results");
    run_ok(bin().args(["bench", "--suite", suite.to_str().unwrap()])
        .args(["--solvers", "riemann,dykstra"])
        .args(["--repeats", "2"])
        .args(["--out-dir", out_dir.to_str().unwrap()]));

    let metrics = std::fs::read_to_string(out_dir.join("metrics.csv")).unwrap();
    let mut lines = metrics.lines();
    let header = "solver,kind,n,seed,repeat,rel_frobenius,detailed_balance_inf,\
                  stationarity_inf,stochasticity_inf,wall_time_s";
    assert_eq!(lines.next().unwrap(), header);
    // 2 entries x 2 repeats x 2 solvers
    assert_eq!(lines.count(), 8);

    let profiles = std::fs::read_to_string(out_dir.join("profiles.csv")).unwrap();
    assert!(profiles.starts_with("solver,metric,tau,rho\n"));
    assert!(profiles.contains("riemann,"));
    assert!(profiles.contains("dykstra,"));

    // One atomic per-run artifact per job.
    let runs = std::fs::read_dir(out_dir.join("runs")).unwrap().count();
    assert_eq!(runs, 8);
}

#[test]
fn format_flag_and_mirroring_control_the_output_encoding() {
    let dir = tempfile::tempdir().unwrap();
    let a_csv = dir.path().join("a.csv");
    run_ok(bin().args(["generate", "--kind", "uniform", "--n", "5", "--seed", "1"])
        .args(["--format", "csv"])
        .args(["--output", a_csv.to_str().unwrap()]));
    let text = std::fs::read_to_string(&a_csv).unwrap();
    assert!(!text.starts_with('%'), "csv output must be headerless");
    assert_eq!(text.lines().count(), 5);

    // CSV in, default out: mirrored CSV.
    let p_csv = dir.path().join("p.csv");
    run_ok(bin().args(["solve", "--input", a_csv.to_str().unwrap()])
        .args(["--output", p_csv.to_str().unwrap()])
        .args(["--report", dir.path().join("r.json").to_str().unwrap()]));
    assert!(!std::fs::read_to_string(&p_csv).unwrap().starts_with('%'));

    // CSV in, explicit --format mm out.
    let p_mm = dir.path().join("p.mtx");
    run_ok(bin().args(["solve", "--input", a_csv.to_str().unwrap()])
        .args(["--format", "mm"])
        .args(["--output", p_mm.to_str().unwrap()])
        .args(["--report", dir.path().join("r2.json").to_str().unwrap()]));
    assert!(std::fs::read_to_string(&p_mm).unwrap().starts_with("%%MatrixMarket"));
}

#[test]
fn input_errors_exit_2_and_leave_an_error_report() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("r.json");
    let out = bin()
        .args(["solve", "--input", dir.path().join("missing.mtx").to_str().unwrap()])
        .args(["--output", dir.path().join("p.mtx").to_str().unwrap()])
        .args(["--report", report.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let doc: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(doc["error"]["exit_code"], 2);
    assert!(doc["error"]["message"].as_str().unwrap().contains("missing.mtx"));

    // Malformed matrix content is also an input error.
    let bad = dir.path().join("bad.mtx");
    std::fs::write(&bad, "%%MatrixMarket matrix coordinate real general\n2 2 4\n").unwrap();
    let out = bin()
        .args(["oracle", "--input", bad.to_str().unwrap()])
        .args(["--output", dir.path().join("q.mtx").to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));

    // Rows that do not sum to one are rejected, not repaired.
    let unstoch = dir.path().join("unstoch.csv");
    std::fs::write(&unstoch, "0.9,0.0\n0.5,0.5\n").unwrap();
    let out = bin()
        .args(["solve", "--input", unstoch.to_str().unwrap()])
        .args(["--output", dir.path().join("p.mtx").to_str().unwrap()])
        .args(["--report", report.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn usage_errors_exit_2() {
    let out = bin().args(["solve", "--input", "a.mtx"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2), "missing required args is a usage error");
    let out = bin().args(["bench", "--suite", "x", "--solvers", "riemann"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}
