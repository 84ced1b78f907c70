//! Subcommand implementations.

use std::fs;
use std::path::Path;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use revmarkov::generators::{self, GeneratorKind, SdeConfig, BUTANE_COEFFS};
use revmarkov::markov::{self, ErgodicDecomposition, MarkovError, StochasticMatrix};
use revmarkov::metrics::{self, MetricSet, ProfileEntry};
use revmarkov::oracle::{self, DykstraConfig};
use revmarkov::pipeline::{self, PipelineError, SolveRequest};

use crate::format::{self, MatrixFormat};
use crate::report::{self, ConfigEcho, ErrorBody, ErrorDoc};
use crate::{
    BenchArgs, CliError, DecomposeArgs, GenerateArgs, OracleArgs, SimulateArgs, SolveArgs,
};

fn input_err(e: impl std::fmt::Display) -> CliError {
    CliError::Input(e.to_string())
}

fn pipeline_err(e: PipelineError) -> CliError {
    match e {
        PipelineError::PartialFailure { .. } => CliError::Solver(e.to_string()),
        PipelineError::Markov(MarkovError::NoConvergence(_)) => CliError::Solver(e.to_string()),
        other => CliError::Input(other.to_string()),
    }
}

fn read_stochastic(path: &Path) -> Result<(StochasticMatrix, MatrixFormat), CliError> {
    let (raw, fmt) = format::read_matrix(path).map_err(input_err)?;
    if raw.nrows() != raw.ncols() {
        return Err(CliError::Input(format!(
            "{}: transition matrix must be square, found {}x{}",
            path.display(),
            raw.nrows(),
            raw.ncols()
        )));
    }
    let a = StochasticMatrix::new(raw).map_err(input_err)?;
    Ok((a, fmt))
}

fn frobenius_objective(p: &DMatrix<f64>, a: &DMatrix<f64>) -> f64 {
    0.5 * (p - a).norm().powi(2)
}

// ---------------------------------------------------------------- solve ----

pub fn cmd_solve(args: &SolveArgs) -> Result<(), CliError> {
    let result = solve_inner(args);
    if let Err(e) = &result {
        write_error_report(&args.report, "solve", e);
    }
    result
}

fn solve_inner(args: &SolveArgs) -> Result<(), CliError> {
    let (a, in_format) = read_stochastic(&args.input)?;
    let a_raw = a.matrix().clone();
    let mut req = SolveRequest::new(a);
    if let Some(pi_path) = &args.pi {
        req.pi = Some(format::read_vector(pi_path).map_err(input_err)?.0);
    }
    req.recurse_ergodic = args.recurse_ergodic;
    req.random_init = args.random_init.then_some(args.seed);
    req.trust_region.grad_tol = args.grad_tol;
    req.transient_tol = args.transient_tol;

    let solve = pipeline::nearest_reversible(&req).map_err(pipeline_err)?;

    let out_format = args.format.map(MatrixFormat::from).unwrap_or(in_format);
    format::write_matrix(&args.output, solve.p.matrix(), out_format, &[]).map_err(input_err)?;

    // Metrics are recomputed from the serialized artifact so the report
    // describes what a consumer of the output file will observe.
    let (p_back, _) = format::read_matrix(&args.output).map_err(input_err)?;
    let mut mset = metrics::compute_metrics(&a_raw, &p_back, &solve.pi);
    mset.wall_time_s = solve.metrics.wall_time_s;

    let config = ConfigEcho {
        pi: args.pi.as_ref().map(|p| p.display().to_string()),
        recurse_ergodic: args.recurse_ergodic,
        grad_tol: args.grad_tol,
        transient_tol: args.transient_tol,
        random_init: args.random_init,
        seed: args.seed,
    };
    let doc = report::report_doc(
        &args.input.display().to_string(),
        &args.output.display().to_string(),
        config,
        &solve,
        mset,
    );
    let json = serde_json::to_string_pretty(&doc).expect("report serialization cannot fail");
    fs::write(&args.report, json + "\n")
        .map_err(|e| CliError::Input(format!("cannot write {}: {e}", args.report.display())))?;

    for w in &doc.warnings {
        eprintln!("warning: {w}");
    }
    println!("objective = {:e}", frobenius_objective(&p_back, &a_raw));
    println!("rel_frobenius = {:e}", doc.metrics.rel_frobenius);
    println!("detailed_balance_inf = {:e}", doc.metrics.detailed_balance_inf);
    println!("stationarity_inf = {:e}", doc.metrics.stationarity_inf);
    println!("stochasticity_inf = {:e}", doc.metrics.stochasticity_inf);
    println!("wall_time_s = {:e}", doc.metrics.wall_time_s);
    let sizes: Vec<usize> = doc.classes.iter().map(Vec::len).collect();
    println!("classes = {} {:?}, transient = {}", sizes.len(), sizes, doc.transient.len());
    Ok(())
}

fn write_error_report(path: &Path, command: &str, e: &CliError) {
    let doc = ErrorDoc {
        schema: report::SCHEMA_VERSION,
        command: command.into(),
        error: ErrorBody { exit_code: e.exit_code(), message: e.to_string() },
    };
    if let Ok(json) = serde_json::to_string_pretty(&doc) {
        let _ = fs::write(path, json + "\n");
    }
}

// ------------------------------------------------------------- generate ----

pub fn cmd_generate(args: &GenerateArgs) -> Result<(), CliError> {
    let kind: GeneratorKind = args.kind.parse().map_err(CliError::Input)?;
    let g = generators::generate(kind, args.n, args.seed).map_err(input_err)?;
    let mut comments = vec![format!(
        "generator: kind={} n={} seed={}",
        kind.as_str(),
        args.n,
        args.seed
    )];
    if !g.block_sizes.is_empty() {
        comments.push(format!("block sizes: {:?}", g.block_sizes));
    }
    if g.clamped_entries > 0 {
        comments.push(format!("clamped entries: {}", g.clamped_entries));
    }
    let fmt = args.format.map(MatrixFormat::from).unwrap_or(MatrixFormat::MatrixMarket);
    format::write_matrix(&args.output, g.chain.matrix(), fmt, &comments).map_err(input_err)?;
    println!(
        "wrote {} ({} states, kind {}, seed {})",
        args.output.display(),
        args.n,
        kind.as_str(),
        args.seed
    );
    if !g.block_sizes.is_empty() {
        println!("block sizes = {:?}", g.block_sizes);
    }
    Ok(())
}

// ------------------------------------------------------------- simulate ----

fn parse_coeffs(list: &str) -> Result<[f64; 4], CliError> {
    let parts: Vec<&str> = list.split(',').collect();
    if parts.len() != 4 {
        return Err(CliError::Input(format!(
            "--coeffs expects 4 comma-separated numbers, found {}",
            parts.len()
        )));
    }
    let mut coeffs = [0.0; 4];
    for (slot, part) in coeffs.iter_mut().zip(&parts) {
        *slot = part
            .trim()
            .parse()
            .map_err(|_| CliError::Input(format!("--coeffs: invalid number {part:?}")))?;
    }
    Ok(coeffs)
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<(), CliError> {
    let coeffs = match (&args.potential, &args.coeffs) {
        (_, Some(list)) => parse_coeffs(list)?,
        (Some(name), None) if name == "butane" => BUTANE_COEFFS,
        (Some(name), None) => {
            return Err(CliError::Input(format!(
                "unknown potential {name:?}; use \"butane\" or --coeffs"
            )));
        }
        (None, None) => BUTANE_COEFFS,
    };
    if args.output_counts.is_none() && args.output_matrix.is_none() {
        return Err(CliError::Input(
            "nothing to do: pass --output-counts and/or --output-matrix".into(),
        ));
    }
    if args.steps == 0 || args.bins == 0 {
        return Err(CliError::Input("--steps and --bins must be positive".into()));
    }
    let cfg = SdeConfig {
        coeffs,
        steps: args.steps,
        dt: args.dt,
        sigma: args.sigma,
        bins: args.bins,
        seed: args.seed,
        ..SdeConfig::default()
    };
    let counts = generators::simulate_sde(&cfg);
    let fmt = args.format.map(MatrixFormat::from).unwrap_or(MatrixFormat::MatrixMarket);
    let comments = vec![format!(
        "simulate: coeffs={:?} dt={} sigma={} steps={} bins={} seed={}",
        coeffs, args.dt, args.sigma, args.steps, args.bins, args.seed
    )];
    if let Some(path) = &args.output_counts {
        format::write_matrix(path, &counts, fmt, &comments).map_err(input_err)?;
        println!("wrote counts to {}", path.display());
    }
    if let Some(path) = &args.output_matrix {
        let emp = generators::normalize_counts(&counts).map_err(input_err)?;
        format::write_matrix(path, emp.chain.matrix(), fmt, &comments).map_err(input_err)?;
        println!(
            "wrote empirical chain to {} ({} of {} bins visited)",
            path.display(),
            emp.visited.len(),
            args.bins
        );
    }
    Ok(())
}

// --------------------------------------------------------------- oracle ----

/// Dykstra projection with the same transient handling as the pipeline:
/// recurrent block projected, transient rows copied unchanged.
fn dykstra_solve(
    a: &StochasticMatrix,
    pi: Option<DVector<f64>>,
    tol: f64,
) -> Result<(StochasticMatrix, DVector<f64>, usize), CliError> {
    let n = a.n();
    let pi_full = match pi {
        Some(v) => {
            if v.len() != n {
                return Err(CliError::Input(format!(
                    "stationary vector has length {}, chain has {n} states",
                    v.len()
                )));
            }
            let total: f64 = v.iter().sum();
            if !(total > 0.0) {
                return Err(CliError::Input("stationary vector has no mass".into()));
            }
            v / total
        }
        None => markov::stationary_vector(a, markov::STATIONARY_TOL, 100 * n.max(1))
            .map_err(|e| CliError::Solver(e.to_string()))?,
    };
    let transient = markov::detect_transient(&pi_full, markov::default_transient_tol(n));
    if transient.len() == n {
        return Err(CliError::Input("every state is transient at the default threshold".into()));
    }
    let recurrent: Vec<usize> =
        (0..n).filter(|i| !transient.contains(i)).collect();
    let a_r = markov::restrict(a, &recurrent).map_err(input_err)?;
    let mut pi_r = DVector::from_fn(recurrent.len(), |r, _| pi_full[recurrent[r]]);
    for (r, &i) in recurrent.iter().enumerate() {
        if !(pi_r[r] > 0.0) {
            return Err(CliError::Input(format!("stationary mass vanishes on recurrent state {i}")));
        }
    }
    let mass: f64 = pi_r.iter().sum();
    pi_r /= mass;
    let cfg = DykstraConfig { tol, ..DykstraConfig::default() };
    let res = oracle::nearest_reversible(a_r.matrix(), &pi_r, &cfg)
        .map_err(|e| CliError::Solver(e.to_string()))?;
    let decomp = ErgodicDecomposition {
        classes: vec![recurrent.clone()],
        transient: transient.clone(),
        permutation: recurrent.iter().chain(transient.iter()).copied().collect(),
    };
    let p = markov::reassemble(a, &decomp, &[res.matrix]).map_err(input_err)?;
    Ok((p, pi_full, res.iterations))
}

pub fn cmd_oracle(args: &OracleArgs) -> Result<(), CliError> {
    let (a, in_format) = read_stochastic(&args.input)?;
    let pi = match &args.pi {
        Some(path) => Some(format::read_vector(path).map_err(input_err)?.0),
        None => None,
    };
    let (p, pi_full, iterations) = dykstra_solve(&a, pi, args.tol)?;
    let out_format = args.format.map(MatrixFormat::from).unwrap_or(in_format);
    format::write_matrix(&args.output, p.matrix(), out_format, &[]).map_err(input_err)?;
    let mset = metrics::compute_metrics(a.matrix(), p.matrix(), &pi_full);
    println!("objective = {:e}", frobenius_objective(p.matrix(), a.matrix()));
    println!("rel_frobenius = {:e}", mset.rel_frobenius);
    println!("detailed_balance_inf = {:e}", mset.detailed_balance_inf);
    println!("iterations = {iterations}");
    Ok(())
}

// ---------------------------------------------------------------- bench ----

#[derive(Debug, Clone)]
struct SuiteEntry {
    kind: GeneratorKind,
    n: usize,
    seed: u64,
}

fn parse_suite(path: &Path) -> Result<Vec<SuiteEntry>, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
    let mut entries = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(CliError::Input(format!(
                "{}:{}: expected \"kind,n,seed\", found {line:?}",
                path.display(),
                lineno + 1
            )));
        }
        let kind: GeneratorKind = fields[0].parse().map_err(CliError::Input)?;
        let n: usize = fields[1]
            .parse()
            .map_err(|_| CliError::Input(format!("{}:{}: invalid n", path.display(), lineno + 1)))?;
        let seed: u64 = fields[2].parse().map_err(|_| {
            CliError::Input(format!("{}:{}: invalid seed", path.display(), lineno + 1))
        })?;
        entries.push(SuiteEntry { kind, n, seed });
    }
    if entries.is_empty() {
        return Err(CliError::Input(format!("{}: no suite entries", path.display())));
    }
    Ok(entries)
}

struct BenchRun {
    solver: &'static str,
    entry: SuiteEntry,
    repeat: usize,
}

struct BenchOutcome {
    run: BenchRun,
    result: Result<MetricSet, String>,
}

fn bench_riemann(chain: &StochasticMatrix) -> Result<MetricSet, String> {
    let req = SolveRequest::new(chain.clone());
    let report = pipeline::nearest_reversible(&req).map_err(|e| e.to_string())?;
    Ok(report.metrics)
}

fn bench_dykstra(chain: &StochasticMatrix) -> Result<MetricSet, String> {
    let start = Instant::now();
    let (p, pi, _) =
        dykstra_solve(chain, None, oracle::DYKSTRA_TOL).map_err(|e| e.to_string())?;
    let mut mset = metrics::compute_metrics(chain.matrix(), p.matrix(), &pi);
    mset.wall_time_s = start.elapsed().as_secs_f64();
    Ok(mset)
}

const METRIC_COLUMNS: [&str; 5] = [
    "rel_frobenius",
    "detailed_balance_inf",
    "stationarity_inf",
    "stochasticity_inf",
    "wall_time_s",
];

fn metric_value(m: &MetricSet, name: &str) -> f64 {
    match name {
        "rel_frobenius" => m.rel_frobenius,
        "detailed_balance_inf" => m.detailed_balance_inf,
        "stationarity_inf" => m.stationarity_inf,
        "stochasticity_inf" => m.stochasticity_inf,
        "wall_time_s" => m.wall_time_s,
        other => unreachable!("unknown metric column {other}"),
    }
}

fn run_csv_row(run: &BenchRun, m: &MetricSet) -> String {
    let mut row = format!(
        "{},{},{},{},{}",
        run.solver,
        run.entry.kind.as_str(),
        run.entry.n,
        run.entry.seed,
        run.repeat
    );
    for name in METRIC_COLUMNS {
        row.push_str(&format!(",{:.16e}", metric_value(m, name)));
    }
    row.push('\n');
    row
}

fn bench_header() -> String {
    format!("solver,kind,n,seed,repeat,{}\n", METRIC_COLUMNS.join(","))
}

/// Atomic write: temp file in the target directory, then rename.
fn write_atomic(dir: &Path, final_name: &str, contents: &str) -> Result<(), CliError> {
    let mut tmp = tempfile::NamedTempFile::new_in(dir)
        .map_err(|e| CliError::Input(format!("cannot create temp file in {}: {e}", dir.display())))?;
    use std::io::Write as _;
    tmp.write_all(contents.as_bytes())
        .map_err(|e| CliError::Input(format!("cannot write temp file: {e}")))?;
    tmp.persist(dir.join(final_name))
        .map_err(|e| CliError::Input(format!("cannot persist {final_name}: {e}")))?;
    Ok(())
}

pub fn cmd_bench(args: &BenchArgs) -> Result<(), CliError> {
    let entries = parse_suite(&args.suite)?;
    let mut solvers: Vec<&'static str> = Vec::new();
    for name in args.solvers.split(',').map(str::trim) {
        match name {
            "riemann" => solvers.push("riemann"),
            "dykstra" => solvers.push("dykstra"),
            other => {
                return Err(CliError::Input(format!(
                    "unknown solver {other:?}; expected riemann or dykstra"
                )));
            }
        }
    }
    if solvers.is_empty() {
        return Err(CliError::Input("--solvers is empty".into()));
    }
    if args.repeats == 0 {
        return Err(CliError::Input("--repeats must be positive".into()));
    }
    let runs_dir = args.out_dir.join("runs");
    fs::create_dir_all(&runs_dir)
        .map_err(|e| CliError::Input(format!("cannot create {}: {e}", runs_dir.display())))?;

    let mut runs = Vec::new();
    for entry in &entries {
        for repeat in 0..args.repeats {
            for solver in &solvers {
                runs.push(BenchRun { solver, entry: entry.clone(), repeat });
            }
        }
    }

    // Worker pool: every run writes its own file atomically, so a crash or a
    // concurrent reader never observes a half-written entry.
    let outcomes: Vec<BenchOutcome> = runs
        .into_par_iter()
        .map(|run| {
            let result = generators::generate(run.entry.kind, run.entry.n, run.entry.seed)
                .map_err(|e| e.to_string())
                .and_then(|g| match run.solver {
                    "riemann" => bench_riemann(&g.chain),
                    _ => bench_dykstra(&g.chain),
                });
            if let Ok(mset) = &result {
                let name = format!(
                    "{}-n{}-s{}-r{}-{}.csv",
                    run.entry.kind.as_str(),
                    run.entry.n,
                    run.entry.seed,
                    run.repeat,
                    run.solver
                );
                let contents = bench_header() + &run_csv_row(&run, mset);
                if let Err(e) = write_atomic(&runs_dir, &name, &contents) {
                    eprintln!("warning: {e}");
                }
            }
            BenchOutcome { run, result }
        })
        .collect();

    // Barrier passed: assemble the merged table and the profiles.
    let mut merged = bench_header();
    let mut profile_entries = Vec::new();
    let mut failures = 0usize;
    for outcome in &outcomes {
        match &outcome.result {
            Ok(mset) => {
                merged.push_str(&run_csv_row(&outcome.run, mset));
                let problem = format!(
                    "{}-n{}-s{}-r{}",
                    outcome.run.entry.kind.as_str(),
                    outcome.run.entry.n,
                    outcome.run.entry.seed,
                    outcome.run.repeat
                );
                for name in METRIC_COLUMNS {
                    profile_entries.push(ProfileEntry {
                        solver: outcome.run.solver.to_string(),
                        problem: problem.clone(),
                        metric: name.to_string(),
                        value: metric_value(mset, name),
                    });
                }
            }
            Err(message) => {
                failures += 1;
                eprintln!(
                    "warning: {} on {}-n{}-s{} repeat {} failed: {message}",
                    outcome.run.solver,
                    outcome.run.entry.kind.as_str(),
                    outcome.run.entry.n,
                    outcome.run.entry.seed,
                    outcome.run.repeat
                );
            }
        }
    }
    write_atomic(&args.out_dir, "metrics.csv", &merged)?;
    // Profiles need the full solver-by-problem table; drop problems that any
    // solver failed on to keep the ratios well-defined.
    if !profile_entries.is_empty() {
        let complete: Vec<ProfileEntry> = {
            use std::collections::BTreeMap;
            let mut count: BTreeMap<&str, usize> = BTreeMap::new();
            for e in &profile_entries {
                *count.entry(e.problem.as_str()).or_default() += 1;
            }
            let full = solvers.len() * METRIC_COLUMNS.len();
            let keep: Vec<String> = count
                .iter()
                .filter(|(_, &c)| c == full)
                .map(|(p, _)| p.to_string())
                .collect();
            profile_entries
                .iter()
                .filter(|e| keep.contains(&e.problem))
                .cloned()
                .collect()
        };
        if !complete.is_empty() {
            let points = metrics::performance_profile(&complete);
            write_atomic(&args.out_dir, "profiles.csv", &metrics::profile_to_csv(&points))?;
        }
    }
    println!(
        "{} runs complete, {failures} failed; results in {}",
        outcomes.len(),
        args.out_dir.display()
    );
    if failures > 0 {
        return Err(CliError::Solver(format!("{failures} bench runs failed")));
    }
    Ok(())
}

// ------------------------------------------------------------ decompose ----

pub fn cmd_decompose(args: &DecomposeArgs) -> Result<(), CliError> {
    let (a, _) = read_stochastic(&args.input)?;
    let n = a.n();
    let pi = markov::stationary_vector(&a, markov::STATIONARY_TOL, 100 * n.max(1))
        .map_err(|e| CliError::Solver(e.to_string()))?;
    let tol = args.transient_tol.unwrap_or_else(|| markov::default_transient_tol(n));
    let transient = markov::detect_transient(&pi, tol);
    if transient.len() == n {
        return Err(CliError::Input(
            "every state is transient at this threshold; lower --transient-tol".into(),
        ));
    }
    let decomp = markov::ergodic_classes(&a, &transient).map_err(input_err)?;
    println!("states = {n}");
    println!("transient ({}) = {:?}", decomp.transient.len(), decomp.transient);
    for (id, class) in decomp.classes.iter().enumerate() {
        println!("class {id} ({} states) = {:?}", class.len(), class);
    }
    Ok(())
}
