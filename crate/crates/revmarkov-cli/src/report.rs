//! JSON report document written by `solve` (`schema: 1`).

use serde::Serialize;

use revmarkov::metrics::MetricSet;
use revmarkov::pipeline::{ClassTrace, SolveReport, Timings};
use revmarkov::solver::StopReason;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Serialize)]
pub struct ReportDoc {
    pub schema: u32,
    pub command: String,
    pub input: String,
    pub output: String,
    pub config: ConfigEcho,
    pub pi_supplied: bool,
    pub pi_inconsistent: bool,
    pub pi_residual: f64,
    pub transient: Vec<usize>,
    pub classes: Vec<Vec<usize>>,
    pub class_traces: Vec<TraceDoc>,
    /// Recomputed from the matrix re-read from `output`, so the report
    /// describes the serialized artifact, not in-memory state.
    pub metrics: MetricSet,
    pub stationary: Vec<f64>,
    pub warnings: Vec<String>,
    pub timings: TimingsDoc,
}

#[derive(Debug, Serialize)]
pub struct ConfigEcho {
    pub pi: Option<String>,
    pub recurse_ergodic: bool,
    pub grad_tol: f64,
    pub transient_tol: Option<f64>,
    pub random_init: bool,
    pub seed: u64,
}

#[derive(Debug, Serialize)]
pub struct TraceDoc {
    pub class_id: usize,
    pub states: Vec<usize>,
    pub cost: f64,
    pub grad_norm: f64,
    pub stop: &'static str,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub wall_time_s: f64,
}

#[derive(Debug, Serialize)]
pub struct TimingsDoc {
    pub total_s: f64,
    pub stationary_s: f64,
    pub decompose_s: f64,
    pub solve_s: f64,
}

/// Error document written in place of a report when a stage fails
/// (`exit_code` mirrors the process exit status).
#[derive(Debug, Serialize)]
pub struct ErrorDoc {
    pub schema: u32,
    pub command: String,
    pub error: ErrorBody,
}

#[derive(Debug, Serialize)]
pub struct ErrorBody {
    pub exit_code: i32,
    pub message: String,
}

pub fn stop_reason_str(stop: StopReason) -> &'static str {
    match stop {
        StopReason::GradientTolerance => "gradient_tolerance",
        StopReason::LineSearchStall => "line_search_stall",
        StopReason::BoundaryApproach => "boundary_approach",
        StopReason::MaxIterations => "max_iterations",
    }
}

pub fn trace_doc(t: &ClassTrace) -> TraceDoc {
    TraceDoc {
        class_id: t.class_id,
        states: t.states.clone(),
        cost: t.cost,
        grad_norm: t.grad_norm,
        stop: stop_reason_str(t.stop),
        outer_iterations: t.outer_iterations,
        inner_iterations: t.inner_iterations,
        wall_time_s: t.wall_time_s,
    }
}

pub fn timings_doc(t: &Timings) -> TimingsDoc {
    TimingsDoc {
        total_s: t.total_s,
        stationary_s: t.stationary_s,
        decompose_s: t.decompose_s,
        solve_s: t.solve_s,
    }
}

/// Assembles the full report for a completed solve; `metrics` must already be
/// the recomputed-from-disk set.
#[allow(clippy::too_many_arguments)]
pub fn report_doc(
    input: &str,
    output: &str,
    config: ConfigEcho,
    solve: &SolveReport,
    metrics: MetricSet,
) -> ReportDoc {
    let mut warnings = Vec::new();
    if solve.pi_inconsistent {
        warnings.push(format!(
            "supplied stationary vector has residual {:.3e} > {:.0e}; it was used as-is",
            solve.pi_residual,
            revmarkov::pipeline::PI_CONSISTENCY_TOL
        ));
    }
    if solve.single_solve_with_multiple_classes {
        warnings.push(format!(
            "{} ergodic classes solved on one combined manifold (recurse_ergodic = false); \
             the result admits cross-class transitions and differs from the per-class projection",
            solve.classes.len()
        ));
    }
    ReportDoc {
        schema: SCHEMA_VERSION,
        command: "solve".into(),
        input: input.into(),
        output: output.into(),
        config,
        pi_supplied: solve.pi_supplied,
        pi_inconsistent: solve.pi_inconsistent,
        pi_residual: solve.pi_residual,
        transient: solve.transient.clone(),
        classes: solve.classes.clone(),
        class_traces: solve.class_traces.iter().map(trace_doc).collect(),
        metrics,
        stationary: solve.pi.iter().copied().collect(),
        warnings,
        timings: timings_doc(&solve.timings),
    }
}
