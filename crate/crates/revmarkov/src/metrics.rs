//! Solution-quality metrics, the stationary-perturbation lower bound, and
//! Dolan-More performance profiles.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Floor applied to metric values before forming performance ratios, so
/// exact-zero residuals (machine-precision wins) do not divide by zero.
pub const PROFILE_EPS_FLOOR: f64 = 1e-18;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("I - P + 1πᵀ is singular; π is not the stationary distribution of P")]
    SingularFundamentalMatrix,
}

/// Quality of a reversible approximation `P` to the target chain `A`.
///
/// All matrix and vector ∞-norms are max-absolute-entry norms.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricSet {
    /// `‖A − P‖_F / ‖A‖_F`.
    pub rel_frobenius: f64,
    /// `‖D_π P − Pᵀ D_π‖_∞`.
    pub detailed_balance_inf: f64,
    /// `‖πᵀP − πᵀ‖_∞`.
    pub stationarity_inf: f64,
    /// `‖P1 − 1‖_∞`.
    pub stochasticity_inf: f64,
    /// Filled by the caller that timed the solve; 0 otherwise.
    pub wall_time_s: f64,
}

/// Recomputes every metric from scratch.
pub fn compute_metrics(a: &DMatrix<f64>, p: &DMatrix<f64>, pi: &DVector<f64>) -> MetricSet {
    let n = p.nrows();
    let rel_frobenius = (a - p).norm() / a.norm();
    let mut detailed_balance_inf = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            let defect = (pi[i] * p[(i, j)] - pi[j] * p[(j, i)]).abs();
            detailed_balance_inf = detailed_balance_inf.max(defect);
        }
    }
    let stationarity_inf = (p.tr_mul(pi) - pi).amax();
    let mut stochasticity_inf = 0.0f64;
    for i in 0..n {
        let row_sum: f64 = p.row(i).iter().sum();
        stochasticity_inf = stochasticity_inf.max((row_sum - 1.0).abs());
    }
    MetricSet {
        rel_frobenius,
        detailed_balance_inf,
        stationarity_inf,
        stochasticity_inf,
        wall_time_s: 0.0,
    }
}

/// Induced ∞-norm: largest absolute row sum.
pub fn induced_inf_norm(m: &DMatrix<f64>) -> f64 {
    (0..m.nrows())
        .map(|i| m.row(i).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Lower bounds on the solution shift caused by perturbing the stationary
/// distribution from `π` to `π + δ`, both instantiated in the ∞-norm:
///
/// ```text
/// ‖Δ‖_∞  ≥ ‖(I − P + 1πᵀ)⁻¹‖_∞⁻¹ · ‖δ‖_∞ / ‖π + δ‖_∞
/// ‖Δᵀ‖_∞ ≥ ‖(I − Pᵀ + π1ᵀ)⁻¹‖_∞⁻¹ · ‖δ‖_∞ / ‖π + δ‖_∞
/// ```
///
/// where `Δ` is the difference between the reversible solutions for the two
/// distributions. Returns `(bound, transposed_bound)`; the fundamental matrix
/// is inverted by dense LU.
pub fn perturbation_lower_bound(
    p: &DMatrix<f64>,
    pi: &DVector<f64>,
    delta: &DVector<f64>,
) -> Result<(f64, f64), MetricsError> {
    let n = p.nrows();
    let mut fundamental = -p.clone();
    for i in 0..n {
        fundamental[(i, i)] += 1.0;
        for j in 0..n {
            fundamental[(i, j)] += pi[j];
        }
    }
    let z = fundamental
        .lu()
        .try_inverse()
        .ok_or(MetricsError::SingularFundamentalMatrix)?;
    let delta_inf = delta.amax();
    if delta_inf == 0.0 {
        return Ok((0.0, 0.0));
    }
    let denom = (pi + delta).amax();
    let bound = delta_inf / (induced_inf_norm(&z) * denom);
    let bound_t = delta_inf / (induced_inf_norm(&z.transpose()) * denom);
    Ok((bound, bound_t))
}

/// One measurement for the performance profile: `value` of `metric` achieved
/// by `solver` on `problem`.
#[derive(Debug, Clone)]
pub struct ProfileEntry {
    pub solver: String,
    pub problem: String,
    pub metric: String,
    pub value: f64,
}

/// A vertex of the step function `ρ_solver(τ)` for one metric.
#[derive(Debug, Clone)]
pub struct ProfilePoint {
    pub solver: String,
    pub metric: String,
    pub tau: f64,
    pub rho: f64,
}

/// Dolan-More performance profiles: per problem the ratio
/// `r = value / min_solvers value` (with values floored at
/// [`PROFILE_EPS_FLOOR`]), per solver the fraction of problems with ratio at
/// most `τ`, evaluated at every distinct ratio of that metric.
///
/// The table must contain every (solver, problem) pair once per metric.
pub fn performance_profile(entries: &[ProfileEntry]) -> Vec<ProfilePoint> {
    use std::collections::BTreeMap;
    // metric -> problem -> solver -> value
    let mut table: BTreeMap<&str, BTreeMap<&str, Vec<(&str, f64)>>> = BTreeMap::new();
    for e in entries {
        table
            .entry(&e.metric)
            .or_default()
            .entry(&e.problem)
            .or_default()
            .push((&e.solver, e.value.max(PROFILE_EPS_FLOOR)));
    }
    let mut points = Vec::new();
    for (metric, problems) in &table {
        // ratios per solver across problems
        let mut ratios: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
        let n_problems = problems.len();
        for values in problems.values() {
            let best = values.iter().map(|&(_, v)| v).fold(f64::INFINITY, f64::min);
            for &(solver, v) in values {
                ratios.entry(solver).or_default().push(v / best);
            }
        }
        let mut taus: Vec<f64> = ratios.values().flatten().copied().collect();
        taus.sort_by(|a, b| a.total_cmp(b));
        taus.dedup();
        for (solver, rs) in &ratios {
            for &tau in &taus {
                let hit = rs.iter().filter(|&&r| r <= tau).count();
                points.push(ProfilePoint {
                    solver: solver.to_string(),
                    metric: metric.to_string(),
                    tau,
                    rho: hit as f64 / n_problems as f64,
                });
            }
        }
    }
    points
}

/// Renders profile points as CSV with columns `solver,metric,tau,rho`.
pub fn profile_to_csv(points: &[ProfilePoint]) -> String {
    let mut out = String::from("solver,metric,tau,rho\n");
    for p in points {
        out.push_str(&format!("{},{},{:.17e},{:.17e}\n", p.solver, p.metric, p.tau, p.rho));
    }
    out
}
