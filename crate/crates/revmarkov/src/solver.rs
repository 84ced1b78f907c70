//! Riemannian trust-region solver with truncated conjugate gradients.
//!
//! Second-order minimization of the quadratic objective over the manifold of
//! positive symmetric matrices with fixed Perron eigenvector. The inner
//! subproblem
//!
//! ```text
//! min_η  f + ⟨g, η⟩ + ½⟨Hess η, η⟩   s.t.  ‖η‖ ≤ δ
//! ```
//!
//! is solved by the Steihaug-Toint truncated conjugate gradient method in the
//! Fisher metric: negative curvature or trust-region violation stops at the
//! boundary, and residual reduction stops at
//! `‖r‖ ≤ ‖r₀‖ · min(κ, ‖r₀‖^θ)`, giving superlinear local convergence.
//!
//! The minimum may sit on the (open) manifold boundary where some entries of
//! the optimal matrix vanish. The solver then drives entries toward zero and
//! eventually cannot decrease the cost by more than roundoff; that state is
//! reported as [`StopReason::LineSearchStall`] or, when the trust region has
//! collapsed, [`StopReason::BoundaryApproach`], with the best iterate found.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::manifold::{Manifold, ManifoldError, Point};
use crate::objective::Objective;

/// Trust region collapse threshold: below this radius the iterate is pinned
/// against the manifold boundary.
pub const DELTA_COLLAPSE: f64 = 1e-12;
/// Predicted reductions below `STALL_FACTOR · |cost|` are roundoff.
pub const STALL_FACTOR: f64 = 1e3 * f64::EPSILON;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("manifold operation failed: {0}")]
    Manifold(#[from] ManifoldError),
}

/// Trust-region parameters. `None` radii and inner-iteration caps default to
/// values derived from the manifold dimension `n(n-1)/2`.
#[derive(Debug, Clone)]
pub struct TrustRegionConfig {
    /// Stop when the Fisher gradient norm falls below this value.
    pub grad_tol: f64,
    /// Cap on outer (retraction) iterations.
    pub max_outer: usize,
    /// Largest admissible radius; default `sqrt(dim)`.
    pub delta_bar: Option<f64>,
    /// Initial radius; default `delta_bar / 8`.
    pub delta0: Option<f64>,
    /// Acceptance threshold on the actual/predicted reduction ratio.
    pub rho_prime: f64,
    /// Linear residual-reduction factor of the inner solve.
    pub kappa: f64,
    /// Superlinear residual-reduction exponent of the inner solve.
    pub theta: f64,
    /// Cap on inner iterations per outer step; default `dim`.
    pub max_inner: Option<usize>,
}

impl Default for TrustRegionConfig {
    fn default() -> Self {
        TrustRegionConfig {
            grad_tol: 1e-6,
            max_outer: 1000,
            delta_bar: None,
            delta0: None,
            rho_prime: 0.1,
            kappa: 0.1,
            theta: 1.0,
            max_inner: None,
        }
    }
}

/// Why the outer loop stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    /// Gradient norm reached `grad_tol`; interior optimum.
    GradientTolerance,
    /// Predicted reduction dropped to roundoff while the gradient is still
    /// large: the iterate is pinned, typically against the boundary.
    LineSearchStall,
    /// Trust region radius collapsed below [`DELTA_COLLAPSE`].
    BoundaryApproach,
    /// Outer iteration budget exhausted.
    MaxIterations,
}

/// One outer iteration, for diagnostics.
#[derive(Debug, Clone, Copy)]
pub struct IterationRecord {
    pub cost: f64,
    pub grad_norm: f64,
    pub delta: f64,
    pub rho: f64,
    pub inner_iterations: usize,
    pub accepted: bool,
    pub hit_boundary: bool,
}

/// Final iterate and convergence report.
#[derive(Debug, Clone)]
pub struct TrustRegionResult {
    pub point: Point,
    pub cost: f64,
    pub grad_norm: f64,
    pub stop: StopReason,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub history: Vec<IterationRecord>,
}

struct TcgOutcome {
    eta: DMatrix<f64>,
    h_eta: DMatrix<f64>,
    iterations: usize,
    hit_boundary: bool,
}

/// Steihaug-Toint truncated CG on the tangent space at `p`.
fn truncated_cg(
    m: &Manifold,
    obj: &Objective,
    p: &Point,
    egrad: &DMatrix<f64>,
    rgrad: &DMatrix<f64>,
    delta: f64,
    cfg: &TrustRegionConfig,
    max_inner: usize,
) -> TcgOutcome {
    let n = rgrad.nrows();
    let mut eta = DMatrix::zeros(n, n);
    let mut h_eta = DMatrix::zeros(n, n);
    let mut r = rgrad.clone();
    let mut d = -r.clone();
    let r0_norm = m.norm(p, &r);
    let stop_tol = r0_norm * cfg.kappa.min(r0_norm.powf(cfg.theta));
    let mut r_r = r0_norm * r0_norm;
    let mut iterations = 0;

    while iterations < max_inner {
        iterations += 1;
        let hd = m.ehess_to_rhess(p, egrad, &obj.ehess(&d), &d);
        let d_hd = m.inner(p, &d, &hd);
        let e_e = m.inner(p, &eta, &eta);
        let e_d = m.inner(p, &eta, &d);
        let d_d = m.inner(p, &d, &d);
        let alpha = r_r / d_hd;
        let next_sq = e_e + 2.0 * alpha * e_d + alpha * alpha * d_d;
        if d_hd <= 0.0 || next_sq >= delta * delta {
            // Step to the trust-region boundary along d.
            let disc = (e_d * e_d + d_d * (delta * delta - e_e)).max(0.0);
            let tau = (-e_d + disc.sqrt()) / d_d;
            eta += &d * tau;
            h_eta += &hd * tau;
            return TcgOutcome { eta, h_eta, iterations, hit_boundary: true };
        }
        eta += &d * alpha;
        h_eta += &hd * alpha;
        r += &hd * alpha;
        let r_r_next = m.inner(p, &r, &r);
        if r_r_next.sqrt() <= stop_tol {
            break;
        }
        let beta = r_r_next / r_r;
        r_r = r_r_next;
        d = -&r + &d * beta;
    }
    TcgOutcome { eta, h_eta, iterations, hit_boundary: false }
}

/// Minimizes the objective over the manifold starting from `start`.
pub fn minimize(
    m: &Manifold,
    obj: &Objective,
    start: Point,
    cfg: &TrustRegionConfig,
) -> Result<TrustRegionResult, SolverError> {
    let dim = m.dim().max(1);
    let delta_bar = cfg.delta_bar.unwrap_or((dim as f64).sqrt());
    let mut delta = cfg.delta0.unwrap_or(delta_bar / 8.0);
    let max_inner = cfg.max_inner.unwrap_or(dim);

    let mut point = start;
    let mut cost = obj.cost(point.matrix());
    let mut egrad = obj.egrad(point.matrix());
    let mut rgrad = m.egrad_to_rgrad(&point, &egrad);
    let mut grad_norm = m.norm(&point, &rgrad);
    let mut history = Vec::new();
    let mut inner_total = 0;

    for outer in 0..cfg.max_outer {
        if grad_norm <= cfg.grad_tol {
            return Ok(TrustRegionResult {
                point,
                cost,
                grad_norm,
                stop: StopReason::GradientTolerance,
                outer_iterations: outer,
                inner_iterations: inner_total,
                history,
            });
        }

        let tcg = truncated_cg(m, obj, &point, &egrad, &rgrad, delta, cfg, max_inner);
        inner_total += tcg.iterations;
        let pred = -(m.inner(&point, &rgrad, &tcg.eta)
            + 0.5 * m.inner(&point, &tcg.eta, &tcg.h_eta));
        if pred <= STALL_FACTOR * cost.abs() {
            // The model cannot improve beyond roundoff; pinned iterate.
            return Ok(TrustRegionResult {
                point,
                cost,
                grad_norm,
                stop: StopReason::LineSearchStall,
                outer_iterations: outer,
                inner_iterations: inner_total,
                history,
            });
        }

        // A failed rescaling means the trial step left the representable
        // cone; treat it like a rejected step and shrink.
        let candidate = m.retract(&point, &tcg.eta).ok();
        let (rho, accepted, new_cost) = match &candidate {
            Some(q) => {
                let c = obj.cost(q.matrix());
                let rho = (cost - c) / pred;
                (rho, rho > cfg.rho_prime, c)
            }
            None => (f64::NEG_INFINITY, false, f64::NAN),
        };
        history.push(IterationRecord {
            cost,
            grad_norm,
            delta,
            rho,
            inner_iterations: tcg.iterations,
            accepted,
            hit_boundary: tcg.hit_boundary,
        });
        if accepted {
            point = candidate.unwrap();
            cost = new_cost;
            egrad = obj.egrad(point.matrix());
            rgrad = m.egrad_to_rgrad(&point, &egrad);
            grad_norm = m.norm(&point, &rgrad);
        }
        if rho < 0.25 {
            delta *= 0.25;
        } else if rho > 0.75 && tcg.hit_boundary {
            delta = (2.0 * delta).min(delta_bar);
        }
        if delta < DELTA_COLLAPSE {
            return Ok(TrustRegionResult {
                point,
                cost,
                grad_norm,
                stop: StopReason::BoundaryApproach,
                outer_iterations: outer + 1,
                inner_iterations: inner_total,
                history,
            });
        }
    }

    Ok(TrustRegionResult {
        point,
        cost,
        grad_norm,
        stop: StopReason::MaxIterations,
        outer_iterations: cfg.max_outer,
        inner_iterations: inner_total,
        history,
    })
}
