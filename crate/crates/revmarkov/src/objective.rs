//! Frobenius-distance objective in manifold coordinates.
//!
//! A stochastic matrix `P` reversible with respect to `π` corresponds to the
//! symmetric point `S = D_π̂ P D_π̂⁻¹` (with `π̂ = √π` entrywise). The distance
//! to the target chain `A` becomes
//!
//! ```text
//! f(S) = ½ ‖D_π̂⁻¹ S D_π̂ − A‖²_F = ½ Σ_ij ((S_ij − Â_ij) π̂_j / π̂_i)²,
//! Â = D_π̂ A D_π̂⁻¹,
//! ```
//!
//! a strictly convex quadratic in `S`. Its Euclidean gradient and (constant)
//! Hessian action are entrywise rescalings, so every evaluation is `O(n²)`.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::manifold::{Manifold, ManifoldError, Point};
use crate::sinkhorn::{self, SINKHORN_MAX_ITER, SINKHORN_TOL};

/// Default asymmetry tolerance accepted by [`to_manifold`].
pub const REVERSIBILITY_TOL: f64 = 1e-8;
/// Entry floor, relative to the largest entry, applied to the initial guess.
pub const INITIAL_FLOOR: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum ObjectiveError {
    #[error("conjugated matrix has asymmetry {asym:e} (tol {tol:e}); chain is not reversible for this stationary distribution")]
    NotReversible { asym: f64, tol: f64 },
}

/// Maps a manifold point back to a stochastic matrix: `P = D_π̂⁻¹ S D_π̂`.
pub fn from_manifold(s: &DMatrix<f64>, pi_hat: &DVector<f64>) -> DMatrix<f64> {
    let n = s.nrows();
    DMatrix::from_fn(n, n, |i, j| s[(i, j)] * pi_hat[j] / pi_hat[i])
}

/// Maps a `π`-reversible stochastic matrix to manifold coordinates:
/// `S = D_π̂ P D_π̂⁻¹`, which must come out symmetric.
pub fn to_manifold(
    p: &DMatrix<f64>,
    pi_hat: &DVector<f64>,
    tol: f64,
) -> Result<DMatrix<f64>, ObjectiveError> {
    let n = p.nrows();
    let raw = DMatrix::from_fn(n, n, |i, j| p[(i, j)] * pi_hat[i] / pi_hat[j]);
    let asym = (&raw - raw.transpose()).amax();
    if asym > tol {
        return Err(ObjectiveError::NotReversible { asym, tol });
    }
    // Store the exact symmetrization so downstream symmetry checks are free.
    let mut s = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = 0.5 * (raw[(i, j)] + raw[(j, i)]);
            s[(i, j)] = v;
            s[(j, i)] = v;
        }
    }
    Ok(s)
}

/// The quadratic objective with its conjugated target cached.
#[derive(Debug, Clone)]
pub struct Objective {
    /// `Â = D_π̂ A D_π̂⁻¹`.
    a_hat: DMatrix<f64>,
    /// `(π̂_j / π̂_i)²`, the entrywise Frobenius weights.
    weight2: DMatrix<f64>,
}

impl Objective {
    pub fn new(a: &DMatrix<f64>, pi_hat: &DVector<f64>) -> Self {
        let n = a.nrows();
        let a_hat = DMatrix::from_fn(n, n, |i, j| a[(i, j)] * pi_hat[i] / pi_hat[j]);
        let weight2 = DMatrix::from_fn(n, n, |i, j| {
            let w = pi_hat[j] / pi_hat[i];
            w * w
        });
        Objective { a_hat, weight2 }
    }

    pub fn a_hat(&self) -> &DMatrix<f64> {
        &self.a_hat
    }

    /// `½ Σ (S_ij − Â_ij)² w²_ij`.
    pub fn cost(&self, s: &DMatrix<f64>) -> f64 {
        let mut acc = 0.0;
        for (i, (&sv, &av)) in s.iter().zip(self.a_hat.iter()).enumerate() {
            let d = sv - av;
            acc += d * d * self.weight2.as_slice()[i];
        }
        0.5 * acc
    }

    /// Euclidean gradient `(S − Â) ⊙ w²`.
    pub fn egrad(&self, s: &DMatrix<f64>) -> DMatrix<f64> {
        let mut g = s - &self.a_hat;
        g.component_mul_assign(&self.weight2);
        g
    }

    /// Euclidean Hessian action `V ⊙ w²` (constant in `S`).
    pub fn ehess(&self, v: &DMatrix<f64>) -> DMatrix<f64> {
        v.component_mul(&self.weight2)
    }

    /// Feasible initial guess: symmetrize `Â`, lift entries to a floor of
    /// `INITIAL_FLOOR` times the largest entry, and rescale onto the manifold.
    pub fn initial_point(&self, m: &Manifold) -> Result<Point, ManifoldError> {
        let n = self.a_hat.nrows();
        let mut y = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v = 0.5 * (self.a_hat[(i, j)] + self.a_hat[(j, i)]);
                y[(i, j)] = v;
                y[(j, i)] = v;
            }
        }
        let floor = INITIAL_FLOOR * y.amax();
        y.apply(|v| *v = v.max(floor));
        let norm = sinkhorn::normalize_to_manifold(&y, m.pi_hat(), SINKHORN_TOL, SINKHORN_MAX_ITER)?;
        m.point(norm.matrix)
    }
}
