//! Riemannian geometry of the positive symmetric matrices with a fixed
//! Perron eigenvector.
//!
//! The manifold is `M_π̂ = { S : S = Sᵀ, S > 0, S π̂ = π̂ }` carrying the
//! Fisher metric `⟨ξ, η⟩_S = Σ_ij ξ_ij η_ij / S_ij`. Tangent vectors at `S`
//! are the symmetric matrices `ξ` with `ξ π̂ = 0`.
//!
//! The orthogonal projection of a symmetric `Z` onto the tangent space is
//!
//! ```text
//! Π_S(Z) = Z − (α π̂ᵀ + π̂ αᵀ) ⊙ S,   𝒜 α = Z π̂,
//! 𝒜 = diag(S π) + D_π̂ S D_π̂,        π = π̂ ⊙ π̂,
//! ```
//!
//! where `𝒜` is symmetric positive definite; its Cholesky factor is cached
//! per point. General (non-symmetric) inputs are symmetrized first.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::sinkhorn::{self, SinkhornError, SINKHORN_MAX_ITER, SINKHORN_TOL};

/// Residual tolerance `‖Sπ̂ − π̂‖_∞` accepted when admitting a point.
pub const POINT_TOL: f64 = 1e-10;
/// Entrywise clamp on `ξ ⊘ S` inside the retraction exponential.
pub const EXP_CLAMP: f64 = 50.0;

#[derive(Debug, Error)]
pub enum ManifoldError {
    #[error("matrix is not symmetric: |S - Sᵀ| reaches {asym:e}")]
    NotSymmetric { asym: f64 },
    #[error("entry ({i},{j}) = {value:e} is not strictly positive")]
    NonPositiveEntry { i: usize, j: usize, value: f64 },
    #[error("fixed-vector residual {residual:e} exceeds {tol:e}")]
    NotOnManifold { residual: f64, tol: f64 },
    #[error("projection operator is not positive definite")]
    ProjectionSolve,
    #[error("retraction rescaling failed: {0}")]
    Retraction(#[from] SinkhornError),
}

/// The manifold for one stationary distribution; owns `π̂` and `π`.
#[derive(Debug, Clone)]
pub struct Manifold {
    pi_hat: DVector<f64>,
    pi: DVector<f64>,
}

/// A validated point `S` with the Cholesky factor of its projection
/// operator `𝒜`.
#[derive(Debug, Clone)]
pub struct Point {
    s: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
}

impl Point {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.s
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.s
    }
}

fn sym(z: &DMatrix<f64>) -> DMatrix<f64> {
    let n = z.nrows();
    let mut out = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = 0.5 * (z[(i, j)] + z[(j, i)]);
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    out
}

impl Manifold {
    /// `pi_hat` must be strictly positive with `‖π̂‖₂ = 1`.
    pub fn new(pi_hat: DVector<f64>) -> Self {
        let pi = pi_hat.component_mul(&pi_hat);
        Manifold { pi_hat, pi }
    }

    pub fn dim(&self) -> usize {
        let n = self.pi_hat.len();
        n * (n - 1) / 2
    }

    pub fn pi_hat(&self) -> &DVector<f64> {
        &self.pi_hat
    }

    pub fn pi(&self) -> &DVector<f64> {
        &self.pi
    }

    /// Validates `S` and caches the Cholesky factor of `𝒜(S)`.
    pub fn point(&self, s: DMatrix<f64>) -> Result<Point, ManifoldError> {
        let n = s.nrows();
        let asym = (&s - s.transpose()).amax();
        if asym > POINT_TOL {
            return Err(ManifoldError::NotSymmetric { asym });
        }
        for i in 0..n {
            for j in 0..n {
                let v = s[(i, j)];
                if !(v > 0.0) || !v.is_finite() {
                    return Err(ManifoldError::NonPositiveEntry { i, j, value: v });
                }
            }
        }
        let residual = (&s * &self.pi_hat - &self.pi_hat).amax();
        if residual > POINT_TOL {
            return Err(ManifoldError::NotOnManifold { residual, tol: POINT_TOL });
        }
        let s = sym(&s);
        let s_pi = &s * &self.pi;
        let mut op = DMatrix::from_fn(n, n, |i, j| self.pi_hat[i] * s[(i, j)] * self.pi_hat[j]);
        for i in 0..n {
            op[(i, i)] += s_pi[i];
        }
        let chol = Cholesky::new(op).ok_or(ManifoldError::ProjectionSolve)?;
        Ok(Point { s, chol })
    }

    /// Fisher inner product at `p`.
    pub fn inner(&self, p: &Point, xi: &DMatrix<f64>, eta: &DMatrix<f64>) -> f64 {
        let n = p.s.nrows();
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                acc += xi[(i, j)] * eta[(i, j)] / p.s[(i, j)];
            }
        }
        acc
    }

    pub fn norm(&self, p: &Point, xi: &DMatrix<f64>) -> f64 {
        self.inner(p, xi, xi).sqrt()
    }

    fn solve_alpha(&self, p: &Point, rhs: &DVector<f64>) -> DVector<f64> {
        p.chol.solve(rhs)
    }

    /// `Z − (απ̂ᵀ + π̂αᵀ) ⊙ S` for symmetric `Z`; the caller guarantees
    /// symmetry (use [`Manifold::project`] otherwise).
    fn project_sym(&self, p: &Point, z: &DMatrix<f64>) -> DMatrix<f64> {
        let alpha = self.solve_alpha(p, &(z * &self.pi_hat));
        self.apply_correction(p, z, &alpha)
    }

    fn apply_correction(&self, p: &Point, z: &DMatrix<f64>, alpha: &DVector<f64>) -> DMatrix<f64> {
        let n = z.nrows();
        let mut out = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let c = alpha[i] * self.pi_hat[j] + self.pi_hat[i] * alpha[j];
                let v = z[(i, j)] - c * p.s[(i, j)];
                out[(i, j)] = v;
                out[(j, i)] = v;
            }
        }
        out
    }

    /// Orthogonal projection of an arbitrary ambient matrix onto the tangent
    /// space at `p` (symmetrizes first).
    pub fn project(&self, p: &Point, z: &DMatrix<f64>) -> DMatrix<f64> {
        self.project_sym(p, &sym(z))
    }

    /// Riemannian gradient from the Euclidean gradient `egrad`:
    /// `Π_S(sym(egrad ⊙ S))`.
    pub fn egrad_to_rgrad(&self, p: &Point, egrad: &DMatrix<f64>) -> DMatrix<f64> {
        self.project_sym(p, &sym(&egrad.component_mul(&p.s)))
    }

    /// Riemannian Hessian along the tangent `xi` from the Euclidean gradient
    /// `egrad` and the Euclidean Hessian action `ehess_xi = ∇²f(S)[ξ]`.
    ///
    /// Differentiates the gradient field through the projection (the `α̇`
    /// solve) and adds the Fisher-metric connection correction
    /// `−½ Π((rgrad ⊙ ξ) ⊘ S)`.
    pub fn ehess_to_rhess(
        &self,
        p: &Point,
        egrad: &DMatrix<f64>,
        ehess_xi: &DMatrix<f64>,
        xi: &DMatrix<f64>,
    ) -> DMatrix<f64> {
        let n = p.s.nrows();
        let gamma = sym(&egrad.component_mul(&p.s));
        let gamma_dot = sym(&(ehess_xi.component_mul(&p.s) + egrad.component_mul(xi)));

        let alpha = self.solve_alpha(p, &(&gamma * &self.pi_hat));
        // 𝒜̇ α = (ξπ) ⊙ α + π̂ ⊙ (ξ (π̂ ⊙ α)); move it to the right-hand side.
        let xi_pi = xi * &self.pi;
        let xi_pa = xi * self.pi_hat.component_mul(&alpha);
        let mut b = &gamma_dot * &self.pi_hat;
        for i in 0..n {
            b[i] -= xi_pi[i] * alpha[i] + self.pi_hat[i] * xi_pa[i];
        }
        let alpha_dot = self.solve_alpha(p, &b);

        // D grad = γ̇ − (α̇π̂ᵀ + π̂α̇ᵀ)⊙S − (απ̂ᵀ + π̂αᵀ)⊙ξ, projected.
        let mut dgrad = DMatrix::zeros(n, n);
        let mut rgrad = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let c = alpha[i] * self.pi_hat[j] + self.pi_hat[i] * alpha[j];
                let cdot = alpha_dot[i] * self.pi_hat[j] + self.pi_hat[i] * alpha_dot[j];
                let g = gamma[(i, j)] - c * p.s[(i, j)];
                let d = gamma_dot[(i, j)] - cdot * p.s[(i, j)] - c * xi[(i, j)];
                rgrad[(i, j)] = g;
                rgrad[(j, i)] = g;
                dgrad[(i, j)] = d;
                dgrad[(j, i)] = d;
            }
        }
        let mut correction = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                correction[(i, j)] = rgrad[(i, j)] * xi[(i, j)] / p.s[(i, j)];
            }
        }
        self.project_sym(p, &dgrad) - 0.5 * self.project_sym(p, &correction)
    }

    /// First-order retraction: rescale `S ⊙ exp(ξ ⊘ S)` back onto the
    /// manifold. The exponent is clamped entrywise to `±EXP_CLAMP` so huge
    /// trial steps stay finite.
    pub fn retract(&self, p: &Point, xi: &DMatrix<f64>) -> Result<Point, ManifoldError> {
        let n = p.s.nrows();
        let y = DMatrix::from_fn(n, n, |i, j| {
            let t = (xi[(i, j)] / p.s[(i, j)]).clamp(-EXP_CLAMP, EXP_CLAMP);
            p.s[(i, j)] * t.exp()
        });
        let norm = sinkhorn::normalize_to_manifold(&y, &self.pi_hat, SINKHORN_TOL, SINKHORN_MAX_ITER)?;
        self.point(norm.matrix)
    }

    /// Random point: elementwise exponential of a scaled symmetric Gaussian,
    /// rescaled onto the manifold.
    pub fn random_point<R: Rng>(&self, rng: &mut R) -> Result<Point, ManifoldError> {
        let n = self.pi_hat.len();
        let w = DMatrix::from_fn(n, n, |_, _| {
            let g: f64 = StandardNormal.sample(rng);
            (0.5 * g).exp()
        });
        let norm = sinkhorn::normalize_to_manifold(&sym(&w), &self.pi_hat, SINKHORN_TOL, SINKHORN_MAX_ITER)?;
        self.point(norm.matrix)
    }

    /// Random tangent vector at `p`, scaled to unit Fisher norm.
    pub fn random_tangent<R: Rng>(&self, p: &Point, rng: &mut R) -> DMatrix<f64> {
        let n = p.s.nrows();
        let w = DMatrix::from_fn(n, n, |_, _| {
            let g: f64 = StandardNormal.sample(rng);
            g
        });
        let xi = self.project_sym(p, &sym(&w.component_mul(&p.s)));
        let norm = self.norm(p, &xi);
        xi / norm
    }
}
