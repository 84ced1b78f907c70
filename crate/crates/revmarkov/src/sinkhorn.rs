//! Diagonal scalings onto the fixed-Perron-eigenvector manifold.
//!
//! Both routines work on the conjugated matrix `Â = D_π̂ A D_π̂` and target the
//! marginals `π = π̂ ⊙ π̂`:
//!
//! ```text
//! balance_symmetric       diag(e) Â diag(e) 1 = π      (A symmetric)
//! normalize_to_manifold   D₁ Â D₂ 1 = π, 1ᵀ D₁ Â D₂ = πᵀ   (A positive)
//! ```
//!
//! Undoing the conjugation turns either scaling into a matrix `S` with
//! `S π̂ = π̂`; the two-sided variant is symmetrized as `½(D₁ÂD₂ + D₂ÂᵀD₁)`
//! before mapping back, so its output is symmetric even for asymmetric input.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Default residual tolerance on `‖Sπ̂ − π̂‖_∞`.
pub const SINKHORN_TOL: f64 = 1e-12;
/// Default iteration cap.
pub const SINKHORN_MAX_ITER: usize = 10_000;
/// Entries below this floor are lifted to it before scaling.
pub const ENTRY_FLOOR: f64 = 1e-300;

#[derive(Debug, Error)]
pub enum SinkhornError {
    #[error("entry ({i},{j}) = {value:e} is negative; scaling needs a nonnegative matrix")]
    NegativeEntry { i: usize, j: usize, value: f64 },
    #[error("scaling residual {residual:e} after {iterations} iterations (tol {tol:e})")]
    NoConvergence {
        iterations: usize,
        residual: f64,
        tol: f64,
    },
}

/// Diagonal scaling produced by [`balance_symmetric`].
#[derive(Debug, Clone)]
pub struct ScalingResult {
    /// Scaling vector: `diag(d) A diag(d)` fixes `π̂`.
    pub d: DVector<f64>,
    pub iterations: usize,
    /// Final `‖(diag(d) A diag(d))π̂ − π̂‖_∞`.
    pub residual: f64,
}

/// Output of [`normalize_to_manifold`].
#[derive(Debug, Clone)]
pub struct Normalized {
    /// Symmetric positive matrix with `matrix · π̂ = π̂` within the tolerance.
    pub matrix: DMatrix<f64>,
    pub iterations: usize,
    pub residual: f64,
}

/// Conjugated matrix `Â = D_π̂ A D_π̂` with the entry floor applied.
fn conjugate(a: &DMatrix<f64>, pi_hat: &DVector<f64>) -> Result<DMatrix<f64>, SinkhornError> {
    let n = a.nrows();
    let mut ah = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let v = a[(i, j)];
            if v < 0.0 || !v.is_finite() {
                return Err(SinkhornError::NegativeEntry { i, j, value: v });
            }
            ah[(i, j)] = (pi_hat[i] * v * pi_hat[j]).max(ENTRY_FLOOR);
        }
    }
    Ok(ah)
}

/// Symmetric scaling: finds `d` so that `diag(d) A diag(d)` has Perron
/// eigenvector `π̂` for symmetric positive `A`.
///
/// Fixed-point update `e ← sqrt(e ⊙ (π ⊘ Âe))`; the geometric-mean damping
/// removes the 2-cycles of the undamped map. Scaling `A` by `c` scales `d`
/// by `1/√c` exactly.
pub fn balance_symmetric(
    a: &DMatrix<f64>,
    pi_hat: &DVector<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<ScalingResult, SinkhornError> {
    let n = a.nrows();
    let ah = conjugate(a, pi_hat)?;
    let pi: DVector<f64> = pi_hat.component_mul(pi_hat);
    let mut e = DVector::from_element(n, 1.0);
    let mut residual = f64::INFINITY;
    for it in 1..=max_iter {
        let ae = &ah * &e;
        for i in 0..n {
            e[i] = (e[i] * pi[i] / ae[i]).sqrt();
        }
        let ae = &ah * &e;
        residual = (0..n)
            .map(|i| ((e[i] * ae[i] - pi[i]) / pi_hat[i]).abs())
            .fold(0.0, f64::max);
        if residual <= tol {
            return Ok(ScalingResult { d: e, iterations: it, residual });
        }
    }
    Err(SinkhornError::NoConvergence { iterations: max_iter, residual, tol })
}

/// Two-sided scaling and symmetrization: maps a positive matrix `Y` to a
/// symmetric positive `S` with `Sπ̂ = π̂`.
///
/// Alternates `d₁ ← π ⊘ Âd₂`, `d₂ ← π ⊘ Âᵀd₁`, then forms
/// `½(D₁ÂD₂ + D₂ÂᵀD₁)` (exactly symmetric row-marginal-π matrix) and undoes
/// the conjugation. For symmetric `Y` this reduces to the symmetric scaling.
pub fn normalize_to_manifold(
    y: &DMatrix<f64>,
    pi_hat: &DVector<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<Normalized, SinkhornError> {
    let n = y.nrows();
    let ah = conjugate(y, pi_hat)?;
    let pi: DVector<f64> = pi_hat.component_mul(pi_hat);
    let mut d1 = DVector::from_element(n, 1.0);
    let mut d2 = DVector::from_element(n, 1.0);
    let mut residual = f64::INFINITY;
    let mut iterations = max_iter;
    for it in 1..=max_iter {
        let ad2 = &ah * &d2;
        for i in 0..n {
            d1[i] = pi[i] / ad2[i];
        }
        let atd1 = ah.tr_mul(&d1);
        for i in 0..n {
            d2[i] = pi[i] / atd1[i];
        }
        // Row sums of the symmetrized scaled matrix, without forming it.
        let ad2 = &ah * &d2;
        let atd1 = ah.tr_mul(&d1);
        residual = (0..n)
            .map(|i| {
                let row = 0.5 * (d1[i] * ad2[i] + d2[i] * atd1[i]);
                ((row - pi[i]) / pi_hat[i]).abs()
            })
            .fold(0.0, f64::max);
        if residual <= tol {
            iterations = it;
            break;
        }
        if it == max_iter {
            return Err(SinkhornError::NoConvergence { iterations: max_iter, residual, tol });
        }
    }
    // Build the upper triangle and mirror it so storage is exactly symmetric.
    let mut s = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let b = 0.5 * (d1[i] * ah[(i, j)] * d2[j] + d2[i] * ah[(j, i)] * d1[j]);
            let v = b / (pi_hat[i] * pi_hat[j]);
            s[(i, j)] = v;
            s[(j, i)] = v;
        }
    }
    Ok(Normalized { matrix: s, iterations, residual })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_pi_hat(n: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
        let mut pi = DVector::from_fn(n, |_, _| rng.gen::<f64>() + 0.25);
        let total: f64 = pi.iter().sum();
        pi /= total;
        pi.map(f64::sqrt)
    }

    fn random_sym(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let x = DMatrix::from_fn(n, n, |_, _| rng.gen::<f64>() + 0.05);
        (&x + x.transpose()) * 0.5
    }

    #[test]
    fn symmetric_balance_fixes_pi_hat() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_sym(6, &mut rng);
        let pi_hat = random_pi_hat(6, &mut rng);
        let res = balance_symmetric(&a, &pi_hat, SINKHORN_TOL, SINKHORN_MAX_ITER).unwrap();
        let scaled = DMatrix::from_fn(6, 6, |i, j| res.d[i] * a[(i, j)] * res.d[j]);
        let err = (&scaled * &pi_hat - &pi_hat).amax();
        assert!(err <= 1e-11, "residual {err:e} after {} iterations", res.iterations);
    }

    #[test]
    fn scaling_is_exactly_homogeneous() {
        // d(cA) = d(A)/√c; with c = 4 every iterate scales by a power of two,
        // so the relation is exact in floating point.
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_sym(5, &mut rng);
        let pi_hat = random_pi_hat(5, &mut rng);
        let base = balance_symmetric(&a, &pi_hat, SINKHORN_TOL, SINKHORN_MAX_ITER).unwrap();
        let scaled = balance_symmetric(&(a * 4.0), &pi_hat, SINKHORN_TOL, SINKHORN_MAX_ITER).unwrap();
        for i in 0..5 {
            assert_eq!(scaled.d[i], base.d[i] / 2.0);
        }
    }

    #[test]
    fn normalized_point_is_symmetric_positive_and_fixed() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let y = DMatrix::from_fn(7, 7, |_, _| rng.gen::<f64>() + 0.01);
        let pi_hat = random_pi_hat(7, &mut rng);
        let norm = normalize_to_manifold(&y, &pi_hat, SINKHORN_TOL, SINKHORN_MAX_ITER).unwrap();
        let s = &norm.matrix;
        assert_eq!(s, &s.transpose(), "storage must be exactly symmetric");
        assert!(s.iter().all(|&v| v > 0.0));
        let err = (s * &pi_hat - &pi_hat).amax();
        assert!(err <= 1e-11, "fixed-vector residual {err:e}");
    }

    #[test]
    fn negative_input_is_rejected() {
        let mut y = DMatrix::from_element(3, 3, 1.0);
        y[(1, 2)] = -0.5;
        let pi_hat = DVector::from_element(3, (1.0f64 / 3.0).sqrt());
        assert!(matches!(
            normalize_to_manifold(&y, &pi_hat, SINKHORN_TOL, SINKHORN_MAX_ITER),
            Err(SinkhornError::NegativeEntry { i: 1, j: 2, .. })
        ));
    }

    proptest! {
        #[test]
        fn normalization_residual_meets_tolerance(seed in 0u64..32) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 2 + (seed % 6) as usize;
            let y = DMatrix::from_fn(n, n, |_, _| rng.gen::<f64>() + 1e-3);
            let pi_hat = random_pi_hat(n, &mut rng);
            let norm = normalize_to_manifold(&y, &pi_hat, SINKHORN_TOL, SINKHORN_MAX_ITER).unwrap();
            let err = (&norm.matrix * &pi_hat - &pi_hat).amax();
            prop_assert!(err <= 10.0 * SINKHORN_TOL);
            prop_assert!(norm.residual <= SINKHORN_TOL);
        }
    }
}
