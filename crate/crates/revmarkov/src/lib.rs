//! Nearest reversible Markov chain under a fixed stationary distribution.
//!
//! Given a row-stochastic matrix `A` with stationary distribution `π`, the crate
//! computes the reversible stochastic matrix `P` (same `π`) closest to `A` in the
//! Frobenius norm:
//!
//! ```text
//! minimize ½‖X − A‖_F²  over  { X : X1 = 1, D_π X = Xᵀ D_π, X ≥ 0 }
//! ```
//!
//! The main route ([`pipeline::nearest_reversible`]) splits the chain into ergodic
//! classes, maps each class to a manifold of positive symmetric matrices with a
//! fixed Perron eigenvector, and minimizes the objective there with a second-order
//! Riemannian trust-region method ([`solver`]). An independent route
//! ([`oracle::nearest_reversible`]) solves the same projection by Dykstra's
//! alternating projections and is used to cross-check the solver.

pub mod generators;
pub mod manifold;
pub mod markov;
pub mod metrics;
pub mod objective;
pub mod oracle;
pub mod pipeline;
pub mod sinkhorn;
pub mod solver;
