//! Stochastic matrices, stationary distributions, and ergodic structure.
//!
//! A chain is represented by a validated row-stochastic matrix. The stationary
//! distribution is obtained by power iteration on `Aᵀ`; states whose stationary
//! mass is numerically zero are transient, and the remaining states split into
//! closed communicating classes found with Tarjan's algorithm. `restrict` and
//! `reassemble` move between the full chain and its per-class blocks.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Row sums must match 1 within this tolerance after validation.
pub const ROW_SUM_TOL: f64 = 1e-12;
/// Rows off by more than [`ROW_SUM_TOL`] but within this window are renormalized.
pub const ROW_SUM_REPAIR_TOL: f64 = 1e-9;
/// Leak tolerance when restricting to a closed set of states.
pub const RESTRICT_LEAK_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum MarkovError {
    #[error("entry ({i},{j}) = {value:e} is negative")]
    NegativeEntry { i: usize, j: usize, value: f64 },
    #[error("row {i} sums to {sum:.17e}; repair window is 1 ± {ROW_SUM_REPAIR_TOL:e}")]
    RowSumViolation { i: usize, sum: f64 },
    #[error("power iteration did not reach tol within {0} iterations")]
    NoConvergence(usize),
    #[error("communicating class {0} of the recurrent states has outgoing mass; transient_tol is inconsistent")]
    OpenClass(usize),
    #[error("row {i} leaks mass {leaked:e} outside the restriction index set")]
    MassLeak { i: usize, leaked: f64 },
    #[error("solved block shapes do not match the decomposition")]
    ShapeMismatch,
}

/// Row-stochastic matrix: entries ≥ 0, each row summing to 1 within [`ROW_SUM_TOL`].
#[derive(Debug, Clone, PartialEq)]
pub struct StochasticMatrix {
    a: DMatrix<f64>,
}

impl StochasticMatrix {
    /// Validates `a` and wraps it. Entries must be nonnegative. Rows whose sum
    /// deviates from 1 by more than [`ROW_SUM_TOL`] but at most
    /// [`ROW_SUM_REPAIR_TOL`] are renormalized; larger deviations are rejected.
    /// Rows already inside the strict tolerance are kept bit-identical.
    pub fn new(a: DMatrix<f64>) -> Result<Self, MarkovError> {
        let mut a = a;
        assert_eq!(a.nrows(), a.ncols(), "transition matrix must be square");
        for i in 0..a.nrows() {
            for j in 0..a.ncols() {
                let v = a[(i, j)];
                if v < 0.0 || !v.is_finite() {
                    return Err(MarkovError::NegativeEntry { i, j, value: v });
                }
            }
        }
        for i in 0..a.nrows() {
            let sum: f64 = a.row(i).iter().sum();
            let dev = (sum - 1.0).abs();
            if dev <= ROW_SUM_TOL {
                continue;
            }
            if dev <= ROW_SUM_REPAIR_TOL {
                for j in 0..a.ncols() {
                    a[(i, j)] /= sum;
                }
            } else {
                return Err(MarkovError::RowSumViolation { i, sum });
            }
        }
        Ok(Self { a })
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.a
    }
}

/// Stationary distribution `π` together with its entrywise square root `π̂`.
///
/// `π̂ ⊙ π̂` reproduces `π` within 1e-14; `support` lists the states with
/// strictly positive mass.
#[derive(Debug, Clone)]
pub struct StationaryDistribution {
    pub pi: DVector<f64>,
    pub pi_hat: DVector<f64>,
    pub support: Vec<usize>,
}

impl StationaryDistribution {
    /// Wraps a nonnegative vector, normalizing it to total mass 1.
    pub fn new(pi: DVector<f64>) -> Self {
        let total: f64 = pi.iter().sum();
        assert!(total > 0.0, "stationary vector must carry positive mass");
        let pi = pi / total;
        let pi_hat = pi.map(f64::sqrt);
        let support = (0..pi.len()).filter(|&i| pi[i] > 0.0).collect();
        Self { pi, pi_hat, support }
    }

    pub fn n(&self) -> usize {
        self.pi.len()
    }
}

/// Default convergence tolerance for [`stationary_vector`].
pub const STATIONARY_TOL: f64 = 1e-13;

/// Default iteration cap for [`stationary_vector`], as a multiple of `n`.
///
/// Sized for metastable chains: an empirical double-well chain mixes on the
/// order of 1e5 steps, far beyond the spectral-gap-friendly budgets that
/// suffice for dense random instances. Converged runs stop at `tol`
/// regardless, so only genuinely stuck inputs pay the full cap.
pub const STATIONARY_MAX_ITER_PER_STATE: usize = 20_000;

/// Stationary distribution by power iteration on `Aᵀ` from the uniform vector.
///
/// The uniform start charges every ergodic class, so for a reducible chain the
/// limit weights each class by the start mass it captures. Plain iteration
/// stalls on (nearly) periodic chains; when the residual stops shrinking the
/// update switches to the damped map `x ← 0.9·Aᵀx + 0.1·x`, which has the same
/// fixed points but a contractive spectrum on the periodic part.
pub fn stationary_vector(
    a: &StochasticMatrix,
    tol: f64,
    max_iter: usize,
) -> Result<DVector<f64>, MarkovError> {
    const DAMPING: f64 = 0.1;
    let m = a.matrix();
    let n = a.n();
    let mut x = DVector::from_element(n, 1.0 / n as f64);
    let mut damped = false;
    let mut res_window = f64::INFINITY;
    for it in 0..max_iter {
        let mut next = m.tr_mul(&x);
        if damped {
            next = next * (1.0 - DAMPING) + &x * DAMPING;
        }
        let total: f64 = next.iter().sum();
        next /= total;
        let res = residual_inf(m, &next);
        if res <= tol {
            return Ok(next);
        }
        // Less than ~35% residual decay over 10 iterations counts as a stall.
        if !damped && it % 10 == 9 {
            if res > 0.6 * res_window {
                damped = true;
            }
            res_window = res;
        }
        x = next;
    }
    Err(MarkovError::NoConvergence(max_iter))
}

fn residual_inf(m: &DMatrix<f64>, x: &DVector<f64>) -> f64 {
    let y = m.tr_mul(x);
    (y - x).amax()
}

/// Default transient threshold for an `n`-state chain.
pub fn default_transient_tol(n: usize) -> f64 {
    1e-12 * n as f64
}

/// States whose stationary mass falls below `transient_tol`.
pub fn detect_transient(pi: &DVector<f64>, transient_tol: f64) -> Vec<usize> {
    (0..pi.len()).filter(|&i| pi[i] < transient_tol).collect()
}

/// Ergodic classes plus transient states, with a permutation listing class
/// states first (class by class) and transient states last.
#[derive(Debug, Clone)]
pub struct ErgodicDecomposition {
    pub classes: Vec<Vec<usize>>,
    pub transient: Vec<usize>,
    pub permutation: Vec<usize>,
}

/// Splits the recurrent states (complement of `transient`) into closed
/// communicating classes. Edges are the strictly positive entries of `A`.
/// A recurrent class with outgoing mass above [`RESTRICT_LEAK_TOL`] per row
/// means the transient threshold misclassified a state.
pub fn ergodic_classes(
    a: &StochasticMatrix,
    transient: &[usize],
) -> Result<ErgodicDecomposition, MarkovError> {
    let n = a.n();
    let m = a.matrix();
    let is_transient = {
        let mut mask = vec![false; n];
        for &t in transient {
            mask[t] = true;
        }
        mask
    };
    let recurrent: Vec<usize> = (0..n).filter(|&i| !is_transient[i]).collect();
    // Directed subgraph on the recurrent states.
    let mut local = vec![usize::MAX; n];
    for (k, &i) in recurrent.iter().enumerate() {
        local[i] = k;
    }
    let graph: Vec<Vec<usize>> = recurrent
        .iter()
        .map(|&i| {
            recurrent
                .iter()
                .filter(|&&j| m[(i, j)] > 0.0)
                .map(|&j| local[j])
                .collect()
        })
        .collect();
    let mut classes: Vec<Vec<usize>> = tarjan_scc(&graph)
        .into_iter()
        .map(|scc| {
            let mut states: Vec<usize> = scc.into_iter().map(|k| recurrent[k]).collect();
            states.sort_unstable();
            states
        })
        .collect();
    classes.sort_by_key(|c| c[0]);
    // Recurrent classes must be closed up to the restriction leak tolerance.
    for (c, class) in classes.iter().enumerate() {
        let mut inside = vec![false; n];
        for &i in class {
            inside[i] = true;
        }
        for &i in class {
            let leak: f64 = (0..n).filter(|&j| !inside[j]).map(|j| m[(i, j)]).sum();
            if leak > RESTRICT_LEAK_TOL {
                return Err(MarkovError::OpenClass(c));
            }
        }
    }
    let mut permutation = Vec::with_capacity(n);
    for class in &classes {
        permutation.extend_from_slice(class);
    }
    let mut transient_sorted = transient.to_vec();
    transient_sorted.sort_unstable();
    permutation.extend_from_slice(&transient_sorted);
    Ok(ErgodicDecomposition {
        classes,
        transient: transient_sorted,
        permutation,
    })
}

/// Strongly connected components of a directed graph in adjacency-list form.
/// Iterative Tarjan; components come out in reverse topological order.
pub fn tarjan_scc(graph: &[Vec<usize>]) -> Vec<Vec<usize>> {
    #[derive(Clone)]
    struct Node {
        index: usize,
        lowlink: usize,
        on_stack: bool,
        visited: bool,
    }
    let n = graph.len();
    let mut nodes = vec![
        Node { index: 0, lowlink: 0, on_stack: false, visited: false };
        n
    ];
    let mut counter = 0usize;
    let mut stack: Vec<usize> = Vec::new();
    let mut sccs: Vec<Vec<usize>> = Vec::new();
    // Explicit DFS frames: (vertex, next child position).
    let mut frames: Vec<(usize, usize)> = Vec::new();
    for root in 0..n {
        if nodes[root].visited {
            continue;
        }
        frames.push((root, 0));
        while let Some(&mut (v, ref mut child)) = frames.last_mut() {
            if *child == 0 {
                nodes[v].visited = true;
                nodes[v].index = counter;
                nodes[v].lowlink = counter;
                counter += 1;
                nodes[v].on_stack = true;
                stack.push(v);
            }
            if *child < graph[v].len() {
                let w = graph[v][*child];
                *child += 1;
                if !nodes[w].visited {
                    frames.push((w, 0));
                } else if nodes[w].on_stack {
                    nodes[v].lowlink = nodes[v].lowlink.min(nodes[w].index);
                }
            } else {
                frames.pop();
                if let Some(&(parent, _)) = frames.last() {
                    let low = nodes[v].lowlink;
                    nodes[parent].lowlink = nodes[parent].lowlink.min(low);
                }
                if nodes[v].lowlink == nodes[v].index {
                    let mut scc = Vec::new();
                    while let Some(w) = stack.pop() {
                        nodes[w].on_stack = false;
                        scc.push(w);
                        if w == v {
                            break;
                        }
                    }
                    sccs.push(scc);
                }
            }
        }
    }
    sccs
}

/// Restriction of the chain to `idx`, renormalizing away a row leak of at most
/// [`RESTRICT_LEAK_TOL`]. Index order is preserved.
pub fn restrict(a: &StochasticMatrix, idx: &[usize]) -> Result<StochasticMatrix, MarkovError> {
    let m = a.matrix();
    let k = idx.len();
    let mut sub = DMatrix::zeros(k, k);
    for (r, &i) in idx.iter().enumerate() {
        for (c, &j) in idx.iter().enumerate() {
            sub[(r, c)] = m[(i, j)];
        }
        let sum: f64 = sub.row(r).iter().sum();
        let leaked = 1.0 - sum;
        if leaked.abs() > RESTRICT_LEAK_TOL {
            return Err(MarkovError::MassLeak { i, leaked });
        }
        for c in 0..k {
            sub[(r, c)] /= sum;
        }
    }
    StochasticMatrix::new(sub)
}

/// Rebuilds a full-size transition matrix: solved blocks on the class indices,
/// rows of `original` bit-identical on the transient states, zero elsewhere.
pub fn reassemble(
    original: &StochasticMatrix,
    decomp: &ErgodicDecomposition,
    solved: &[DMatrix<f64>],
) -> Result<StochasticMatrix, MarkovError> {
    if solved.len() != decomp.classes.len() {
        return Err(MarkovError::ShapeMismatch);
    }
    let n = original.n();
    let mut p = DMatrix::zeros(n, n);
    for (class, block) in decomp.classes.iter().zip(solved) {
        if block.nrows() != class.len() || block.ncols() != class.len() {
            return Err(MarkovError::ShapeMismatch);
        }
        for (r, &i) in class.iter().enumerate() {
            for (c, &j) in class.iter().enumerate() {
                p[(i, j)] = block[(r, c)];
            }
        }
    }
    for &t in &decomp.transient {
        for j in 0..n {
            p[(t, j)] = original.matrix()[(t, j)];
        }
    }
    StochasticMatrix::new(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn mat(n: usize, data: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(n, n, data)
    }

    /// Five states: {0,1,2} closed and irreducible, {3,4} transient.
    fn five_state_fixture() -> StochasticMatrix {
        StochasticMatrix::new(mat(
            5,
            &[
                0.2, 0.8, 0.0, 0.0, 0.0, //
                0.5, 0.0, 0.5, 0.0, 0.0, //
                0.3, 0.3, 0.4, 0.0, 0.0, //
                0.1, 0.2, 0.3, 0.2, 0.2, //
                0.0, 0.3, 0.3, 0.2, 0.2,
            ],
        ))
        .unwrap()
    }

    #[test]
    fn two_state_stationary_matches_closed_form() {
        let a = StochasticMatrix::new(mat(2, &[0.3, 0.7, 0.4, 0.6])).unwrap();
        let pi = stationary_vector(&a, STATIONARY_TOL, 200).unwrap();
        assert_abs_diff_eq!(pi[0], 4.0 / 11.0, epsilon = 1e-13);
        assert_abs_diff_eq!(pi[1], 7.0 / 11.0, epsilon = 1e-13);
    }

    #[test]
    fn two_state_chain_satisfies_detailed_balance() {
        let a = StochasticMatrix::new(mat(2, &[0.9, 0.1, 0.25, 0.75])).unwrap();
        let pi = stationary_vector(&a, STATIONARY_TOL, 200).unwrap();
        // For two states the flux equals the power-iteration residual with the
        // sign flipped, so the stationary tolerance is the sharp bound.
        let flux = pi[0] * a.matrix()[(0, 1)] - pi[1] * a.matrix()[(1, 0)];
        assert!(flux.abs() <= STATIONARY_TOL, "flux imbalance {flux:e}");
    }

    #[test]
    fn periodic_chain_converges_via_damping() {
        let a = StochasticMatrix::new(mat(2, &[0.0, 1.0, 1.0, 0.0])).unwrap();
        let pi = stationary_vector(&a, STATIONARY_TOL, 10_000).unwrap();
        assert_abs_diff_eq!(pi[0], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn negative_entry_is_rejected() {
        let err = StochasticMatrix::new(mat(2, &[1.1, -0.1, 0.5, 0.5])).unwrap_err();
        assert!(matches!(err, MarkovError::NegativeEntry { i: 0, j: 1, .. }));
    }

    #[test]
    fn row_sum_repair_window() {
        // Deviation 5e-10: renormalized.
        let a = StochasticMatrix::new(mat(2, &[0.5, 0.5 + 5e-10, 0.5, 0.5])).unwrap();
        let sum: f64 = a.matrix().row(0).iter().sum();
        assert!((sum - 1.0).abs() <= ROW_SUM_TOL);
        // Deviation 5e-9: rejected.
        let err = StochasticMatrix::new(mat(2, &[0.5, 0.5 + 5e-9, 0.5, 0.5])).unwrap_err();
        assert!(matches!(err, MarkovError::RowSumViolation { i: 0, .. }));
    }

    #[test]
    fn rows_inside_tolerance_stay_bit_identical() {
        let raw = mat(2, &[0.30000000000000004, 0.7, 0.4, 0.6]);
        let a = StochasticMatrix::new(raw.clone()).unwrap();
        assert_eq!(a.matrix(), &raw);
    }

    #[test]
    fn five_state_transients_detected() {
        let a = five_state_fixture();
        let pi = stationary_vector(&a, STATIONARY_TOL, 500).unwrap();
        let transient = detect_transient(&pi, default_transient_tol(5));
        assert_eq!(transient, vec![3, 4]);
        let decomp = ergodic_classes(&a, &transient).unwrap();
        assert_eq!(decomp.classes, vec![vec![0, 1, 2]]);
        assert_eq!(decomp.permutation, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn five_state_restriction_is_stochastic() {
        let a = five_state_fixture();
        let sub = restrict(&a, &[0, 1, 2]).unwrap();
        assert_eq!(sub.n(), 3);
        for i in 0..3 {
            let sum: f64 = sub.matrix().row(i).iter().sum();
            assert_abs_diff_eq!(sum, 1.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn restrict_to_all_states_returns_the_chain() {
        let a = five_state_fixture();
        let sub = restrict(&a, &[0, 1, 2, 3, 4]).unwrap();
        assert_eq!(sub.matrix(), a.matrix());
    }

    #[test]
    fn restrict_through_a_transient_state_leaks() {
        let a = five_state_fixture();
        let err = restrict(&a, &[0, 1, 3]).unwrap_err();
        assert!(matches!(err, MarkovError::MassLeak { .. }));
    }

    #[test]
    fn reassemble_keeps_transient_rows_bit_identical() {
        let a = five_state_fixture();
        let pi = stationary_vector(&a, STATIONARY_TOL, 500).unwrap();
        let transient = detect_transient(&pi, default_transient_tol(5));
        let decomp = ergodic_classes(&a, &transient).unwrap();
        let block = restrict(&a, &decomp.classes[0]).unwrap().into_matrix();
        let p = reassemble(&a, &decomp, &[block]).unwrap();
        for &t in &decomp.transient {
            for j in 0..5 {
                assert_eq!(p.matrix()[(t, j)], a.matrix()[(t, j)]);
            }
        }
        // Class rows carry no mass outside the class.
        assert_eq!(p.matrix()[(0, 3)], 0.0);
        assert_eq!(p.matrix()[(0, 4)], 0.0);
    }

    #[test]
    fn reassemble_rejects_wrong_shapes() {
        let a = five_state_fixture();
        let decomp = ErgodicDecomposition {
            classes: vec![vec![0, 1, 2]],
            transient: vec![3, 4],
            permutation: vec![0, 1, 2, 3, 4],
        };
        let err = reassemble(&a, &decomp, &[DMatrix::zeros(2, 2)]).unwrap_err();
        assert!(matches!(err, MarkovError::ShapeMismatch));
    }

    #[test]
    fn two_closed_blocks_give_two_classes() {
        let a = StochasticMatrix::new(mat(
            4,
            &[
                0.5, 0.5, 0.0, 0.0, //
                0.2, 0.8, 0.0, 0.0, //
                0.0, 0.0, 0.6, 0.4, //
                0.0, 0.0, 0.3, 0.7,
            ],
        ))
        .unwrap();
        let pi = stationary_vector(&a, STATIONARY_TOL, 1000).unwrap();
        let decomp = ergodic_classes(&a, &detect_transient(&pi, default_transient_tol(4))).unwrap();
        assert_eq!(decomp.classes, vec![vec![0, 1], vec![2, 3]]);
        // Uniform start splits mass evenly between the blocks.
        assert_abs_diff_eq!(pi[0] + pi[1], 0.5, epsilon = 1e-10);
    }

    #[test]
    fn open_class_is_reported() {
        let a = five_state_fixture();
        // Claiming no transients makes {3,4} look recurrent, but they leak.
        let err = ergodic_classes(&a, &[]).unwrap_err();
        assert!(matches!(err, MarkovError::OpenClass(_)));
    }

    #[test]
    fn tarjan_on_known_graph() {
        // 0 -> 1 -> 2 -> 0 forms a cycle; 3 hangs off it.
        let graph = vec![vec![1], vec![2], vec![0], vec![0]];
        let mut sccs = tarjan_scc(&graph);
        for scc in &mut sccs {
            scc.sort_unstable();
        }
        sccs.sort();
        assert_eq!(sccs, vec![vec![0, 1, 2], vec![3]]);
    }

    proptest! {
        #[test]
        fn random_dense_chain_has_valid_stationary(seed in 0u64..64) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let n = 2 + (seed % 7) as usize;
            let mut raw = DMatrix::zeros(n, n);
            for i in 0..n {
                for j in 0..n {
                    raw[(i, j)] = 1.0 - rng.gen::<f64>();
                }
                let s: f64 = raw.row(i).iter().sum();
                for j in 0..n {
                    raw[(i, j)] /= s;
                }
            }
            let a = StochasticMatrix::new(raw).unwrap();
            let pi = stationary_vector(&a, STATIONARY_TOL, 100 * n.max(20)).unwrap();
            let total: f64 = pi.iter().sum();
            prop_assert!((total - 1.0).abs() <= 1e-12);
            let res = (a.matrix().tr_mul(&pi) - &pi).amax();
            prop_assert!(res <= STATIONARY_TOL);
        }
    }
}
