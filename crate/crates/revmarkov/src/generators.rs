//! Test-instance generators: random chains, Metropolis-Hastings
//! reversibilization, and empirical chains from simulated dynamics.
//!
//! Every generator is a pure function of `(n, seed)` through a counter-based
//! RNG, so instances are reproducible across machines and runs.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use thiserror::Error;

use crate::markov::{MarkovError, StochasticMatrix};

/// Lower clamp applied to Gaussian-kernel entries before normalization.
pub const NORMAL_CLAMP: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum GeneratorError {
    #[error("generator needs at least {min} states, got {n}")]
    TooSmall { n: usize, min: usize },
    #[error("stationary distribution entry {i} = {value:e} is not strictly positive")]
    NonPositivePi { i: usize, value: f64 },
    #[error("shape mismatch between proposal and stationary distribution")]
    ShapeMismatch,
    #[error("count matrix has no visited states")]
    NoVisitedStates,
    #[error(transparent)]
    Markov(#[from] MarkovError),
}

/// Families of random test chains.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GeneratorKind {
    /// Dense uniform entries, row-normalized.
    Uniform,
    /// Gaussian entries around 1 clamped away from zero, row-normalized.
    Normal,
    /// Stochastic block model: random partition, block-dependent edge
    /// probabilities, uniform walk on the sampled digraph.
    Sbm,
    /// Block-diagonal chain with several closed communicating classes.
    MultiErgodic,
}

impl GeneratorKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            GeneratorKind::Uniform => "uniform",
            GeneratorKind::Normal => "normal",
            GeneratorKind::Sbm => "sbm",
            GeneratorKind::MultiErgodic => "multi-ergodic",
        }
    }
}

impl std::str::FromStr for GeneratorKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "uniform" => Ok(GeneratorKind::Uniform),
            "normal" => Ok(GeneratorKind::Normal),
            "sbm" => Ok(GeneratorKind::Sbm),
            "multi-ergodic" => Ok(GeneratorKind::MultiErgodic),
            other => Err(format!(
                "unknown generator kind {other:?}; expected uniform, normal, sbm, or multi-ergodic"
            )),
        }
    }
}

/// A generated chain with its provenance.
#[derive(Debug, Clone)]
pub struct GeneratedChain {
    pub chain: StochasticMatrix,
    pub kind: GeneratorKind,
    pub seed: u64,
    /// Number of Gaussian entries lifted to [`NORMAL_CLAMP`] (`Normal` only).
    pub clamped_entries: usize,
    /// Partition of the states (`Sbm` and `MultiErgodic` only).
    pub block_sizes: Vec<usize>,
}

/// Dispatches on `kind`.
pub fn generate(kind: GeneratorKind, n: usize, seed: u64) -> Result<GeneratedChain, GeneratorError> {
    match kind {
        GeneratorKind::Uniform => gen_uniform(n, seed),
        GeneratorKind::Normal => gen_normal(n, seed),
        GeneratorKind::Sbm => gen_sbm(n, seed),
        GeneratorKind::MultiErgodic => gen_multi_ergodic(n, seed),
    }
}

fn row_normalized(mut raw: DMatrix<f64>) -> Result<StochasticMatrix, GeneratorError> {
    let n = raw.nrows();
    for i in 0..n {
        let row_sum: f64 = raw.row(i).iter().sum();
        for j in 0..n {
            raw[(i, j)] /= row_sum;
        }
    }
    Ok(StochasticMatrix::new(raw)?)
}

/// Dense chain with entries uniform on `(0, 1]`, row-normalized.
pub fn gen_uniform(n: usize, seed: u64) -> Result<GeneratedChain, GeneratorError> {
    if n == 0 {
        return Err(GeneratorError::TooSmall { n, min: 1 });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // 1 - U ∈ (0, 1] keeps every entry strictly positive.
    let raw = DMatrix::from_fn(n, n, |_, _| 1.0 - rng.gen::<f64>());
    Ok(GeneratedChain {
        chain: row_normalized(raw)?,
        kind: GeneratorKind::Uniform,
        seed,
        clamped_entries: 0,
        block_sizes: Vec::new(),
    })
}

/// Dense chain with N(1, 1) entries clamped below at [`NORMAL_CLAMP`],
/// row-normalized. Reports how many entries the clamp touched.
pub fn gen_normal(n: usize, seed: u64) -> Result<GeneratedChain, GeneratorError> {
    if n == 0 {
        return Err(GeneratorError::TooSmall { n, min: 1 });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(1.0, 1.0).expect("valid normal parameters");
    let mut clamped = 0usize;
    let raw = DMatrix::from_fn(n, n, |_, _| {
        let v: f64 = normal.sample(&mut rng);
        if v < NORMAL_CLAMP {
            clamped += 1;
            NORMAL_CLAMP
        } else {
            v
        }
    });
    Ok(GeneratedChain {
        chain: row_normalized(raw)?,
        kind: GeneratorKind::Normal,
        seed,
        clamped_entries: clamped,
        block_sizes: Vec::new(),
    })
}

/// Random partition of `0..n` into `k` contiguous blocks via `k - 1` distinct
/// cut points.
fn random_blocks(n: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut cuts: Vec<usize> = sample(rng, n - 1, k - 1).into_iter().map(|c| c + 1).collect();
    cuts.sort_unstable();
    let mut sizes = Vec::with_capacity(k);
    let mut prev = 0;
    for c in cuts {
        sizes.push(c - prev);
        prev = c;
    }
    sizes.push(n - prev);
    sizes
}

fn block_of(sizes: &[usize]) -> Vec<usize> {
    let mut owner = Vec::new();
    for (b, &s) in sizes.iter().enumerate() {
        owner.extend(std::iter::repeat(b).take(s));
    }
    owner
}

/// Stochastic block model walk: sample a digraph whose edge probability
/// depends on the block pair, then walk uniformly over out-neighbors.
/// Dangling vertices get a self-loop.
pub fn gen_sbm(n: usize, seed: u64) -> Result<GeneratedChain, GeneratorError> {
    if n < 2 {
        return Err(GeneratorError::TooSmall { n, min: 2 });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k_max = (n / 2).max(2);
    let k = rng.gen_range(2..=k_max);
    let sizes = random_blocks(n, k, &mut rng);
    let owner = block_of(&sizes);
    // Edge probabilities: rows of I + R normalized, so intra-block density
    // dominates without excluding cross-block edges.
    let mut density = DMatrix::from_fn(k, k, |_, _| rng.gen::<f64>());
    for b in 0..k {
        density[(b, b)] += 1.0;
        let row_sum: f64 = density.row(b).iter().sum();
        for c in 0..k {
            density[(b, c)] /= row_sum;
        }
    }
    let mut adj = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if rng.gen::<f64>() < density[(owner[i], owner[j])] {
                adj[(i, j)] = 1.0;
            }
        }
        if adj.row(i).iter().all(|&v| v == 0.0) {
            adj[(i, i)] = 1.0;
        }
    }
    Ok(GeneratedChain {
        chain: row_normalized(adj)?,
        kind: GeneratorKind::Sbm,
        seed,
        clamped_entries: 0,
        block_sizes: sizes,
    })
}

/// Block-diagonal chain: each block is an independent dense uniform chain,
/// giving one closed communicating class per block.
pub fn gen_multi_ergodic(n: usize, seed: u64) -> Result<GeneratedChain, GeneratorError> {
    if n < 2 {
        return Err(GeneratorError::TooSmall { n, min: 2 });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k_max = (n / 2).min(8).max(2);
    let k = rng.gen_range(2..=k_max);
    let sizes = random_blocks(n, k, &mut rng);
    let mut raw = DMatrix::zeros(n, n);
    let mut start = 0;
    for &s in &sizes {
        for i in start..start + s {
            for j in start..start + s {
                raw[(i, j)] = 1.0 - rng.gen::<f64>();
            }
        }
        start += s;
    }
    Ok(GeneratedChain {
        chain: row_normalized(raw)?,
        kind: GeneratorKind::MultiErgodic,
        seed,
        clamped_entries: 0,
        block_sizes: sizes,
    })
}

/// Metropolis-Hastings reversibilization of a proposal chain `q` for the
/// target distribution `pi`: off-diagonal moves are accepted with probability
/// `min(1, π_j q_ji / (π_i q_ij))` and rejected mass is added to the diagonal.
/// The result satisfies detailed balance for `pi` exactly (up to roundoff).
pub fn mh_reversibilize(
    q: &StochasticMatrix,
    pi: &DVector<f64>,
) -> Result<StochasticMatrix, GeneratorError> {
    let n = q.n();
    if pi.len() != n {
        return Err(GeneratorError::ShapeMismatch);
    }
    for i in 0..n {
        if !(pi[i] > 0.0) {
            return Err(GeneratorError::NonPositivePi { i, value: pi[i] });
        }
    }
    let qm = q.matrix();
    let mut p = DMatrix::zeros(n, n);
    for i in 0..n {
        let mut off_mass = 0.0;
        for j in 0..n {
            if i == j || qm[(i, j)] == 0.0 {
                continue;
            }
            let ratio = pi[j] * qm[(j, i)] / (pi[i] * qm[(i, j)]);
            let v = qm[(i, j)] * ratio.min(1.0);
            p[(i, j)] = v;
            off_mass += v;
        }
        p[(i, i)] = 1.0 - off_mass;
    }
    Ok(StochasticMatrix::new(p)?)
}

/// Coefficients of the butane dihedral-angle potential in units of `k_B T`
/// at 425 K, as `[a0, a1, a2, a3]` of [`cosine_potential`].
pub const BUTANE_COEFFS: [f64; 4] = [2.0567, -4.0567, 0.3133, 6.4267];

/// Cubic cosine-polynomial potential `a0 + a1·cos x + a2·cos²x + a3·cos³x`,
/// periodic on `[0, 2π)`.
pub fn cosine_potential(coeffs: &[f64; 4], x: f64) -> f64 {
    let c = x.cos();
    coeffs[0] + c * (coeffs[1] + c * (coeffs[2] + c * coeffs[3]))
}

/// Derivative of [`cosine_potential`] in `x`.
pub fn cosine_potential_gradient(coeffs: &[f64; 4], x: f64) -> f64 {
    let c = x.cos();
    -x.sin() * (coeffs[1] + c * (2.0 * coeffs[2] + c * 3.0 * coeffs[3]))
}

/// Butane dihedral-angle potential, [`cosine_potential`] at [`BUTANE_COEFFS`].
pub fn butane_potential(x: f64) -> f64 {
    cosine_potential(&BUTANE_COEFFS, x)
}

/// Derivative of [`butane_potential`].
pub fn butane_potential_gradient(x: f64) -> f64 {
    cosine_potential_gradient(&BUTANE_COEFFS, x)
}

/// Euler-Maruyama simulation of the overdamped Langevin dynamics in a
/// [`cosine_potential`], binned into an empirical transition count matrix.
/// Defaults reproduce the butane dihedral-angle setup.
#[derive(Debug, Clone)]
pub struct SdeConfig {
    /// Potential coefficients; butane by default.
    pub coeffs: [f64; 4],
    pub steps: usize,
    pub dt: f64,
    pub sigma: f64,
    /// Number of equal angular bins on `[0, 2π)`.
    pub bins: usize,
    /// Initial angle; the anti (trans) minimum at `π` by default.
    pub x0: f64,
    pub seed: u64,
}

impl Default for SdeConfig {
    fn default() -> Self {
        SdeConfig {
            coeffs: BUTANE_COEFFS,
            steps: 1_000_000,
            dt: 1e-3,
            sigma: 1.0,
            bins: 30,
            x0: std::f64::consts::PI,
            seed: 0,
        }
    }
}

/// Runs the simulation and returns the `bins × bins` transition count matrix
/// between consecutive binned states.
pub fn simulate_sde(cfg: &SdeConfig) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let two_pi = 2.0 * std::f64::consts::PI;
    let m = cfg.bins;
    let bin_of = |x: f64| -> usize {
        let wrapped = x.rem_euclid(two_pi);
        ((wrapped * m as f64 / two_pi) as usize).min(m - 1)
    };
    let noise_scale = cfg.sigma * cfg.dt.sqrt();
    let mut counts = DMatrix::zeros(m, m);
    let mut x = cfg.x0;
    let mut prev_bin = bin_of(x);
    for _ in 0..cfg.steps {
        let eta: f64 = StandardNormal.sample(&mut rng);
        x += -cosine_potential_gradient(&cfg.coeffs, x) * cfg.dt + noise_scale * eta;
        x = x.rem_euclid(two_pi);
        let b = bin_of(x);
        counts[(prev_bin, b)] += 1.0;
        prev_bin = b;
    }
    counts
}

/// Samples a trajectory of `steps` transitions from the chain starting at
/// `x0` and returns the transition count matrix.
pub fn sample_dtmc(p: &StochasticMatrix, x0: usize, steps: usize, seed: u64) -> DMatrix<f64> {
    let n = p.n();
    let pm = p.matrix();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts = DMatrix::zeros(n, n);
    let mut state = x0;
    for _ in 0..steps {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut next = n - 1;
        for j in 0..n {
            acc += pm[(state, j)];
            if u < acc {
                next = j;
                break;
            }
        }
        counts[(state, next)] += 1.0;
        state = next;
    }
    counts
}

/// Maximum-likelihood chain from a transition count matrix.
#[derive(Debug, Clone)]
pub struct EmpiricalChain {
    /// Row-normalized counts over the visited states.
    pub chain: StochasticMatrix,
    /// Original indices of states with at least one outgoing transition.
    pub visited: Vec<usize>,
}

/// Normalizes counts into a stochastic matrix, restricted to visited states
/// (rows with positive total). Transitions into never-left states are
/// dropped with that restriction.
pub fn normalize_counts(counts: &DMatrix<f64>) -> Result<EmpiricalChain, GeneratorError> {
    let n = counts.nrows();
    let visited: Vec<usize> = (0..n)
        .filter(|&i| counts.row(i).iter().sum::<f64>() > 0.0)
        .collect();
    if visited.is_empty() {
        return Err(GeneratorError::NoVisitedStates);
    }
    let m = visited.len();
    let mut raw = DMatrix::zeros(m, m);
    for (a, &i) in visited.iter().enumerate() {
        for (b, &j) in visited.iter().enumerate() {
            raw[(a, b)] = counts[(i, j)];
        }
    }
    Ok(EmpiricalChain { chain: row_normalized(raw)?, visited })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::markov;

    #[test]
    fn uniform_chains_are_reproducible_and_seed_sensitive() {
        let a = gen_uniform(10, 7).unwrap();
        let b = gen_uniform(10, 7).unwrap();
        let c = gen_uniform(10, 8).unwrap();
        assert_eq!(a.chain.matrix(), b.chain.matrix());
        assert_ne!(a.chain.matrix(), c.chain.matrix());
        assert!(a.chain.matrix().iter().all(|&v| v > 0.0));
    }

    #[test]
    fn normal_chains_report_clamped_entries() {
        let g = gen_normal(40, 3).unwrap();
        // About 16% of N(1,1) draws fall below 1e-6; with 1600 entries the
        // clamp count is far from both 0 and the total.
        assert!(g.clamped_entries > 100 && g.clamped_entries < 600, "clamped {}", g.clamped_entries);
        assert!(g.chain.matrix().iter().all(|&v| v > 0.0));
    }

    #[test]
    fn sbm_partition_covers_all_states() {
        let g = gen_sbm(30, 11).unwrap();
        assert_eq!(g.block_sizes.iter().sum::<usize>(), 30);
        assert!(g.block_sizes.len() >= 2);
        for i in 0..30 {
            let row_sum: f64 = g.chain.matrix().row(i).iter().sum();
            assert!((row_sum - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn multi_ergodic_chains_have_one_class_per_block() {
        let g = gen_multi_ergodic(24, 5).unwrap();
        let pi = markov::stationary_vector(&g.chain, 1e-13, 2400).unwrap();
        let transient = markov::detect_transient(&pi, markov::default_transient_tol(24));
        let decomp = markov::ergodic_classes(&g.chain, &transient).unwrap();
        assert_eq!(decomp.classes.len(), g.block_sizes.len());
        assert!(decomp.transient.is_empty());
        // Blocks are contiguous, so class k is exactly block k.
        let mut start = 0;
        for (class, &size) in decomp.classes.iter().zip(&g.block_sizes) {
            let expect: Vec<usize> = (start..start + size).collect();
            assert_eq!(class, &expect);
            start += size;
        }
    }

    #[test]
    fn metropolis_hastings_satisfies_detailed_balance_exactly() {
        let g = gen_uniform(12, 17).unwrap();
        let pi_target = {
            let mut v = DVector::from_fn(12, |i, _| 1.0 + (i as f64) * 0.3);
            let total: f64 = v.iter().sum();
            v /= total;
            v
        };
        let p = mh_reversibilize(&g.chain, &pi_target).unwrap();
        let pm = p.matrix();
        for i in 0..12 {
            for j in 0..12 {
                let defect = (pi_target[i] * pm[(i, j)] - pi_target[j] * pm[(j, i)]).abs();
                assert!(defect <= 1e-14, "defect {defect:e} at ({i},{j})");
            }
        }
        // π is stationary for the reversibilized chain.
        let pi_p = pm.tr_mul(&pi_target);
        assert!((pi_p - &pi_target).amax() <= 1e-13);
    }

    #[test]
    fn butane_gradient_matches_finite_differences() {
        for k in 0..12 {
            let x = 0.1 + k as f64 * 0.5;
            let h = 1e-6;
            let fd = (butane_potential(x + h) - butane_potential(x - h)) / (2.0 * h);
            let exact = butane_potential_gradient(x);
            assert!((fd - exact).abs() <= 1e-7 * exact.abs().max(1.0), "x = {x}");
        }
    }

    #[test]
    fn sde_counts_cover_all_steps() {
        let cfg = SdeConfig { steps: 20_000, ..Default::default() };
        let counts = simulate_sde(&cfg);
        let total: f64 = counts.iter().sum();
        assert_eq!(total, 20_000.0);
        let again = simulate_sde(&cfg);
        assert_eq!(counts, again);
    }

    #[test]
    fn dtmc_sampling_recovers_the_rows() {
        let p = StochasticMatrix::new(DMatrix::from_row_slice(
            3,
            3,
            &[0.5, 0.3, 0.2, 0.1, 0.6, 0.3, 0.4, 0.4, 0.2],
        ))
        .unwrap();
        let counts = sample_dtmc(&p, 0, 200_000, 9);
        let emp = normalize_counts(&counts).unwrap();
        assert_eq!(emp.visited, vec![0, 1, 2]);
        let err = (emp.chain.matrix() - p.matrix()).amax();
        assert!(err <= 0.01, "empirical error {err}");
    }

    #[test]
    fn unvisited_states_are_dropped() {
        let mut counts = DMatrix::zeros(4, 4);
        counts[(0, 1)] = 3.0;
        counts[(1, 0)] = 2.0;
        counts[(1, 1)] = 5.0;
        let emp = normalize_counts(&counts).unwrap();
        assert_eq!(emp.visited, vec![0, 1]);
        assert_eq!(emp.chain.n(), 2);
        assert!(normalize_counts(&DMatrix::zeros(3, 3)).is_err());
    }
}
