//! Chain statistics: integrated autocorrelation time, moving-window
//! estimators, ECDF error against a reference, and time per effective
//! sample.

use crate::error::{Error, Result};
use crate::samplers::UpdateOutcome;
use crate::scalar::Real;

/// Everything recorded by one chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainTrace<T> {
    pub chain_id: usize,
    pub seed: u64,
    /// `T + 1` states: the post-burn-in start, then one per outer step.
    pub theta: Vec<Vec<T>>,
    pub accepted: Vec<bool>,
    pub delta_h: Vec<T>,
    pub accept_prob: Vec<T>,
    /// Seconds per outer step.
    pub wall_times: Vec<f64>,
    /// Krylov/Anderson iterations per outer step.
    pub solver_iterations: Vec<usize>,
    /// Steps whose proposal was rejected because a solve failed.
    pub failed_proposals: usize,
    /// States visited during burn-in, starting from the initial point.
    pub burn_in: Vec<Vec<T>>,
    /// Set when the chain stopped early.
    pub failure: Option<String>,
}

impl<T: Real> ChainTrace<T> {
    pub fn new(chain_id: usize, seed: u64) -> Self {
        Self {
            chain_id,
            seed,
            theta: Vec::new(),
            accepted: Vec::new(),
            delta_h: Vec::new(),
            accept_prob: Vec::new(),
            wall_times: Vec::new(),
            solver_iterations: Vec::new(),
            failed_proposals: 0,
            burn_in: Vec::new(),
            failure: None,
        }
    }

    pub fn record(&mut self, theta: Vec<T>, outcome: &UpdateOutcome<T>, wall_time: f64, solver_iterations: usize) {
        self.theta.push(theta);
        self.accepted.push(outcome.accepted);
        self.delta_h.push(outcome.delta_h);
        self.accept_prob.push(outcome.accept_prob);
        self.wall_times.push(wall_time.max(0.0));
        self.solver_iterations.push(solver_iterations);
        if outcome.failure.is_some() {
            self.failed_proposals += 1;
        }
    }

    /// Recorded outer steps `T`.
    #[inline]
    pub fn n_steps(&self) -> usize {
        self.accepted.len()
    }

    #[inline]
    pub fn is_complete(&self) -> bool {
        self.failure.is_none()
    }

    /// Component `k` of every recorded state.
    pub fn component(&self, k: usize) -> Vec<T> {
        self.theta.iter().map(|t| t[k]).collect()
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.accepted.is_empty() {
            return 0.0;
        }
        self.accepted.iter().filter(|&&a| a).count() as f64 / self.accepted.len() as f64
    }

    /// Mean Metropolis acceptance probability `min(1, e^{-ΔH})`.
    pub fn mean_accept_prob(&self) -> f64 {
        if self.accept_prob.is_empty() {
            return 0.0;
        }
        self.accept_prob.iter().map(|p| p.to_f64_lossy()).sum::<f64>() / self.accept_prob.len() as f64
    }

    pub fn total_wall_time(&self) -> f64 {
        self.wall_times.iter().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IatConfig {
    /// Window constant `c`: the sum stops at the first `M > c τ̂(M)`.
    pub window_constant: f64,
    /// The estimate is flagged reliable when `N ≥ min_length_multiple · τ̂`.
    pub min_length_multiple: f64,
}

impl Default for IatConfig {
    fn default() -> Self {
        Self { window_constant: 5.0, min_length_multiple: 50.0 }
    }
}

impl IatConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.window_constant > 0.0) || !(self.min_length_multiple > 0.0) {
            return Err(Error::InvalidConfig("IAT constants must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IatEstimate {
    pub tau: f64,
    pub window: usize,
    pub reliable: bool,
}

/// `Ĉ(j)/Ĉ(0)` for the lags produced by `lags`, using the `1/(N - j)`
/// autocovariance estimator.
struct Autocorrelation {
    centered: Vec<f64>,
    c0: f64,
}

impl Autocorrelation {
    fn new<T: Real>(chain: &[T]) -> Result<Self> {
        let n = chain.len();
        if n < 2 {
            return Err(Error::InvalidConfig(format!("IAT needs at least 2 samples, got {n}")));
        }
        let mean = chain.iter().map(|x| x.to_f64_lossy()).sum::<f64>() / n as f64;
        let centered: Vec<f64> = chain.iter().map(|x| x.to_f64_lossy() - mean).collect();
        let c0 = centered.iter().map(|v| v * v).sum::<f64>() / n as f64;
        let scale = centered.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if !(c0 > 0.0) || c0.sqrt() <= 1e-12 * scale.max(mean.abs()) {
            return Err(Error::DegenerateVariance("chain has zero variance".into()));
        }
        Ok(Self { centered, c0 })
    }

    fn rho(&self, j: usize) -> f64 {
        let n = self.centered.len();
        let x = &self.centered;
        let s: f64 = x[..n - j].iter().zip(&x[j..]).map(|(a, b)| a * b).sum();
        s / (n - j) as f64 / self.c0
    }
}

fn window_search(n: usize, config: &IatConfig, mut rho: impl FnMut(usize) -> f64) -> IatEstimate {
    let mut tau = 1.0;
    let mut window = 0;
    for m in 1..n {
        tau += 2.0 * rho(m);
        window = m;
        if m as f64 > config.window_constant * tau {
            break;
        }
    }
    let reliable = n as f64 >= config.min_length_multiple * tau && (window as f64) > config.window_constant * tau;
    IatEstimate { tau, window, reliable }
}

/// Integrated autocorrelation time `τ̂ = 1 + 2 Σ_{j=1}^{M} Ĉ(j)/Ĉ(0)`,
/// growing `M` until `M > c τ̂(M)`.
pub fn iat_estimate<T: Real>(chain: &[T], config: &IatConfig) -> Result<IatEstimate> {
    config.validate()?;
    let ac = Autocorrelation::new(chain)?;
    Ok(window_search(chain.len(), config, |j| ac.rho(j)))
}

/// IAT of several equal-length chains from their averaged normalized
/// autocorrelation functions.
pub fn iat_estimate_batch<T: Real>(chains: &[&[T]], config: &IatConfig) -> Result<IatEstimate> {
    config.validate()?;
    let first = chains.first().ok_or_else(|| Error::InvalidConfig("no chains".into()))?;
    let n = first.len();
    if chains.iter().any(|c| c.len() != n) {
        return Err(Error::InvalidConfig("chains must have equal length".into()));
    }
    let acs: Vec<Autocorrelation> = chains.iter().map(|c| Autocorrelation::new(c)).collect::<Result<_>>()?;
    let b = acs.len() as f64;
    Ok(window_search(n, config, |j| acs.iter().map(|a| a.rho(j)).sum::<f64>() / b))
}

/// First index (1-based `i`) of the moving window ending at `i`.
#[inline]
fn window_start(i: usize) -> usize {
    (i / 2).max(1)
}

/// `T_i = mean(X_{⌊i/2⌋}, …, X_i)` with 1-based indices (the window
/// starts at `X_1` for `i = 1`).
pub fn moving_window_mean<T: Real>(chain: &[T]) -> Vec<T> {
    let mut prefix = Vec::with_capacity(chain.len() + 1);
    prefix.push(0.0f64);
    for x in chain {
        let last = *prefix.last().expect("nonempty");
        prefix.push(last + x.to_f64_lossy());
    }
    (1..=chain.len())
        .map(|i| {
            let lo = window_start(i);
            T::lit((prefix[i] - prefix[lo - 1]) / (i - lo + 1) as f64)
        })
        .collect()
}

/// Samples `X_{⌊i/2⌋..i}` (1-based, each chain's element 0 excluded)
/// pooled over chains. Chain element `k` holds `X_k`.
pub fn pooled_window<T: Real>(chains: &[&[T]], i: usize) -> Vec<T> {
    let lo = window_start(i);
    let mut out = Vec::with_capacity(chains.len() * (i + 1 - lo));
    for c in chains {
        let hi = i.min(c.len().saturating_sub(1));
        if lo <= hi {
            out.extend_from_slice(&c[lo..=hi]);
        }
    }
    out
}

fn sample_variance(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
}

/// `√Var / √(B i / (2τ))`.
pub fn estimator_std_from_variance(variance: f64, b: usize, i: usize, tau: f64) -> Result<f64> {
    if !(tau > 0.0) || b == 0 || i == 0 {
        return Err(Error::InvalidConfig("estimator std needs τ > 0, B > 0 and i > 0".into()));
    }
    if !(variance > 0.0) {
        return Err(Error::DegenerateVariance("window variance is zero".into()));
    }
    Ok(variance.sqrt() / (b as f64 * i as f64 / (2.0 * tau)).sqrt())
}

/// Standard deviation of the pooled moving-window mean at step `i`, with
/// the variance estimated from the same window.
pub fn estimator_std<T: Real>(chains: &[&[T]], i: usize, tau: f64) -> Result<f64> {
    let w: Vec<f64> = pooled_window(chains, i).iter().map(|x| x.to_f64_lossy()).collect();
    if w.len() < 2 {
        return Err(Error::DegenerateVariance("window has fewer than two samples".into()));
    }
    estimator_std_from_variance(sample_variance(&w), chains.len(), i, tau)
}

/// `max_g |ECDF(g) − F(g)|` over the sorted grid.
pub fn ecdf_sup_error<T: Real>(samples: &[T], grid: &[T], reference_cdf: &[T]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InvalidConfig("no samples".into()));
    }
    if grid.len() != reference_cdf.len() {
        return Err(Error::DimensionMismatch { expected: grid.len(), got: reference_cdf.len() });
    }
    if grid.windows(2).any(|w| !(w[0] <= w[1])) {
        return Err(Error::InvalidConfig("reference grid must be sorted".into()));
    }
    let mut sorted: Vec<f64> = samples.iter().map(|x| x.to_f64_lossy()).collect();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut worst = 0.0f64;
    for (&g, &f) in grid.iter().zip(reference_cdf) {
        let g = g.to_f64_lossy();
        let below = sorted.partition_point(|&s| s <= g) as f64;
        worst = worst.max((below / n - f.to_f64_lossy()).abs());
    }
    Ok(worst.min(1.0))
}

/// `t_wall / (B L / τ)`.
pub fn wall_time_per_independent_sample(total_wall_time: f64, b: usize, l: usize, tau: f64) -> f64 {
    total_wall_time / (b as f64 * l as f64 / tau)
}

/// The same from completed traces, with `t_wall` the summed step times.
pub fn wall_time_per_independent_sample_from_traces<T: Real>(traces: &[ChainTrace<T>], tau: f64) -> f64 {
    let done: Vec<&ChainTrace<T>> = traces.iter().filter(|t| t.is_complete()).collect();
    let total: f64 = done.iter().map(|t| t.total_wall_time()).sum();
    let l = done.first().map_or(0, |t| t.n_steps());
    wall_time_per_independent_sample(total, done.len(), l, tau)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn iid(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    #[test]
    fn iid_tau_near_one() {
        let x = iid(100_000, 3);
        let est = iat_estimate(&x, &IatConfig::default()).unwrap();
        assert!((est.tau - 1.0).abs() < 0.1, "{est:?}");
        assert!(est.reliable);
    }

    #[test]
    fn constant_chain_is_degenerate() {
        assert!(matches!(iat_estimate(&[2.0; 50], &IatConfig::default()), Err(Error::DegenerateVariance(_))));
    }

    #[test]
    fn short_chain_unreliable() {
        let x = iid(30, 1);
        assert!(!iat_estimate(&x, &IatConfig::default()).unwrap().reliable);
        assert!(iat_estimate(&[1.0], &IatConfig::default()).is_err());
    }

    #[test]
    fn batch_of_one_matches_single() {
        let x = iid(5000, 8);
        let a = iat_estimate(&x, &IatConfig::default()).unwrap();
        let b = iat_estimate_batch(&[&x], &IatConfig::default()).unwrap();
        assert!((a.tau - b.tau).abs() < 1e-12);
        assert_eq!(a.window, b.window);
    }

    #[test]
    fn moving_window_examples() {
        assert_eq!(moving_window_mean(&[3.0; 5]), vec![3.0; 5]);
        assert_eq!(moving_window_mean(&[0.0, 1.0])[1], 0.5);
    }

    #[test]
    fn moving_window_brute_force() {
        let x = iid(97, 4);
        let t = moving_window_mean(&x);
        for i in 1..=x.len() {
            let lo = (i / 2).max(1);
            let m: f64 = x[lo - 1..i].iter().sum::<f64>() / (i - lo + 1) as f64;
            assert!((t[i - 1] - m).abs() < 1e-12);
        }
    }

    #[test]
    fn estimator_std_examples() {
        let s = estimator_std_from_variance(1.0, 1, 200, 1.0).unwrap();
        assert!((s - 0.1).abs() < 1e-15);
        let s2 = estimator_std_from_variance(1.0, 2, 200, 1.0).unwrap();
        assert!((s / s2 - 2f64.sqrt()).abs() < 1e-12);
        assert!(estimator_std_from_variance(0.0, 1, 10, 1.0).is_err());
    }

    #[test]
    fn pooled_window_indexing() {
        let a = [9.0, 1.0, 2.0, 3.0, 4.0];
        let b = [9.0, 5.0, 6.0, 7.0, 8.0];
        assert_eq!(pooled_window(&[&a[..], &b[..]], 4), vec![2.0, 3.0, 4.0, 6.0, 7.0, 8.0]);
        assert_eq!(pooled_window(&[&a[..]], 1), vec![1.0]);
    }

    #[test]
    fn ecdf_examples() {
        let grid: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
        let cdf = grid.clone();
        let exact: Vec<f64> = (0..1000).map(|k| (k as f64 + 0.5) / 1000.0).collect();
        assert!(ecdf_sup_error(&exact, &grid, &cdf).unwrap() <= 1e-3);
        let squeezed: Vec<f64> = grid.iter().map(|g| 0.2 + 0.6 * g).collect();
        // beyond the grid maximum the ECDF is 0 on the grid: error = max F
        assert!((ecdf_sup_error(&[5.0, 4.0], &grid, &squeezed).unwrap() - 0.8).abs() < 1e-15);
        // below the grid minimum it is 1: error = 1 - min F
        assert!((ecdf_sup_error(&[-5.0, -4.0], &grid, &squeezed).unwrap() - 0.8).abs() < 1e-15);
        let half = vec![0.5; 11];
        assert_eq!(ecdf_sup_error(&[-1.0], &grid, &half).unwrap(), 0.5);
    }

    #[test]
    fn ecdf_uniform_dkw() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let s: Vec<f64> = (0..10_000).map(|_| rng.random::<f64>()).collect();
        let grid: Vec<f64> = (0..=100).map(|i| i as f64 / 100.0).collect();
        assert!(ecdf_sup_error(&s, &grid, &grid).unwrap() < 0.03);
    }

    #[test]
    fn wall_time_formula() {
        assert!((wall_time_per_independent_sample(100.0, 10, 1000, 10.0) - 0.1).abs() < 1e-15);
        assert!((wall_time_per_independent_sample(100.0, 10, 1000, 20.0) - 0.2).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn iat_affine_invariant(seed in 0u64..1000, a in prop_oneof![-5.0f64..-0.1, 0.1f64..5.0], b in -10.0f64..10.0) {
            let x = iid(400, seed);
            let y: Vec<f64> = x.iter().map(|v| a * v + b).collect();
            let ex = iat_estimate(&x, &IatConfig::default()).unwrap();
            let ey = iat_estimate(&y, &IatConfig::default()).unwrap();
            prop_assert!((ex.tau - ey.tau).abs() < 1e-10);
            prop_assert_eq!(ex.window, ey.window);
        }

        #[test]
        fn ecdf_error_in_unit_interval(s in proptest::collection::vec(-3.0f64..3.0, 1..50)) {
            let grid: Vec<f64> = (0..20).map(|i| -3.0 + 0.3 * i as f64).collect();
            let cdf: Vec<f64> = (0..20).map(|i| i as f64 / 19.0).collect();
            let e = ecdf_sup_error(&s, &grid, &cdf).unwrap();
            prop_assert!((0.0..=1.0).contains(&e));
        }

        #[test]
        fn pooled_window_order_independent(seed in 0u64..100) {
            let a = iid(40, seed);
            let b = iid(40, seed + 1000);
            let mut p = pooled_window(&[&a[..], &b[..]], 30);
            let mut q = pooled_window(&[&b[..], &a[..]], 30);
            p.sort_by(f64::total_cmp);
            q.sort_by(f64::total_cmp);
            prop_assert_eq!(p, q);
        }
    }
}
