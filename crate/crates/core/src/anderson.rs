//! Anderson acceleration of fixed-point iterations `x = g(x)`.
//!
//! Each step combines the last `k` map evaluations with affine weights
//! that minimize the norm of the combined residual. The constraint is
//! eliminated through residual differences, leaving an unconstrained
//! least-squares problem in at most `k - 1` unknowns.

use std::collections::VecDeque;

use crate::dense::{thin_qr, DenseMatrix};
use crate::error::{Error, Result};
use crate::scalar::{all_finite, norm, Real};

pub const DEFAULT_DEPTH: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AndersonConfig<T> {
    /// Number of past iterates combined per step; `1` is plain iteration.
    pub depth: usize,
    pub max_iterations: usize,
    /// Converged once `‖x - g(x)‖ ≤ tolerance · (1 + ‖x₀‖)`.
    pub tolerance: T,
    /// Tikhonov weight `ε_ls` on the least-squares coefficients.
    pub regularization: T,
}

impl<T: Real> Default for AndersonConfig<T> {
    fn default() -> Self {
        Self { depth: DEFAULT_DEPTH, max_iterations: 500, tolerance: T::lit(1e-10), regularization: T::zero() }
    }
}

impl<T: Real> AndersonConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 {
            return Err(Error::InvalidConfig("Anderson depth must be at least 1".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidConfig("Anderson needs at least one iteration".into()));
        }
        if !(self.tolerance > T::zero()) || !(self.regularization >= T::zero()) {
            return Err(Error::InvalidConfig("Anderson tolerance must be positive and ε_ls nonnegative".into()));
        }
        Ok(())
    }
}

/// Ring buffer of recent `(g(x_i), f(x_i) = g(x_i) - x_i)` pairs.
#[derive(Debug, Clone)]
pub struct AndersonState<T> {
    depth: usize,
    regularization: T,
    gs: VecDeque<Vec<T>>,
    fs: VecDeque<Vec<T>>,
}

impl<T: Real> AndersonState<T> {
    pub fn new(depth: usize, regularization: T) -> Self {
        assert!(depth >= 1, "Anderson depth must be at least 1");
        Self { depth, regularization, gs: VecDeque::with_capacity(depth), fs: VecDeque::with_capacity(depth) }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.fs.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.fs.is_empty()
    }

    pub fn clear(&mut self) {
        self.gs.clear();
        self.fs.clear();
    }

    /// Records the evaluation `gx = g(x)`, evicting the oldest pair when full.
    pub fn push(&mut self, x: &[T], gx: Vec<T>) {
        let f: Vec<T> = gx.iter().zip(x).map(|(&g, &xi)| g - xi).collect();
        if self.fs.len() == self.depth {
            self.gs.pop_front();
            self.fs.pop_front();
        }
        self.gs.push_back(gx);
        self.fs.push_back(f);
    }

    /// The accelerated next iterate from the stored history.
    ///
    /// Panics if nothing has been pushed.
    pub fn next_iterate(&mut self) -> Vec<T> {
        assert!(!self.fs.is_empty(), "empty Anderson history");
        loop {
            let m = self.fs.len() - 1;
            if m == 0 {
                return self.gs[0].clone();
            }
            match self.solve_coefficients() {
                Some(gamma) => {
                    let newest = self.fs.len() - 1;
                    let mut x = self.gs[newest].clone();
                    for (j, &c) in gamma.iter().enumerate() {
                        for ((xi, &a), &b) in x.iter_mut().zip(&self.gs[j + 1]).zip(&self.gs[j]) {
                            *xi -= c * (a - b);
                        }
                    }
                    return x;
                }
                None => {
                    // numerically dependent differences: forget the oldest pair
                    self.gs.pop_front();
                    self.fs.pop_front();
                }
            }
        }
    }

    /// `argmin_γ ‖f_n - ΔF γ‖² + ε‖γ‖²`, or `None` when `ΔF` is
    /// numerically rank deficient.
    fn solve_coefficients(&self) -> Option<Vec<T>> {
        let n = self.fs[0].len();
        let m = self.fs.len() - 1;
        let extra = if self.regularization > T::zero() { m } else { 0 };
        let rows = n + extra;
        if rows < m {
            return None;
        }
        let sqrt_eps = self.regularization.sqrt();
        let df = DenseMatrix::from_fn(rows, m, |i, j| {
            if i < n {
                self.fs[j + 1][i] - self.fs[j][i]
            } else if i - n == j {
                sqrt_eps
            } else {
                T::zero()
            }
        });
        let (q, r) = thin_qr(&df);
        let diag: Vec<T> = (0..m).map(|j| r[(j, j)].abs()).collect();
        let dmax = diag.iter().copied().fold(T::zero(), T::max);
        let dmin = diag.iter().copied().fold(T::infinity(), T::min);
        let cond_limit = T::lit(1e10).min(T::one() / (T::lit(100.0) * T::epsilon()));
        if !(dmax > T::zero()) || !(dmin * cond_limit > dmax) {
            return None;
        }
        let f = &self.fs[m];
        let mut rhs: Vec<T> = (0..m).map(|j| (0..n).map(|i| q[(i, j)] * f[i]).sum()).collect();
        for j in (0..m).rev() {
            let mut s = rhs[j];
            for l in j + 1..m {
                s -= r[(j, l)] * rhs[l];
            }
            rhs[j] = s / r[(j, j)];
        }
        all_finite(&rhs).then_some(rhs)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AndersonOutcome<T> {
    pub x: Vec<T>,
    /// Map evaluations performed.
    pub iterations: usize,
    /// `‖x_i - g(x_i)‖` for every evaluated iterate.
    pub residuals: Vec<T>,
}

/// Failed solve; `best` is the iterate with the smallest residual seen.
#[derive(Debug, Clone, PartialEq)]
pub struct AndersonFailure<T> {
    pub error: Error,
    pub best: Option<Vec<T>>,
    pub residuals: Vec<T>,
}

impl<T> std::fmt::Display for AndersonFailure<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.error.fmt(f)
    }
}

impl<T: std::fmt::Debug> std::error::Error for AndersonFailure<T> {}

impl<T> From<AndersonFailure<T>> for Error {
    fn from(f: AndersonFailure<T>) -> Self {
        f.error
    }
}

/// Solves `x = g(x)` from `x0`, evaluating `g` exactly once per iterate.
pub fn anderson_solve<T, G>(
    mut g: G,
    x0: &[T],
    config: &AndersonConfig<T>,
) -> std::result::Result<AndersonOutcome<T>, AndersonFailure<T>>
where
    T: Real,
    G: FnMut(&[T]) -> Result<Vec<T>>,
{
    let fail = |error, best, residuals| AndersonFailure { error, best, residuals };
    if let Err(e) = config.validate() {
        return Err(fail(e, None, Vec::new()));
    }
    let threshold = config.tolerance * (T::one() + norm(x0));
    let mut state = AndersonState::new(config.depth, config.regularization);
    let mut residuals = Vec::new();
    let mut best: Option<(T, Vec<T>)> = None;
    let mut x = x0.to_vec();
    for it in 1..=config.max_iterations {
        let gx = match g(&x) {
            Ok(v) => v,
            Err(e) => return Err(fail(e, best.map(|b| b.1), residuals)),
        };
        if gx.len() != x.len() {
            let e = Error::DimensionMismatch { expected: x.len(), got: gx.len() };
            return Err(fail(e, best.map(|b| b.1), residuals));
        }
        if !all_finite(&gx) {
            return Err(fail(Error::Divergence { iterations: it }, best.map(|b| b.1), residuals));
        }
        let res = gx.iter().zip(&x).map(|(&a, &b)| (a - b) * (a - b)).sum::<T>().sqrt();
        residuals.push(res);
        if res <= threshold {
            return Ok(AndersonOutcome { x, iterations: it, residuals });
        }
        if best.as_ref().is_none_or(|(r, _)| res < *r) {
            best = Some((res, x.clone()));
        }
        state.push(&x, gx);
        x = state.next_iterate();
    }
    let last = residuals.last().copied().unwrap_or(T::zero()).to_f64_lossy();
    Err(fail(
        Error::ConvergenceFailure { iterations: config.max_iterations, residual: last },
        best.map(|b| b.1),
        residuals,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_map() {
        let out = anderson_solve(|_| Ok(vec![3.0, -1.0]), &[0.0, 0.0], &AndersonConfig::default()).unwrap();
        assert!(out.iterations <= 2);
        assert_eq!(out.x, vec![3.0, -1.0]);
    }

    #[test]
    fn scalar_contraction() {
        let out = anderson_solve(|x: &[f64]| Ok(vec![0.5 * x[0] + 1.0]), &[0.0], &AndersonConfig::default()).unwrap();
        assert!((out.x[0] - 2.0).abs() < 1e-10);
        // affine scalar maps are solved exactly by one secant step
        assert!(out.iterations <= 3);
    }

    #[test]
    fn depth_one_is_picard() {
        let cfg = AndersonConfig { depth: 1, max_iterations: 5, tolerance: 1e-300, ..Default::default() };
        let mut seen = Vec::new();
        let _ = anderson_solve(
            |x: &[f64]| {
                seen.push(x[0]);
                Ok(vec![0.5 * x[0] + 1.0])
            },
            &[0.0],
            &cfg,
        );
        assert_eq!(seen, vec![0.0, 1.0, 1.5, 1.75, 1.875]);
    }

    #[test]
    fn divergence_reported() {
        let err = anderson_solve(|_: &[f64]| Ok(vec![f64::NAN]), &[1.0], &AndersonConfig::default()).unwrap_err();
        assert_eq!(err.error, Error::Divergence { iterations: 1 });
    }

    #[test]
    fn non_convergence_returns_best() {
        let cfg = AndersonConfig { depth: 1, max_iterations: 4, tolerance: 1e-12, ..Default::default() };
        let err = anderson_solve(|x: &[f64]| Ok(vec![-x[0] + 1.0]), &[0.0], &cfg).unwrap_err();
        assert!(matches!(err.error, Error::ConvergenceFailure { iterations: 4, .. }));
        assert!(err.best.is_some());
        assert_eq!(err.residuals.len(), 4);
    }

    #[test]
    fn map_errors_propagate() {
        let err = anderson_solve(|_: &[f64]| Err(Error::Domain("x".into())), &[0.0], &AndersonConfig::default())
            .unwrap_err();
        assert_eq!(err.error, Error::Domain("x".into()));
    }

    #[test]
    fn regularized_still_converges() {
        let cfg = AndersonConfig { regularization: 1e-12, ..Default::default() };
        let out = anderson_solve(
            |x: &[f64]| Ok(vec![0.3 * x[1] + 1.0, 0.2 * x[0].sin() - 0.5]),
            &[0.0, 0.0],
            &cfg,
        )
        .unwrap();
        let (a, b) = (out.x[0], out.x[1]);
        assert!((a - 0.3 * b - 1.0).abs() < 1e-9);
        assert!((b - 0.2 * a.sin() + 0.5).abs() < 1e-9);
    }

    #[test]
    fn invalid_config() {
        let cfg = AndersonConfig::<f64> { depth: 0, ..Default::default() };
        assert!(anderson_solve(|x: &[f64]| Ok(x.to_vec()), &[0.0], &cfg).is_err());
    }
}
