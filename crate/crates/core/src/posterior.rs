//! GP prediction under hyperparameter uncertainty.

use rayon::prelude::*;

use crate::diagnostics::{iat_estimate, IatConfig};
use crate::error::{Error, Result};
use crate::kernel::{HyperParams, KernelModel};
use crate::linalg::{cg_solve, SolveConfig};
use crate::scalar::{dot, Real};

/// Round-off negatives larger than this in magnitude are reported.
pub const VARIANCE_CLAMP_WARNING: f64 = 1e-6;

/// Query points in `[-1, 1]^d`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionGrid<T> {
    d: usize,
    points: Vec<T>,
}

impl<T: Real> PredictionGrid<T> {
    pub fn new(d: usize, points: Vec<T>) -> Result<Self> {
        if d == 0 || points.len() % d != 0 {
            return Err(Error::DimensionMismatch { expected: d, got: points.len() });
        }
        if points.iter().any(|p| !(p.abs() <= T::one())) {
            return Err(Error::Domain("prediction points must lie in [-1, 1]^d".into()));
        }
        Ok(Self { d, points })
    }

    /// Tensor grid with `per_axis` equispaced nodes on `[-1, 1]` per axis,
    /// first axis slowest.
    pub fn regular(d: usize, per_axis: usize) -> Result<Self> {
        if per_axis < 2 {
            return Err(Error::InvalidConfig("regular grid needs at least 2 nodes per axis".into()));
        }
        let node = |k: usize| T::lit(-1.0 + 2.0 * k as f64 / (per_axis - 1) as f64);
        let total = per_axis.pow(d as u32);
        let mut points = Vec::with_capacity(total * d);
        for flat in 0..total {
            let mut rem = flat;
            let mut idx = vec![0; d];
            for axis in (0..d).rev() {
                idx[axis] = rem % per_axis;
                rem /= per_axis;
            }
            points.extend(idx.into_iter().map(node));
        }
        Self::new(d, points)
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.points.len() / self.d
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    #[inline]
    pub fn point(&self, i: usize) -> &[T] {
        &self.points[i * self.d..(i + 1) * self.d]
    }
}

fn check_grid<T: Real>(model: &KernelModel<T>, grid: &PredictionGrid<T>) -> Result<()> {
    if grid.dim() != model.data().dim() {
        return Err(Error::DimensionMismatch { expected: model.data().dim(), got: grid.dim() });
    }
    Ok(())
}

/// `m(x) = K_θ(x)ᵀ A(θ)⁻¹ y` at every grid point from a single solve.
pub fn predictive_mean<T: Real>(
    model: &KernelModel<T>,
    hp: &HyperParams<T>,
    grid: &PredictionGrid<T>,
    config: &SolveConfig<T>,
) -> Result<Vec<T>> {
    check_grid(model, grid)?;
    let op = model.operator(hp)?;
    let x = cg_solve(&op, model.data().observations(), config, None, None)?.x;
    (0..grid.len()).into_par_iter().map(|g| Ok(dot(&op.cross_covariance(grid.point(g))?, &x))).collect()
}

fn clamp_variance<T: Real>(v: T) -> T {
    if v < -T::lit(VARIANCE_CLAMP_WARNING) {
        log::warn!("conditional variance {} clamped to 0; solves may be under-converged", v.to_f64_lossy());
    }
    v.max(T::zero())
}

/// `K_θ(x, x) − K_θ(x)ᵀ A(θ)⁻¹ K_θ(x)`, clamped at zero.
pub fn conditional_variance<T: Real>(
    model: &KernelModel<T>,
    hp: &HyperParams<T>,
    x: &[T],
    config: &SolveConfig<T>,
) -> Result<T> {
    let op = model.operator(hp)?;
    let k = op.cross_covariance(x)?;
    let prior = op.prior_variance(x)?;
    let sol = cg_solve(&op, &k, config, None, None)?;
    Ok(clamp_variance(prior - dot(&k, &sol.x)))
}

/// [`conditional_variance`] at every grid point, solved in parallel.
pub fn conditional_variances<T: Real>(
    model: &KernelModel<T>,
    hp: &HyperParams<T>,
    grid: &PredictionGrid<T>,
    config: &SolveConfig<T>,
) -> Result<Vec<T>> {
    check_grid(model, grid)?;
    let op = model.operator(hp)?;
    (0..grid.len())
        .into_par_iter()
        .map(|g| {
            let x = grid.point(g);
            let k = op.cross_covariance(x)?;
            let sol = cg_solve(&op, &k, config, None, None)?;
            Ok(clamp_variance(op.prior_variance(x)? - dot(&k, &sol.x)))
        })
        .collect()
}

/// Law-of-total-variance summary over hyperparameter samples.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSummary<T> {
    /// `E[m(x) | θ]` averaged over samples.
    pub mean: Vec<T>,
    /// `E[Var(f(x) | θ)]`
    pub expected_variance: Vec<T>,
    /// `Var(E[f(x) | θ])`
    pub variance_of_mean: Vec<T>,
    /// `√(E[Var] + Var[E])`
    pub total_std: Vec<T>,
    /// IAT of the per-sample means, when it can be estimated.
    pub mean_iat: Vec<Option<f64>>,
    /// `2 σ_m / √(n / τ)`, the 95% radius of the mean estimate.
    pub ci_radius: Vec<Option<f64>>,
    pub samples_used: usize,
}

impl<T: Real> PosteriorSummary<T> {
    pub fn total_variance(&self, g: usize) -> T {
        self.expected_variance[g] + self.variance_of_mean[g]
    }
}

/// Averages predictive means and conditional variances over every
/// `stride`-th hyperparameter sample.
pub fn total_variance_summary<T: Real>(
    model: &KernelModel<T>,
    template: &HyperParams<T>,
    samples: &[Vec<T>],
    grid: &PredictionGrid<T>,
    stride: usize,
    config: &SolveConfig<T>,
) -> Result<PosteriorSummary<T>> {
    if stride == 0 {
        return Err(Error::InvalidConfig("thinning stride must be positive".into()));
    }
    let thinned: Vec<&Vec<T>> = samples.iter().step_by(stride).collect();
    if thinned.len() < 2 {
        return Err(Error::InvalidConfig("need at least two thinned samples".into()));
    }
    let per_sample: Vec<(Vec<T>, Vec<T>)> = thinned
        .iter()
        .map(|theta| {
            let hp = template.with_theta(theta)?;
            Ok((predictive_mean(model, &hp, grid, config)?, conditional_variances(model, &hp, grid, config)?))
        })
        .collect::<Result<_>>()?;
    let s = T::count(per_sample.len());
    let ng = grid.len();
    let mut mean = vec![T::zero(); ng];
    let mut expected_variance = vec![T::zero(); ng];
    for (m, v) in &per_sample {
        for g in 0..ng {
            mean[g] += m[g] / s;
            expected_variance[g] += v[g] / s;
        }
    }
    let mut variance_of_mean = vec![T::zero(); ng];
    for (m, _) in &per_sample {
        for g in 0..ng {
            let d = m[g] - mean[g];
            variance_of_mean[g] += d * d / s;
        }
    }
    let total_std = (0..ng).map(|g| (expected_variance[g] + variance_of_mean[g]).sqrt()).collect();
    let mut mean_iat = Vec::with_capacity(ng);
    let mut ci_radius = Vec::with_capacity(ng);
    for g in 0..ng {
        let series: Vec<T> = per_sample.iter().map(|(m, _)| m[g]).collect();
        match iat_estimate(&series, &IatConfig::default()) {
            Ok(est) => {
                let n_eff = series.len() as f64 / est.tau.max(1e-12);
                mean_iat.push(Some(est.tau));
                ci_radius.push(Some(2.0 * variance_of_mean[g].to_f64_lossy().sqrt() / n_eff.sqrt()));
            }
            Err(_) => {
                mean_iat.push(None);
                ci_radius.push(None);
            }
        }
    }
    Ok(PosteriorSummary {
        mean,
        expected_variance,
        variance_of_mean,
        total_std,
        mean_iat,
        ci_radius,
        samples_used: per_sample.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::Dataset;

    fn model(y: Vec<f64>) -> KernelModel<f64> {
        KernelModel::new(Dataset::equispaced_1d(y.len(), y).unwrap(), 2)
    }

    fn tight() -> SolveConfig<f64> {
        SolveConfig::with_tolerance(1e-13)
    }

    #[test]
    fn zero_observations_zero_mean() {
        let m = model(vec![0.0; 5]);
        let hp = HyperParams::new(1, 2, 0.1, 1.0).unwrap();
        let grid = PredictionGrid::regular(1, 7).unwrap();
        assert!(predictive_mean(&m, &hp, &grid, &tight()).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn far_point_reverts_to_prior() {
        let data = Dataset::new(1, vec![-1.0, -0.99, -0.98], vec![1.0, 2.0, 3.0]).unwrap();
        let m = KernelModel::new(data, 2);
        let mut hp = HyperParams::new(1, 2, 0.1, 0.01).unwrap();
        hp.set_cheb(&[0.2, 0.1]).unwrap();
        let grid = PredictionGrid::new(1, vec![1.0]).unwrap();
        let mean = predictive_mean(&m, &hp, &grid, &tight()).unwrap();
        assert!(mean[0].abs() < 1e-8);
        let v = conditional_variance(&m, &hp, &[1.0], &tight()).unwrap();
        assert!((v - (2.0 * 0.3f64).exp()).abs() < 1e-8);
    }

    #[test]
    fn regular_grid_order() {
        let g = PredictionGrid::<f64>::regular(2, 3).unwrap();
        assert_eq!(g.len(), 9);
        assert_eq!(g.point(1), &[-1.0, 0.0]);
        assert_eq!(g.point(3), &[0.0, -1.0]);
        assert!(PredictionGrid::new(1, vec![1.5]).is_err());
    }

    #[test]
    fn identical_samples_have_no_mean_variance() {
        let m = model(vec![1.0, 0.5, -0.2, 0.3]);
        let hp = HyperParams::new(1, 2, 0.1, 1.0).unwrap();
        let grid = PredictionGrid::regular(1, 5).unwrap();
        let samples = vec![vec![0.1, -0.2]; 3];
        let s = total_variance_summary(&m, &hp, &samples, &grid, 1, &tight()).unwrap();
        assert!(s.variance_of_mean.iter().all(|&v| v.abs() < 1e-20));
        let v = conditional_variances(&m, &hp.with_theta(&[0.1, -0.2]).unwrap(), &grid, &tight()).unwrap();
        for (a, b) in s.expected_variance.iter().zip(&v) {
            assert!((a - b).abs() < 1e-14);
        }
        assert!(s.mean_iat.iter().all(Option::is_none));
    }

    #[test]
    fn thinning_validated() {
        let m = model(vec![1.0, 0.5]);
        let hp = HyperParams::new(1, 2, 0.1, 1.0).unwrap();
        let grid = PredictionGrid::regular(1, 3).unwrap();
        let samples = vec![vec![0.0, 0.0]; 3];
        assert!(total_variance_summary(&m, &hp, &samples, &grid, 0, &tight()).is_err());
        assert!(total_variance_summary(&m, &hp, &samples, &grid, 2, &tight()).is_ok());
        assert!(total_variance_summary(&m, &hp, &samples, &grid, 3, &tight()).is_err());
    }
}
