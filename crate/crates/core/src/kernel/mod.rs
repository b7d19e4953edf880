//! Chebyshev-modulated squared-exponential kernel family and the
//! matrix-free operator `A(θ) = σ² I + K(θ)`.
//!
//! The kernel is
//!
//! ```text
//! K_θ(x, x') = exp(C_θ(x)) exp(C_θ(x')) exp(-|x - x'|² / (2ℓ²))
//! C_θ(x)     = Σ_I Θ_I T_{i_1}(x¹) ⋯ T_{i_d}(x^d)
//! ```
//!
//! with `σ = exp(σ̃) + 10⁻³` and `2ℓ² = exp(ℓ̃) + 10⁻³`. The inferred vector
//! `θ` is laid out as `[Θ (flattened, first axis slowest), σ̃?, ℓ̃?]`, where
//! the optional entries are present only when that parameter is inferred.

mod chebyshev;
mod operator;

pub use chebyshev::{chebyshev_values, tensor_basis, ChebyshevBasis};
pub use operator::{KernelOperator, DEFAULT_TILE_ROWS};

use crate::error::{Error, Result};
use crate::scalar::Real;

pub(crate) use chebyshev::check_point;

/// Offset added to the exponentiated scale parameters so that `σ` and `2ℓ²`
/// stay strictly positive.
pub const SCALE_FLOOR: f64 = 1e-3;

/// Scattered points in `[-1, 1]^d` with one observation per point.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    d: usize,
    points: Vec<T>,
    observations: Vec<T>,
}

impl<T: Real> Dataset<T> {
    /// `points` is row-major `N x d`.
    pub fn new(d: usize, points: Vec<T>, observations: Vec<T>) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidConfig("dimension d must be at least 1".into()));
        }
        if points.len() % d != 0 {
            return Err(Error::DimensionMismatch { expected: d, got: points.len() % d });
        }
        let n = points.len() / d;
        if n == 0 {
            return Err(Error::InvalidConfig("dataset needs at least one point".into()));
        }
        if observations.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: observations.len() });
        }
        for (i, p) in points.chunks_exact(d).enumerate() {
            check_point(p).map_err(|e| Error::Domain(format!("point {i}: {e}")))?;
        }
        if observations.iter().any(|y| !y.is_finite()) {
            return Err(Error::Domain("non-finite observation".into()));
        }
        Ok(Self { d, points, observations })
    }

    /// `N` points equally spaced on `[-1, 1)` in one dimension.
    pub fn equispaced_1d(n: usize, observations: Vec<T>) -> Result<Self> {
        let step = T::lit(2.0) / T::count(n);
        let pts = (0..n).map(|i| -T::one() + step * T::count(i)).collect();
        Self::new(1, pts, observations)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.observations.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn point(&self, i: usize) -> &[T] {
        &self.points[i * self.d..(i + 1) * self.d]
    }

    #[inline]
    pub fn points(&self) -> &[T] {
        &self.points
    }

    #[inline]
    pub fn observations(&self) -> &[T] {
        &self.observations
    }

    /// Same points, different observations.
    pub fn with_observations(&self, observations: Vec<T>) -> Result<Self> {
        Self::new(self.d, self.points.clone(), observations)
    }
}

/// Kernel hyperparameters: the Chebyshev coefficient tensor plus the
/// reparameterized noise and length scales, each either inferred or frozen.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperParams<T> {
    d: usize,
    n_cheb: usize,
    cheb: Vec<T>,
    log_sigma: T,
    log_ell: T,
    infer_sigma: bool,
    infer_ell: bool,
}

impl<T: Real> HyperParams<T> {
    /// Zero Chebyshev tensor with the given noise variance `σ²` and length
    /// scale `2ℓ²`, both frozen.
    pub fn new(d: usize, n_cheb: usize, noise_variance: T, two_ell_sq: T) -> Result<Self> {
        if d == 0 || n_cheb == 0 {
            return Err(Error::InvalidConfig("d and n_cheb must be positive".into()));
        }
        let floor = T::lit(SCALE_FLOOR);
        let sigma = noise_variance.sqrt();
        if !(sigma > floor) {
            return Err(Error::Domain(format!(
                "noise variance {} must exceed {}",
                noise_variance.to_f64_lossy(),
                SCALE_FLOOR * SCALE_FLOOR
            )));
        }
        if !(two_ell_sq > floor) {
            return Err(Error::Domain(format!(
                "2ℓ² = {} must exceed {SCALE_FLOOR}",
                two_ell_sq.to_f64_lossy()
            )));
        }
        Ok(Self {
            d,
            n_cheb,
            cheb: vec![T::zero(); n_cheb.pow(d as u32)],
            log_sigma: (sigma - floor).ln(),
            log_ell: (two_ell_sq - floor).ln(),
            infer_sigma: false,
            infer_ell: false,
        })
    }

    pub fn inferring_sigma(mut self, infer: bool) -> Self {
        self.infer_sigma = infer;
        self
    }

    pub fn inferring_ell(mut self, infer: bool) -> Self {
        self.infer_ell = infer;
        self
    }

    #[inline]
    pub fn d(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn n_cheb(&self) -> usize {
        self.n_cheb
    }

    #[inline]
    pub fn cheb(&self) -> &[T] {
        &self.cheb
    }

    pub fn set_cheb(&mut self, cheb: &[T]) -> Result<()> {
        if cheb.len() != self.cheb.len() {
            return Err(Error::DimensionMismatch { expected: self.cheb.len(), got: cheb.len() });
        }
        self.cheb.copy_from_slice(cheb);
        Ok(())
    }

    #[inline]
    pub fn log_sigma(&self) -> T {
        self.log_sigma
    }

    #[inline]
    pub fn log_ell(&self) -> T {
        self.log_ell
    }

    pub fn set_log_sigma(&mut self, v: T) {
        self.log_sigma = v;
    }

    pub fn set_log_ell(&mut self, v: T) {
        self.log_ell = v;
    }

    #[inline]
    pub fn infers_sigma(&self) -> bool {
        self.infer_sigma
    }

    #[inline]
    pub fn infers_ell(&self) -> bool {
        self.infer_ell
    }

    /// `σ = exp(σ̃) + 10⁻³`
    #[inline]
    pub fn sigma(&self) -> T {
        self.log_sigma.exp() + T::lit(SCALE_FLOOR)
    }

    #[inline]
    pub fn noise_variance(&self) -> T {
        let s = self.sigma();
        s * s
    }

    /// `2ℓ² = exp(ℓ̃) + 10⁻³`
    #[inline]
    pub fn two_ell_sq(&self) -> T {
        self.log_ell.exp() + T::lit(SCALE_FLOOR)
    }

    #[inline]
    pub fn n_terms(&self) -> usize {
        self.cheb.len()
    }

    /// Number of inferred hyperparameters `n`.
    #[inline]
    pub fn dim(&self) -> usize {
        self.cheb.len() + usize::from(self.infer_sigma) + usize::from(self.infer_ell)
    }

    pub fn theta(&self) -> Vec<T> {
        let mut th = self.cheb.clone();
        if self.infer_sigma {
            th.push(self.log_sigma);
        }
        if self.infer_ell {
            th.push(self.log_ell);
        }
        th
    }

    pub fn set_theta(&mut self, theta: &[T]) -> Result<()> {
        if theta.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: theta.len() });
        }
        let nt = self.cheb.len();
        self.cheb.copy_from_slice(&theta[..nt]);
        let mut k = nt;
        if self.infer_sigma {
            self.log_sigma = theta[k];
            k += 1;
        }
        if self.infer_ell {
            self.log_ell = theta[k];
        }
        Ok(())
    }

    pub fn with_theta(&self, theta: &[T]) -> Result<Self> {
        let mut hp = self.clone();
        hp.set_theta(theta)?;
        Ok(hp)
    }

    /// Index of `σ̃` inside `θ`, if inferred.
    pub fn sigma_index(&self) -> Option<usize> {
        self.infer_sigma.then_some(self.cheb.len())
    }

    /// Index of `ℓ̃` inside `θ`, if inferred.
    pub fn ell_index(&self) -> Option<usize> {
        self.infer_ell.then(|| self.cheb.len() + usize::from(self.infer_sigma))
    }
}

/// `C_θ(x)`, the tensor-product Chebyshev expansion at `x`.
pub fn chebyshev_field<T: Real>(hp: &HyperParams<T>, x: &[T]) -> Result<T> {
    if x.len() != hp.d {
        return Err(Error::DimensionMismatch { expected: hp.d, got: x.len() });
    }
    check_point(x)?;
    let basis = tensor_basis(x, hp.n_cheb);
    Ok(crate::scalar::dot(&basis, &hp.cheb))
}

/// `K_θ(x, x')`.
pub fn kernel_entry<T: Real>(hp: &HyperParams<T>, x: &[T], xp: &[T]) -> Result<T> {
    let cx = chebyshev_field(hp, x)?;
    let cy = chebyshev_field(hp, xp)?;
    let r2: T = x.iter().zip(xp).map(|(&a, &b)| (a - b) * (a - b)).sum();
    Ok(cx.exp() * cy.exp() * (-r2 / hp.two_ell_sq()).exp())
}

/// Dataset plus its precomputed Chebyshev basis; borrowed by every
/// [`KernelOperator`] built from it.
#[derive(Debug, Clone)]
pub struct KernelModel<T> {
    data: Dataset<T>,
    basis: ChebyshevBasis<T>,
}

impl<T: Real> KernelModel<T> {
    pub fn new(data: Dataset<T>, n_cheb: usize) -> Self {
        let basis = ChebyshevBasis::new(data.points(), data.dim(), n_cheb);
        Self { data, basis }
    }

    #[inline]
    pub fn data(&self) -> &Dataset<T> {
        &self.data
    }

    #[inline]
    pub fn basis(&self) -> &ChebyshevBasis<T> {
        &self.basis
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// `A(θ)` for the given hyperparameters.
    pub fn operator(&self, hp: &HyperParams<T>) -> Result<KernelOperator<'_, T>> {
        KernelOperator::new(self, hp.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hp1(n_cheb: usize) -> HyperParams<f64> {
        HyperParams::new(1, n_cheb, 0.1, 1.0).unwrap()
    }

    #[test]
    fn constant_field() {
        let mut hp = hp1(1);
        hp.set_cheb(&[0.7]).unwrap();
        assert_eq!(chebyshev_field(&hp, &[0.3]).unwrap(), 0.7);
        assert_eq!(chebyshev_field(&hp, &[-1.0]).unwrap(), 0.7);
    }

    #[test]
    fn linear_field() {
        let mut hp = hp1(2);
        hp.set_cheb(&[0.0, 1.0]).unwrap();
        assert_eq!(chebyshev_field(&hp, &[0.5]).unwrap(), 0.5);
    }

    #[test]
    fn field_domain_error() {
        let hp = hp1(2);
        assert!(matches!(chebyshev_field(&hp, &[1.01]), Err(Error::Domain(_))));
    }

    #[test]
    fn kernel_entry_examples() {
        let hp = hp1(2);
        assert_eq!(kernel_entry(&hp, &[0.3], &[0.3]).unwrap(), 1.0);
        // |x - x'|² = 2 needs d = 2
        let hp2 = HyperParams::new(2, 1, 0.1, 1.0).unwrap();
        let k = kernel_entry(&hp2, &[0.5, 0.5], &[-0.5, -0.5]).unwrap();
        assert!((k - (-2.0f64).exp()).abs() < 1e-15);
        let mut hpc = hp1(1);
        hpc.set_cheb(&[0.4]).unwrap();
        let k = kernel_entry(&hpc, &[0.1], &[0.1]).unwrap();
        assert!((k - 0.8f64.exp()).abs() < 1e-14);
    }

    #[test]
    fn frozen_scales_round_trip() {
        let hp = hp1(2);
        assert!((hp.noise_variance() - 0.1).abs() < 1e-15);
        assert!((hp.two_ell_sq() - 1.0).abs() < 1e-15);
        assert_eq!(hp.dim(), 2);
        let hp = hp.inferring_sigma(true).inferring_ell(true);
        assert_eq!(hp.dim(), 4);
        assert_eq!(hp.sigma_index(), Some(2));
        assert_eq!(hp.ell_index(), Some(3));
    }

    #[test]
    fn theta_round_trip() {
        let mut hp = HyperParams::new(2, 2, 0.1, 1.0).unwrap().inferring_ell(true);
        let th = vec![0.1, 0.2, 0.3, 0.4, -0.5];
        hp.set_theta(&th).unwrap();
        assert_eq!(hp.theta(), th);
        assert_eq!(hp.ell_index(), Some(4));
        assert!(hp.set_theta(&th[..4]).is_err());
    }

    #[test]
    fn scales_always_positive() {
        let mut hp = hp1(1).inferring_sigma(true).inferring_ell(true);
        hp.set_theta(&[0.0, -800.0, -800.0]).unwrap();
        assert!(hp.sigma() > 0.0);
        assert!(hp.two_ell_sq() > 0.0);
    }

    #[test]
    fn dataset_validation() {
        assert!(Dataset::new(1, vec![0.0, 1.2], vec![1.0, 2.0]).is_err());
        assert!(Dataset::new(1, vec![0.0, 1.0], vec![1.0]).is_err());
        assert!(Dataset::<f64>::new(1, vec![], vec![]).is_err());
        let ds = Dataset::equispaced_1d(10, vec![1.0f64; 10]).unwrap();
        assert_eq!(ds.point(0), &[-1.0]);
        assert!((ds.point(9)[0] - 0.8).abs() < 1e-15);
    }
}
