use rand::Rng;

use crate::dense::{Cholesky, DenseMatrix};
use crate::error::{Error, Result};
use crate::random::standard_normal_vec;
use crate::scalar::{dot, Real};

/// HMC mass matrix `M`.
#[derive(Debug, Clone, Default)]
pub enum MassMatrix<T> {
    #[default]
    Identity,
    Diagonal(Vec<T>),
    Dense(Cholesky<T>),
}

impl<T: Real> MassMatrix<T> {
    pub fn diagonal(diag: Vec<T>) -> Result<Self> {
        if diag.iter().any(|&d| !(d > T::zero() && d.is_finite())) {
            return Err(Error::InvalidConfig("diagonal mass entries must be positive".into()));
        }
        Ok(Self::Diagonal(diag))
    }

    pub fn dense(m: &DenseMatrix<T>) -> Result<Self> {
        Cholesky::new(m)
            .map(Self::Dense)
            .map_err(|_| Error::InvalidConfig("mass matrix is not positive definite".into()))
    }

    pub fn check_dim(&self, n: usize) -> Result<()> {
        let got = match self {
            Self::Identity => return Ok(()),
            Self::Diagonal(d) => d.len(),
            Self::Dense(c) => c.dim(),
        };
        if got != n {
            return Err(Error::DimensionMismatch { expected: n, got });
        }
        Ok(())
    }

    /// `π ~ N(0, M)`
    pub fn sample_momentum<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Vec<T> {
        let z: Vec<T> = standard_normal_vec(rng, n);
        match self {
            Self::Identity => z,
            Self::Diagonal(d) => z.iter().zip(d).map(|(&zi, &di)| zi * di.sqrt()).collect(),
            Self::Dense(c) => c.factor().matvec(&z),
        }
    }

    /// `M⁻¹ π`
    pub fn inverse_apply(&self, pi: &[T]) -> Vec<T> {
        match self {
            Self::Identity => pi.to_vec(),
            Self::Diagonal(d) => pi.iter().zip(d).map(|(&p, &di)| p / di).collect(),
            Self::Dense(c) => c.solve(pi),
        }
    }

    /// `½ πᵀ M⁻¹ π`
    pub fn kinetic_energy(&self, pi: &[T]) -> T {
        T::lit(0.5) * dot(pi, &self.inverse_apply(pi))
    }
}
