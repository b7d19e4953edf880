//! Matrix-free Krylov solvers and randomized low-rank preconditioning over
//! symmetric positive definite operators.

mod cg;
mod nystrom;
mod power;

pub use cg::{
    batched_shifted_solve, cg_solve, shifted_cg_solve, CgSolution, ShiftStrategy, ShiftedPreconditioner,
};
pub use nystrom::{nystrom_factorize, NystromPreconditioner, WoodburyPreconditioner, NYSTROM_OVERSAMPLING};
pub use power::{power_method, POWER_METHOD_SEED};

use crate::dense::DenseMatrix;
use crate::error::{Error, Result};
use crate::kernel::KernelOperator;
use crate::scalar::Real;

/// Symmetric linear map on `R^N`.
pub trait LinearOperator<T: Real>: Sync {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[T]) -> Result<Vec<T>>;

    /// Applies the operator to several vectors; implementations that can
    /// share work across right-hand sides override this.
    fn apply_many(&self, xs: &[&[T]]) -> Result<Vec<Vec<T>>> {
        xs.iter().map(|x| self.apply(x)).collect()
    }
}

/// Approximate inverse applied inside preconditioned CG.
pub trait Preconditioner<T: Real>: Sync {
    fn apply(&self, r: &[T]) -> Vec<T>;
}

impl<T: Real> LinearOperator<T> for DenseMatrix<T> {
    fn dim(&self) -> usize {
        self.rows()
    }

    fn apply(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.cols() {
            return Err(Error::DimensionMismatch { expected: self.cols(), got: x.len() });
        }
        Ok(self.matvec(x))
    }
}

impl<T: Real> LinearOperator<T> for KernelOperator<'_, T> {
    fn dim(&self) -> usize {
        KernelOperator::dim(self)
    }

    fn apply(&self, x: &[T]) -> Result<Vec<T>> {
        KernelOperator::apply(self, x)
    }
}

/// `K(θ)` alone (no noise diagonal), the operator the Nyström sketch sees.
pub struct KernelOnly<'o, 'a, T>(pub &'o KernelOperator<'a, T>);

impl<T: Real> LinearOperator<T> for KernelOnly<'_, '_, T> {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn apply(&self, x: &[T]) -> Result<Vec<T>> {
        self.0.apply_kernel(x)
    }

    fn apply_many(&self, xs: &[&[T]]) -> Result<Vec<Vec<T>>> {
        self.0.apply_kernel_many(xs)
    }
}

/// `op + shift · I`
pub struct Shifted<'o, O: ?Sized, T> {
    pub op: &'o O,
    pub shift: T,
}

impl<T: Real, O: LinearOperator<T> + ?Sized> LinearOperator<T> for Shifted<'_, O, T> {
    fn dim(&self) -> usize {
        self.op.dim()
    }

    fn apply(&self, x: &[T]) -> Result<Vec<T>> {
        let mut y = self.op.apply(x)?;
        if self.shift != T::zero() {
            crate::scalar::axpy(self.shift, x, &mut y);
        }
        Ok(y)
    }
}

/// Diagonal operator.
#[derive(Debug, Clone)]
pub struct Diagonal<T>(pub Vec<T>);

impl<T: Real> LinearOperator<T> for Diagonal<T> {
    fn dim(&self) -> usize {
        self.0.len()
    }

    fn apply(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.0.len() {
            return Err(Error::DimensionMismatch { expected: self.0.len(), got: x.len() });
        }
        Ok(x.iter().zip(&self.0).map(|(&a, &d)| a * d).collect())
    }
}

/// Operator from a closure.
pub struct FnOperator<F> {
    dim: usize,
    f: F,
}

impl<F> FnOperator<F> {
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<T: Real, F> LinearOperator<T> for FnOperator<F>
where
    F: Fn(&[T]) -> Vec<T> + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn apply(&self, x: &[T]) -> Result<Vec<T>> {
        Ok((self.f)(x))
    }
}

/// Stopping rule for the Krylov solvers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveConfig<T> {
    /// Relative residual target `‖op(x) - b‖ / ‖b‖`.
    pub tolerance: T,
    pub max_iterations: usize,
    pub shifts: ShiftStrategy,
}

impl<T: Real> Default for SolveConfig<T> {
    fn default() -> Self {
        Self { tolerance: T::lit(1e-6), max_iterations: 10_000, shifts: ShiftStrategy::Independent }
    }
}

impl<T: Real> SolveConfig<T> {
    pub fn with_tolerance(tolerance: T) -> Self {
        Self { tolerance, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > T::zero()) {
            return Err(Error::InvalidConfig("solver tolerance must be positive".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidConfig("max_iterations must be at least 1".into()));
        }
        Ok(())
    }
}
