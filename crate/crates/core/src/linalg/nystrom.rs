use rand::Rng;

use super::{LinearOperator, Preconditioner, ShiftedPreconditioner};
use crate::dense::{symmetric_eigen, thin_qr, Cholesky, DenseMatrix};
use crate::error::{Error, Result};
use crate::random::standard_normal;
use crate::scalar::Real;

/// Extra sketch columns beyond the requested rank.
pub const NYSTROM_OVERSAMPLING: usize = 10;

/// Randomized Nyström approximation `K ≈ U diag(λ) Uᵀ` of a PSD operator.
#[derive(Debug, Clone)]
pub struct NystromPreconditioner<T> {
    u: DenseMatrix<T>,
    eigenvalues: Vec<T>,
    stabilizing_shift: T,
}

impl<T: Real> NystromPreconditioner<T> {
    #[inline]
    pub fn rank(&self) -> usize {
        self.eigenvalues.len()
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.u.rows()
    }

    /// `N x r` factor with orthonormal columns.
    #[inline]
    pub fn factor(&self) -> &DenseMatrix<T> {
        &self.u
    }

    /// Descending, nonnegative.
    #[inline]
    pub fn eigenvalues(&self) -> &[T] {
        &self.eigenvalues
    }

    /// The `ν` added to the sketch before the core factorization.
    #[inline]
    pub fn stabilizing_shift(&self) -> T {
        self.stabilizing_shift
    }

    /// `(U Λ Uᵀ + diag · I)⁻¹ v` by the Woodbury identity, `O(N r)`.
    pub fn woodbury_apply(&self, diag: T, v: &[T]) -> Vec<T> {
        debug_assert!(diag > T::zero());
        let utv = self.u.matvec_t(v);
        let inv_diag = T::one() / diag;
        let coeff: Vec<T> = utv
            .iter()
            .zip(&self.eigenvalues)
            .map(|(&c, &lam)| c * (T::one() / (lam + diag) - inv_diag))
            .collect();
        let mut out: Vec<T> = v.iter().map(|&x| x * inv_diag).collect();
        let corr = self.u.matvec(&coeff);
        for (o, c) in out.iter_mut().zip(corr) {
            *o += c;
        }
        out
    }

    /// Preconditioner for `σ² I + K` (and its shifts).
    pub fn woodbury(&self, noise_variance: T) -> WoodburyPreconditioner<'_, T> {
        WoodburyPreconditioner { nystrom: self, diag: noise_variance }
    }
}

/// `(U Λ Uᵀ + (diag + λ) I)⁻¹`; one factorization serves all shifts `λ`.
#[derive(Debug, Clone, Copy)]
pub struct WoodburyPreconditioner<'p, T> {
    nystrom: &'p NystromPreconditioner<T>,
    diag: T,
}

impl<T: Real> Preconditioner<T> for WoodburyPreconditioner<'_, T> {
    fn apply(&self, r: &[T]) -> Vec<T> {
        self.nystrom.woodbury_apply(self.diag, r)
    }
}

impl<T: Real> ShiftedPreconditioner<T> for WoodburyPreconditioner<'_, T> {
    fn apply_shifted(&self, shift: T, r: &[T]) -> Vec<T> {
        self.nystrom.woodbury_apply(self.diag + shift, r)
    }
}

/// Randomized Nyström factorization of a PSD operator from a Gaussian
/// sketch with [`NYSTROM_OVERSAMPLING`] extra columns, truncated to `rank`.
///
/// The sketch is stabilized with `ν = √N · ε · ‖Y‖_F` before the core
/// Cholesky factorization; eigenvalues below `ν` are clipped to zero.
pub fn nystrom_factorize<T, O, R>(op: &O, rank: usize, rng: &mut R) -> Result<NystromPreconditioner<T>>
where
    T: Real,
    O: LinearOperator<T> + ?Sized,
    R: Rng + ?Sized,
{
    let n = op.dim();
    if rank == 0 || rank > n {
        return Err(Error::InvalidConfig(format!("Nyström rank {rank} must lie in 1..={n}")));
    }
    let l = (rank + NYSTROM_OVERSAMPLING).min(n);
    let omega_raw = DenseMatrix::from_fn(n, l, |_, _| standard_normal::<T, R>(rng));
    let (omega, _) = thin_qr(&omega_raw);
    let cols: Vec<Vec<T>> = (0..l).map(|j| omega.column(j)).collect();
    let col_refs: Vec<&[T]> = cols.iter().map(Vec::as_slice).collect();
    let y_cols = op.apply_many(&col_refs)?;
    let y = DenseMatrix::from_fn(n, l, |i, j| y_cols[j][i]);

    let yf = y.frobenius_norm();
    let mut nu = T::count(n).sqrt() * T::epsilon() * yf;
    if nu == T::zero() {
        nu = T::epsilon();
    }
    for _attempt in 0..8 {
        let y_nu = DenseMatrix::from_fn(n, l, |i, j| y[(i, j)] + nu * omega[(i, j)]);
        let core = omega.transpose().matmul(&y_nu);
        let core = DenseMatrix::from_fn(l, l, |i, j| T::lit(0.5) * (core[(i, j)] + core[(j, i)]));
        let chol = match Cholesky::new(&core) {
            Ok(c) => c,
            Err(_) => {
                nu *= T::lit(10.0);
                continue;
            }
        };
        // B = Y_ν L^{-T}: each row solves L b = y_row.
        let mut b = DenseMatrix::zeros(n, l);
        for i in 0..n {
            let mut row = y_nu.row(i).to_vec();
            chol.solve_lower_in_place(&mut row);
            for j in 0..l {
                b[(i, j)] = row[j];
            }
        }
        let (q, r) = thin_qr(&b);
        let rrt = r.matmul(&r.transpose());
        let (s2, w) = symmetric_eigen(&rrt);
        let u_full = q.matmul(&w);
        let u = DenseMatrix::from_fn(n, rank, |i, j| u_full[(i, j)]);
        let eigenvalues = s2[..rank].iter().map(|&s| (s - nu).max(T::zero())).collect();
        return Ok(NystromPreconditioner { u, eigenvalues, stabilizing_shift: nu });
    }
    Err(Error::NotPositiveDefinite("Nyström core matrix could not be factorized".into()))
}
