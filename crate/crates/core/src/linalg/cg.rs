use rayon::prelude::*;

use super::{LinearOperator, Preconditioner, Shifted, SolveConfig};
use crate::error::{Error, Result};
use crate::scalar::{axpy, dot, norm, Real};

/// How a family of shifted systems `(A + λ_p I) x_p = b` is solved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ShiftStrategy {
    /// One (optionally preconditioned) CG run per shift.
    #[default]
    Independent,
    /// Multi-shift CG on a single Krylov space; unpreconditioned only.
    SharedKrylov,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CgSolution<T> {
    pub x: Vec<T>,
    pub iterations: usize,
    /// Final true relative residual `‖op(x) - b‖ / ‖b‖`.
    pub residual: T,
}

fn true_residual<T: Real, O: LinearOperator<T> + ?Sized>(op: &O, x: &[T], b: &[T]) -> Result<Vec<T>> {
    let ax = op.apply(x)?;
    Ok(b.iter().zip(&ax).map(|(&bi, &ai)| bi - ai).collect())
}

/// Preconditioned conjugate gradients for `op x = b`.
///
/// Convergence is declared only after the true residual (recomputed from
/// `x`) meets the tolerance; a recursion-only estimate is never trusted.
pub fn cg_solve<T: Real, O: LinearOperator<T> + ?Sized>(
    op: &O,
    b: &[T],
    config: &SolveConfig<T>,
    precond: Option<&dyn Preconditioner<T>>,
    x0: Option<&[T]>,
) -> Result<CgSolution<T>> {
    config.validate()?;
    let n = op.dim();
    if b.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: b.len() });
    }
    if !crate::scalar::all_finite(b) {
        return Err(Error::Domain("non-finite right-hand side".into()));
    }
    let bnorm = norm(b);
    if bnorm == T::zero() {
        return Ok(CgSolution { x: vec![T::zero(); n], iterations: 0, residual: T::zero() });
    }
    let mut x = match x0 {
        Some(x0) => x0.to_vec(),
        None => vec![T::zero(); n],
    };
    let mut r = if x0.is_some() { true_residual(op, &x, b)? } else { b.to_vec() };
    let mut rel = norm(&r) / bnorm;
    if rel <= config.tolerance {
        return Ok(CgSolution { x, iterations: 0, residual: rel });
    }
    let precondition = |r: &[T]| match precond {
        Some(p) => p.apply(r),
        None => r.to_vec(),
    };
    let mut z = precondition(&r);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);

    for it in 1..=config.max_iterations {
        let ap = op.apply(&p)?;
        let pap = dot(&p, &ap);
        if !(pap > T::zero()) {
            return Err(Error::NotPositiveDefinite(format!(
                "pᵀAp = {} at CG iteration {it}",
                pap.to_f64_lossy()
            )));
        }
        let alpha = rz / pap;
        axpy(alpha, &p, &mut x);
        axpy(-alpha, &ap, &mut r);
        rel = norm(&r) / bnorm;
        if rel <= config.tolerance {
            let rt = true_residual(op, &x, b)?;
            let rel_true = norm(&rt) / bnorm;
            if rel_true <= config.tolerance {
                return Ok(CgSolution { x, iterations: it, residual: rel_true });
            }
            // recursion drifted; restart from the true residual
            r = rt;
            rel = rel_true;
            z = precondition(&r);
            p = z.clone();
            rz = dot(&r, &z);
            continue;
        }
        z = precondition(&r);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for (pi, &zi) in p.iter_mut().zip(&z) {
            *pi = zi + beta * *pi;
        }
    }
    Err(Error::ConvergenceFailure { iterations: config.max_iterations, residual: rel.to_f64_lossy() })
}

/// Multi-shift CG: solves `(op + λ_p I) x_p = b` for all `p` from the
/// Krylov space of the smallest shift, one operator product per iteration.
/// Shifts whose true residual misses the tolerance at the end are finished
/// by an independent warm-started CG run.
pub fn shifted_cg_solve<T: Real, O: LinearOperator<T> + ?Sized>(
    op: &O,
    b: &[T],
    shifts: &[T],
    config: &SolveConfig<T>,
) -> Result<Vec<CgSolution<T>>> {
    config.validate()?;
    let n = op.dim();
    if b.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: b.len() });
    }
    if shifts.is_empty() {
        return Ok(Vec::new());
    }
    let base = shifts.iter().copied().fold(T::infinity(), T::min);
    let bnorm = norm(b);
    if bnorm == T::zero() {
        return Ok(shifts
            .iter()
            .map(|_| CgSolution { x: vec![T::zero(); n], iterations: 0, residual: T::zero() })
            .collect());
    }
    let base_op = Shifted { op, shift: base };
    let m = shifts.len();
    let rel_shift: Vec<T> = shifts.iter().map(|&s| s - base).collect();

    let mut r = b.to_vec();
    let mut p = b.to_vec();
    let mut rr = dot(&r, &r);
    let mut xs = vec![vec![T::zero(); n]; m];
    let mut ps = vec![b.to_vec(); m];
    let mut zeta = vec![T::one(); m];
    let mut zeta_prev = vec![T::one(); m];
    let mut active = vec![true; m];
    let mut iters = vec![0usize; m];
    let mut alpha_prev = T::one();
    let mut beta_prev = T::zero();

    for it in 1..=config.max_iterations {
        let ap = base_op.apply(&p)?;
        let pap = dot(&p, &ap);
        if !(pap > T::zero()) {
            return Err(Error::NotPositiveDefinite(format!("pᵀAp = {}", pap.to_f64_lossy())));
        }
        let alpha = rr / pap;
        let mut r_next = r.clone();
        axpy(-alpha, &ap, &mut r_next);
        let rr_next = dot(&r_next, &r_next);
        let beta = rr_next / rr;

        for k in 0..m {
            if !active[k] {
                continue;
            }
            let sigma = rel_shift[k];
            let denom = alpha * beta_prev * (zeta_prev[k] - zeta[k])
                + zeta_prev[k] * alpha_prev * (T::one() + sigma * alpha);
            let zeta_next = zeta[k] * zeta_prev[k] * alpha_prev / denom;
            let ratio = zeta_next / zeta[k];
            let alpha_k = alpha * ratio;
            let beta_k = beta * ratio * ratio;
            axpy(alpha_k, &ps[k], &mut xs[k]);
            for (pk, &ri) in ps[k].iter_mut().zip(&r_next) {
                *pk = zeta_next * ri + beta_k * *pk;
            }
            zeta_prev[k] = zeta[k];
            zeta[k] = zeta_next;
            iters[k] = it;
            if zeta_next.abs() * rr_next.sqrt() / bnorm <= config.tolerance {
                active[k] = false;
            }
        }

        r = r_next;
        rr = rr_next;
        for (pi, &ri) in p.iter_mut().zip(&r) {
            *pi = ri + beta * *pi;
        }
        alpha_prev = alpha;
        beta_prev = beta;
        if active.iter().all(|a| !a) {
            break;
        }
    }

    let solutions: Result<Vec<CgSolution<T>>> = xs
        .into_par_iter()
        .zip(shifts.par_iter())
        .zip(iters.par_iter())
        .map(|((x, &shift), &it)| {
            let sop = Shifted { op, shift };
            let rt = true_residual(&sop, &x, b)?;
            let rel = norm(&rt) / bnorm;
            if rel <= config.tolerance {
                return Ok(CgSolution { x, iterations: it, residual: rel });
            }
            let mut sol = cg_solve(&sop, b, config, None, Some(&x))?;
            sol.iterations += it;
            Ok(sol)
        })
        .collect();
    solutions
}

/// Preconditioner that can be adapted to each shift of a shifted family.
pub trait ShiftedPreconditioner<T: Real>: Sync {
    fn apply_shifted(&self, shift: T, r: &[T]) -> Vec<T>;
}

struct AtShift<'p, T> {
    inner: &'p dyn ShiftedPreconditioner<T>,
    shift: T,
}

impl<T: Real> Preconditioner<T> for AtShift<'_, T> {
    fn apply(&self, r: &[T]) -> Vec<T> {
        self.inner.apply_shifted(self.shift, r)
    }
}

/// Solves `(op + λ_p I) x_p = b` for every shift `λ_p ≥ 0`. Errors are
/// reported per shift through the returned vector's first failure.
pub fn batched_shifted_solve<T: Real, O: LinearOperator<T> + ?Sized>(
    op: &O,
    b: &[T],
    shifts: &[T],
    config: &SolveConfig<T>,
    precond: Option<&dyn ShiftedPreconditioner<T>>,
) -> Result<Vec<CgSolution<T>>> {
    if let Some(&bad) = shifts.iter().find(|s| !(**s >= T::zero())) {
        return Err(Error::Domain(format!("negative shift {}", bad.to_f64_lossy())));
    }
    if precond.is_none() && config.shifts == ShiftStrategy::SharedKrylov {
        return shifted_cg_solve(op, b, shifts, config);
    }
    shifts
        .par_iter()
        .map(|&shift| {
            let sop = Shifted { op, shift };
            match precond {
                Some(p) => {
                    let at = AtShift { inner: p, shift };
                    cg_solve(&sop, b, config, Some(&at), None)
                }
                None => cg_solve(&sop, b, config, None, None),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dense::DenseMatrix;
    use crate::linalg::Diagonal;

    fn spd(n: usize, seed: u64) -> DenseMatrix<f64> {
        let mut s = seed;
        let mut next = || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        let b = DenseMatrix::from_fn(n, n, |_, _| next());
        let mut a = b.transpose().matmul(&b);
        for i in 0..n {
            a[(i, i)] += 0.05;
        }
        a
    }

    #[test]
    fn identity_converges_in_one_iteration() {
        let op = Diagonal(vec![1.0; 7]);
        let b: Vec<f64> = (0..7).map(|i| i as f64 - 3.0).collect();
        let sol = cg_solve(&op, &b, &SolveConfig::default(), None, None).unwrap();
        assert_eq!(sol.iterations, 1);
        assert_eq!(sol.x, b);
    }

    #[test]
    fn diagonal_inverse() {
        let op = Diagonal(vec![1.0, 2.0, 3.0, 4.0, 5.0]);
        let sol = cg_solve(&op, &[1.0; 5], &SolveConfig::with_tolerance(1e-12), None, None).unwrap();
        for (i, &xi) in sol.x.iter().enumerate() {
            assert!((xi - 1.0 / (i + 1) as f64).abs() < 1e-11);
        }
    }

    #[test]
    fn zero_rhs_is_zero_solution() {
        let op = Diagonal(vec![2.0; 3]);
        let sol = cg_solve(&op, &[0.0; 3], &SolveConfig::default(), None, None).unwrap();
        assert_eq!(sol.iterations, 0);
        assert_eq!(sol.x, vec![0.0; 3]);
    }

    #[test]
    fn convergence_failure_reports_residual() {
        let a = spd(30, 3);
        let cfg = SolveConfig { tolerance: 1e-14, max_iterations: 2, ..Default::default() };
        let err = cg_solve(&a, &[1.0; 30], &cfg, None, None).unwrap_err();
        match err {
            Error::ConvergenceFailure { iterations, residual } => {
                assert_eq!(iterations, 2);
                assert!(residual > 1e-14);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn shifted_identity() {
        let op = Diagonal(vec![1.0f64; 4]);
        let b = [1.0, 0.0, 0.0, 0.0];
        for strategy in [ShiftStrategy::Independent, ShiftStrategy::SharedKrylov] {
            let cfg = SolveConfig { shifts: strategy, ..Default::default() };
            let sols = batched_shifted_solve(&op, &b, &[0.0, 1.0, 3.0], &cfg, None).unwrap();
            assert!((sols[0].x[0] - 1.0).abs() < 1e-14);
            assert!((sols[1].x[0] - 0.5).abs() < 1e-14);
            assert!((sols[2].x[0] - 0.25).abs() < 1e-14);
        }
    }

    #[test]
    fn shared_krylov_matches_independent() {
        let a = spd(25, 11);
        let b: Vec<f64> = (0..25).map(|i| (i as f64).sin()).collect();
        let shifts = [0.0, 0.01, 0.3, 2.0, 50.0];
        let cfg = SolveConfig::with_tolerance(1e-10);
        let shared = shifted_cg_solve(&a, &b, &shifts, &cfg).unwrap();
        for (sol, &s) in shared.iter().zip(&shifts) {
            let op = Shifted { op: &a, shift: s };
            let r = true_residual(&op, &sol.x, &b).unwrap();
            assert!(norm(&r) / norm(&b) <= 1e-10);
        }
        // the large shifts converge from the shared space in fewer steps
        assert!(shared[4].iterations <= shared[0].iterations);
    }

    #[test]
    fn negative_shift_rejected() {
        let op = Diagonal(vec![1.0; 2]);
        let r = batched_shifted_solve(&op, &[1.0, 1.0], &[-1.0], &SolveConfig::default(), None);
        assert!(matches!(r, Err(Error::Domain(_))));
    }
}
