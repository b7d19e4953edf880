//! Rational approximation of `A^{±1/2}` by the elliptic-optimal contour
//! quadrature, which turns a matrix square root times a vector into a
//! batch of shifted linear solves.

mod elliptic;

pub use elliptic::{elliptic_k, jacobi_elliptic};

use crate::error::{Error, Result};
use crate::linalg::{batched_shifted_solve, power_method, LinearOperator, ShiftedPreconditioner, SolveConfig};
use crate::scalar::Real;

pub const DEFAULT_POLES: usize = 15;
/// Power iterations for the upper spectral bound.
pub const BOUND_POWER_ITERATIONS: usize = 10;
/// Safety factor applied to the power-method estimate.
pub const BOUND_INFLATION: f64 = 1.1;

const MAX_MODULUS_SQ: f64 = 1.0 - 1e-12;

/// Enclosure `[m, M]` of the spectrum of an SPD operator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralBounds<T> {
    lower: T,
    upper: T,
}

impl<T: Real> SpectralBounds<T> {
    pub fn new(lower: T, upper: T) -> Result<Self> {
        if !(lower > T::zero() && lower.is_finite() && upper.is_finite() && lower <= upper) {
            return Err(Error::Domain(format!(
                "spectral bounds need 0 < m <= M, got m = {}, M = {}",
                lower.to_f64_lossy(),
                upper.to_f64_lossy()
            )));
        }
        Ok(Self { lower, upper })
    }

    /// `m = σ²` and `M` from an inflated power-method estimate, never below `m`.
    pub fn estimate<O: LinearOperator<T> + ?Sized>(op: &O, noise_variance: T) -> Result<Self> {
        let lam = power_method(op, BOUND_POWER_ITERATIONS)?;
        let upper = (lam * T::lit(BOUND_INFLATION)).max(noise_variance);
        Self::new(noise_variance, upper)
    }

    #[inline]
    pub fn lower(&self) -> T {
        self.lower
    }

    #[inline]
    pub fn upper(&self) -> T {
        self.upper
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PowerMode {
    Sqrt,
    InvSqrt,
}

/// `A^{-1/2} ≈ Σ_j w_j (A + λ_j I)⁻¹`; in `Sqrt` mode the sum is
/// multiplied by `A` afterwards.
#[derive(Debug, Clone, PartialEq)]
pub struct PoleExpansion<T> {
    weights: Vec<T>,
    shifts: Vec<T>,
    mode: PowerMode,
    bounds: SpectralBounds<T>,
}

impl<T: Real> PoleExpansion<T> {
    #[inline]
    pub fn n_poles(&self) -> usize {
        self.weights.len()
    }

    #[inline]
    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    #[inline]
    pub fn shifts(&self) -> &[T] {
        &self.shifts
    }

    #[inline]
    pub fn mode(&self) -> PowerMode {
        self.mode
    }

    #[inline]
    pub fn bounds(&self) -> SpectralBounds<T> {
        self.bounds
    }

    /// The same poles, used for the other power.
    pub fn with_mode(&self, mode: PowerMode) -> Self {
        Self { mode, ..self.clone() }
    }

    /// The rational function evaluated at a scalar `a > 0`.
    pub fn evaluate_scalar(&self, a: T) -> T {
        let s: T = self.weights.iter().zip(&self.shifts).map(|(&w, &l)| w / (a + l)).sum();
        match self.mode {
            PowerMode::InvSqrt => s,
            PowerMode::Sqrt => a * s,
        }
    }

    /// Applies the expansion with a caller-supplied action of
    /// `(A + λ I)⁻¹` and of `A`; sums in ascending pole order.
    pub fn apply_with<S, M>(&self, v: &[T], mut solve: S, apply_a: M) -> Result<Vec<T>>
    where
        S: FnMut(T, &[T]) -> Result<Vec<T>>,
        M: FnOnce(&[T]) -> Result<Vec<T>>,
    {
        let mut acc = vec![T::zero(); v.len()];
        for (&w, &l) in self.weights.iter().zip(&self.shifts) {
            let x = solve(l, v)?;
            crate::scalar::axpy(w, &x, &mut acc);
        }
        match self.mode {
            PowerMode::InvSqrt => Ok(acc),
            PowerMode::Sqrt => apply_a(&acc),
        }
    }
}

/// Builds the `n_poles`-point expansion for the spectral enclosure `bounds`.
///
/// Nodes sit on the imaginary axis; evaluating them through the Jacobi
/// imaginary transformation keeps the whole construction in real arithmetic.
pub fn build_pole_expansion<T: Real>(
    bounds: SpectralBounds<T>,
    n_poles: usize,
    mode: PowerMode,
) -> Result<PoleExpansion<T>> {
    if n_poles == 0 {
        return Err(Error::InvalidConfig("pole count must be at least 1".into()));
    }
    let m = bounds.lower.to_f64_lossy();
    let big_m = bounds.upper.to_f64_lossy();
    let k2 = (m / big_m).min(MAX_MODULUS_SQ);
    let k = k2.sqrt();
    let kp2 = 1.0 - k2;
    let kp_big = elliptic_k(kp2)?;
    let prefactor = 2.0 * kp_big * m.sqrt() / (std::f64::consts::PI * n_poles as f64);

    let mut weights = Vec::with_capacity(n_poles);
    let mut shifts = Vec::with_capacity(n_poles);
    for j in 0..n_poles {
        let u = (j as f64 + 0.5) * kp_big / n_poles as f64;
        // sn(iu|k²)² = -sn²/cn², cn·dn(iu|k²) = dn/cn², all at parameter k'².
        // Past the midpoint cn is small; reflect about K' instead.
        let (shift, factor) = if u <= 0.5 * kp_big {
            let (sn, cn, dn) = jacobi_elliptic(u, kp2)?;
            (m * sn * sn / (cn * cn), dn / (cn * cn))
        } else {
            let (sn, cn, dn) = jacobi_elliptic(kp_big - u, kp2)?;
            (m * cn * cn / (k2 * sn * sn), dn / (k * sn * sn))
        };
        let w = prefactor * factor;
        if !(shift > 0.0 && shift.is_finite() && w.is_finite()) {
            return Err(Error::NumericalOverflow(format!("pole {j} is degenerate (shift {shift}, weight {w})")));
        }
        weights.push(T::lit(w));
        shifts.push(T::lit(shift));
    }
    Ok(PoleExpansion { weights, shifts, mode, bounds })
}

/// Result of applying an expansion: the vector and the CG iterations of
/// every shifted solve.
#[derive(Debug, Clone, PartialEq)]
pub struct PoleApplication<T> {
    pub value: Vec<T>,
    pub iterations: Vec<usize>,
}

/// Applies the expansion in its configured mode through batched shifted CG.
pub fn apply_expansion<T: Real, O: LinearOperator<T> + ?Sized>(
    op: &O,
    v: &[T],
    expansion: &PoleExpansion<T>,
    config: &SolveConfig<T>,
    precond: Option<&dyn ShiftedPreconditioner<T>>,
) -> Result<PoleApplication<T>> {
    if v.len() != op.dim() {
        return Err(Error::DimensionMismatch { expected: op.dim(), got: v.len() });
    }
    let sols = batched_shifted_solve(op, v, &expansion.shifts, config, precond)?;
    let mut acc = vec![T::zero(); v.len()];
    for (sol, &w) in sols.iter().zip(&expansion.weights) {
        crate::scalar::axpy(w, &sol.x, &mut acc);
    }
    let value = match expansion.mode {
        PowerMode::InvSqrt => acc,
        PowerMode::Sqrt => op.apply(&acc)?,
    };
    Ok(PoleApplication { value, iterations: sols.iter().map(|s| s.iterations).collect() })
}

/// `A^{-1/2} v`.
pub fn apply_inv_sqrt<T: Real, O: LinearOperator<T> + ?Sized>(
    op: &O,
    v: &[T],
    expansion: &PoleExpansion<T>,
    config: &SolveConfig<T>,
    precond: Option<&dyn ShiftedPreconditioner<T>>,
) -> Result<PoleApplication<T>> {
    if expansion.mode != PowerMode::InvSqrt {
        return Err(Error::InvalidConfig("expansion is not in inverse-square-root mode".into()));
    }
    apply_expansion(op, v, expansion, config, precond)
}

/// `A^{1/2} v`.
pub fn apply_sqrt<T: Real, O: LinearOperator<T> + ?Sized>(
    op: &O,
    v: &[T],
    expansion: &PoleExpansion<T>,
    config: &SolveConfig<T>,
    precond: Option<&dyn ShiftedPreconditioner<T>>,
) -> Result<PoleApplication<T>> {
    if expansion.mode != PowerMode::Sqrt {
        return Err(Error::InvalidConfig("expansion is not in square-root mode".into()));
    }
    apply_expansion(op, v, expansion, config, precond)
}

/// Predicted asymptotic error rate `exp(-2π K N_p / K')`.
pub fn predicted_error_rate(bounds: SpectralBounds<f64>, n_poles: usize) -> Result<f64> {
    let k2 = (bounds.lower / bounds.upper).min(MAX_MODULUS_SQ);
    let kk = elliptic_k(k2)?;
    let kp = elliptic_k(1.0 - k2)?;
    Ok((-2.0 * std::f64::consts::PI * kk * n_poles as f64 / kp).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dense::DenseMatrix;
    use crate::linalg::{Diagonal, ShiftStrategy};
    use proptest::prelude::*;

    fn tight() -> SolveConfig<f64> {
        SolveConfig::with_tolerance(1e-13)
    }

    #[test]
    fn bounds_validated() {
        assert!(SpectralBounds::new(0.0, 1.0).is_err());
        assert!(SpectralBounds::new(2.0, 1.0).is_err());
        assert!(SpectralBounds::new(f64::NAN, 1.0).is_err());
        assert!(SpectralBounds::new(1.0, 1.0).is_ok());
    }

    #[test]
    fn zero_poles_rejected() {
        let b = SpectralBounds::new(0.1, 1.0).unwrap();
        assert!(build_pole_expansion(b, 0, PowerMode::InvSqrt).is_err());
    }

    #[test]
    fn scalar_evaluation_accuracy() {
        let b = SpectralBounds::new(0.1, 10.0).unwrap();
        let inv = build_pole_expansion(b, 15, PowerMode::InvSqrt).unwrap();
        let sq = inv.with_mode(PowerMode::Sqrt);
        for a in [0.1f64, 1.0, 10.0] {
            let e1 = (inv.evaluate_scalar(a) - a.powf(-0.5)).abs() * a.sqrt();
            let e2 = (sq.evaluate_scalar(a) - a.sqrt()).abs() / a.sqrt();
            assert!(e1 <= 1e-8, "a={a}: {e1}");
            assert!(e2 <= 1e-8, "a={a}: {e2}");
        }
    }

    #[test]
    fn identity_with_degenerate_bounds() {
        let b = SpectralBounds::new(1.0, 1.0).unwrap();
        let e = build_pole_expansion(b, 15, PowerMode::InvSqrt).unwrap();
        let op = Diagonal(vec![1.0; 5]);
        let v = [1.0, -2.0, 3.0, 0.5, 0.0];
        let out = apply_inv_sqrt(&op, &v, &e, &tight(), None).unwrap().value;
        for (o, x) in out.iter().zip(v) {
            assert!((o - x).abs() <= 1e-10);
        }
    }

    #[test]
    fn scaled_identity() {
        let op = Diagonal(vec![4.0; 6]);
        let b = SpectralBounds::estimate(&op, 4.0).unwrap();
        let inv = build_pole_expansion(b, 15, PowerMode::InvSqrt).unwrap();
        let v: Vec<f64> = (0..6).map(|i| i as f64 + 1.0).collect();
        let half = apply_inv_sqrt(&op, &v, &inv, &tight(), None).unwrap().value;
        let dbl = apply_sqrt(&op, &v, &inv.with_mode(PowerMode::Sqrt), &tight(), None).unwrap().value;
        for i in 0..6 {
            assert!((half[i] - v[i] / 2.0).abs() <= 1e-8 * v[i]);
            assert!((dbl[i] - 2.0 * v[i]).abs() <= 1e-8 * v[i]);
        }
    }

    #[test]
    fn mode_mismatch_rejected() {
        let op = Diagonal(vec![1.0; 2]);
        let b = SpectralBounds::new(1.0, 2.0).unwrap();
        let e = build_pole_expansion(b, 3, PowerMode::Sqrt).unwrap();
        assert!(apply_inv_sqrt(&op, &[1.0, 1.0], &e, &tight(), None).is_err());
    }

    #[test]
    fn shared_krylov_matches_independent() {
        let op = Diagonal((1..=20).map(|i| i as f64 * 0.5).collect());
        let b = SpectralBounds::estimate(&op, 0.5).unwrap();
        let e = build_pole_expansion(b, 15, PowerMode::InvSqrt).unwrap();
        let v = vec![1.0; 20];
        let a = apply_inv_sqrt(&op, &v, &e, &tight(), None).unwrap().value;
        let cfg = SolveConfig { shifts: ShiftStrategy::SharedKrylov, ..tight() };
        let s = apply_inv_sqrt(&op, &v, &e, &cfg, None).unwrap().value;
        for (x, y) in a.iter().zip(&s) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn apply_with_exact_solver() {
        let d = [0.3f64, 1.0, 2.5];
        let b = SpectralBounds::new(0.3, 2.5).unwrap();
        let e = build_pole_expansion(b, 15, PowerMode::Sqrt).unwrap();
        let out = e
            .apply_with(
                &[1.0; 3],
                |l, v| Ok(v.iter().zip(&d).map(|(x, di)| x / (di + l)).collect()),
                |v| Ok(v.iter().zip(&d).map(|(x, di)| x * di).collect()),
            )
            .unwrap();
        for (o, di) in out.iter().zip(d) {
            assert!((o - di.sqrt()).abs() < 1e-10);
        }
    }

    #[test]
    fn dense_matches_single_precision_bounds() {
        let a = DenseMatrix::<f32>::diagonal(&[1.0, 2.0, 4.0]);
        let b = SpectralBounds::new(1.0f32, 4.4).unwrap();
        let e = build_pole_expansion(b, 15, PowerMode::InvSqrt).unwrap();
        let cfg = SolveConfig::with_tolerance(1e-6f32);
        let out = apply_inv_sqrt(&a, &[1.0, 1.0, 1.0], &e, &cfg, None).unwrap().value;
        assert!((out[2] - 0.5).abs() < 1e-5);
    }

    proptest! {
        #[test]
        fn shifts_positive_weights_finite(m in 1e-4f64..10.0, ratio in 1.0f64..1e8, np in 1usize..40) {
            let b = SpectralBounds::new(m, m * ratio).unwrap();
            let e = build_pole_expansion(b, np, PowerMode::InvSqrt).unwrap();
            prop_assert_eq!(e.n_poles(), np);
            for (&w, &l) in e.weights().iter().zip(e.shifts()) {
                prop_assert!(l > 0.0 && l.is_finite());
                prop_assert!(w > 0.0 && w.is_finite());
            }
        }

        #[test]
        fn jacobi_identities(u in -20.0f64..20.0, m in 0.0f64..=1.0) {
            let (sn, cn, dn) = jacobi_elliptic(u, m).unwrap();
            prop_assert!((sn * sn + cn * cn - 1.0).abs() < 1e-12);
            prop_assert!((dn * dn + m * sn * sn - 1.0).abs() < 1e-12);
        }
    }
}
