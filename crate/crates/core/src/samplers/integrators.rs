use super::mass::MassMatrix;
use super::target::Potential;
use crate::anderson::{anderson_solve, AndersonConfig};
use crate::error::{Error, Result};
use crate::scalar::{axpy, Real};

/// End point of an integrated trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<T> {
    pub theta: Vec<T>,
    pub pi: Vec<T>,
    pub force_evaluations: usize,
    /// Map evaluations summed over every implicit solve.
    pub solver_iterations: usize,
}

/// `n_int` Störmer–Verlet steps (half drift, kick, half drift), with
/// consecutive half drifts fused: `n_int` force evaluations and
/// `n_int + 1` mass-matrix solves.
pub fn leapfrog_trajectory<T: Real, P: Potential<T> + ?Sized>(
    potential: &mut P,
    theta0: &[T],
    pi0: &[T],
    dt: T,
    n_int: usize,
    mass: &MassMatrix<T>,
) -> Result<Trajectory<T>> {
    check_lengths(potential, theta0, pi0)?;
    let half = T::lit(0.5) * dt;
    let mut theta = theta0.to_vec();
    let mut pi = pi0.to_vec();
    axpy(half, &mass.inverse_apply(&pi), &mut theta);
    for step in 0..n_int {
        let f = potential.force(&theta)?;
        axpy(-dt, &f, &mut pi);
        let v = mass.inverse_apply(&pi);
        let drift = if step + 1 == n_int { half } else { dt };
        axpy(drift, &v, &mut theta);
    }
    Ok(Trajectory { theta, pi, force_evaluations: n_int, solver_iterations: 0 })
}

/// Converged implicit-midpoint step, including the auxiliary unknowns
/// (for pseudofermion targets, the solution of `A(θ_m) x = y`).
#[derive(Debug, Clone, PartialEq)]
pub struct MidpointStep<T> {
    pub theta: Vec<T>,
    pub pi: Vec<T>,
    pub aux: Vec<T>,
    pub iterations: usize,
}

/// One implicit-midpoint step: Anderson acceleration on the fused map
/// `Φ(θ, π, x)`, all unknowns concatenated into one vector.
pub fn implicit_midpoint_step<T: Real, P: Potential<T> + ?Sized>(
    potential: &mut P,
    theta0: &[T],
    pi0: &[T],
    dt: T,
    mass: &MassMatrix<T>,
    anderson: &AndersonConfig<T>,
) -> Result<MidpointStep<T>> {
    check_lengths(potential, theta0, pi0)?;
    let n = theta0.len();
    let aux0 = potential.midpoint_init(theta0)?;
    let na = aux0.len();
    let half = T::lit(0.5);

    let mut z0 = Vec::with_capacity(2 * n + na);
    let mut predictor = theta0.to_vec();
    axpy(dt, &mass.inverse_apply(pi0), &mut predictor);
    z0.extend_from_slice(&predictor);
    z0.extend_from_slice(pi0);
    z0.extend_from_slice(&aux0);

    let map = |z: &[T]| -> Result<Vec<T>> {
        let (theta, rest) = z.split_at(n);
        let (pi, aux) = rest.split_at(n);
        let mid: Vec<T> = theta0.iter().zip(theta).map(|(&a, &b)| half * (a + b)).collect();
        let (f, aux_next) = potential.midpoint_map(&mid, aux)?;
        if aux_next.len() != na {
            return Err(Error::DimensionMismatch { expected: na, got: aux_next.len() });
        }
        let pbar: Vec<T> = pi0.iter().zip(pi).map(|(&a, &b)| half * (a + b)).collect();
        let mut out = theta0.to_vec();
        axpy(dt, &mass.inverse_apply(&pbar), &mut out);
        let mut pnext = pi0.to_vec();
        axpy(-dt, &f, &mut pnext);
        out.extend_from_slice(&pnext);
        out.extend_from_slice(&aux_next);
        Ok(out)
    };
    let outcome = anderson_solve(map, &z0, anderson);
    let outcome = match outcome {
        Ok(o) => o,
        Err(fail) => {
            if let Some(stats) = potential.stats_mut() {
                stats.anderson_iterations += fail.residuals.len();
                stats.failures += 1;
            }
            return Err(fail.error);
        }
    };
    if let Some(stats) = potential.stats_mut() {
        stats.anderson_iterations += outcome.iterations;
    }
    let mut z = outcome.x;
    let aux = z.split_off(2 * n);
    let pi = z.split_off(n);
    Ok(MidpointStep { theta: z, pi, aux, iterations: outcome.iterations })
}

/// `n_int` consecutive implicit-midpoint steps.
pub fn implicit_trajectory<T: Real, P: Potential<T> + ?Sized>(
    potential: &mut P,
    theta0: &[T],
    pi0: &[T],
    dt: T,
    n_int: usize,
    mass: &MassMatrix<T>,
    anderson: &AndersonConfig<T>,
) -> Result<Trajectory<T>> {
    let mut theta = theta0.to_vec();
    let mut pi = pi0.to_vec();
    let mut iterations = 0;
    for _ in 0..n_int {
        let step = implicit_midpoint_step(potential, &theta, &pi, dt, mass, anderson)?;
        theta = step.theta;
        pi = step.pi;
        iterations += step.iterations;
    }
    Ok(Trajectory { theta, pi, force_evaluations: iterations, solver_iterations: iterations })
}

fn check_lengths<T: Real, P: Potential<T> + ?Sized>(potential: &P, theta: &[T], pi: &[T]) -> Result<()> {
    let n = potential.dim();
    if theta.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: theta.len() });
    }
    if pi.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: pi.len() });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::samplers::target::IsotropicGaussian;

    /// `U(θ) = θ⁴/4 + cos θ₀` style anharmonic toy, with a force counter.
    struct Anharmonic {
        forces: usize,
    }

    impl Potential<f64> for Anharmonic {
        fn dim(&self) -> usize {
            1
        }
        fn potential(&mut self, th: &[f64]) -> Result<f64> {
            Ok(0.25 * th[0].powi(4) + th[0].cos())
        }
        fn force(&mut self, th: &[f64]) -> Result<Vec<f64>> {
            self.forces += 1;
            Ok(vec![th[0].powi(3) - th[0].sin()])
        }
    }

    fn tight_anderson() -> AndersonConfig<f64> {
        AndersonConfig { tolerance: 1e-14, max_iterations: 200, ..Default::default() }
    }

    #[test]
    fn free_particle_leapfrog() {
        let mut p = IsotropicGaussian::new(2, f64::INFINITY);
        let t = leapfrog_trajectory(&mut p, &[0.5, -1.0], &[1.0, 2.0], 0.1, 7, &MassMatrix::Identity).unwrap();
        assert!((t.theta[0] - 1.2).abs() < 1e-14);
        assert!((t.theta[1] - 0.4).abs() < 1e-14);
        assert_eq!(t.pi, vec![1.0, 2.0]);
    }

    #[test]
    fn leapfrog_force_count() {
        let mut p = Anharmonic { forces: 0 };
        let t = leapfrog_trajectory(&mut p, &[0.3], &[0.2], 0.05, 9, &MassMatrix::Identity).unwrap();
        assert_eq!(p.forces, 9);
        assert_eq!(t.force_evaluations, 9);
    }

    #[test]
    fn leapfrog_reversible() {
        let mut p = Anharmonic { forces: 0 };
        let m = MassMatrix::diagonal(vec![2.0]).unwrap();
        let a = leapfrog_trajectory(&mut p, &[0.3], &[0.8], 0.1, 20, &m).unwrap();
        let b = leapfrog_trajectory(&mut p, &a.theta, &[-a.pi[0]], 0.1, 20, &m).unwrap();
        assert!((b.theta[0] - 0.3).abs() < 1e-12);
        assert!((b.pi[0] + 0.8).abs() < 1e-12);
    }

    #[test]
    fn free_particle_midpoint() {
        let mut p = IsotropicGaussian::new(2, f64::INFINITY);
        let s = implicit_midpoint_step(&mut p, &[0.5, -1.0], &[1.0, 2.0], 0.1, &MassMatrix::Identity, &tight_anderson())
            .unwrap();
        assert!((s.theta[0] - 0.6).abs() < 1e-13);
        assert!((s.theta[1] + 0.8).abs() < 1e-13);
        assert!((s.pi[0] - 1.0).abs() < 1e-13);
    }

    #[test]
    fn midpoint_solves_its_equations_and_reverses() {
        let mut p = Anharmonic { forces: 0 };
        let (th0, pi0, dt) = (0.7, -0.4, 0.2);
        let s = implicit_midpoint_step(&mut p, &[th0], &[pi0], dt, &MassMatrix::Identity, &tight_anderson()).unwrap();
        let mid = 0.5 * (th0 + s.theta[0]);
        assert!((s.theta[0] - th0 - dt * 0.5 * (pi0 + s.pi[0])).abs() < 1e-12);
        assert!((s.pi[0] - pi0 + dt * (mid.powi(3) - mid.sin())).abs() < 1e-12);
        let back = implicit_midpoint_step(&mut p, &s.theta, &[-s.pi[0]], dt, &MassMatrix::Identity, &tight_anderson())
            .unwrap();
        assert!((back.theta[0] - th0).abs() < 1e-12);
        assert!((back.pi[0] + pi0).abs() < 1e-12);
    }

    fn jacobian_det(map: &mut dyn FnMut(f64, f64) -> (f64, f64), th: f64, pi: f64) -> f64 {
        let h = 1e-6;
        let (a1, b1) = map(th + h, pi);
        let (a2, b2) = map(th - h, pi);
        let (c1, d1) = map(th, pi + h);
        let (c2, d2) = map(th, pi - h);
        let j11 = (a1 - a2) / (2.0 * h);
        let j21 = (b1 - b2) / (2.0 * h);
        let j12 = (c1 - c2) / (2.0 * h);
        let j22 = (d1 - d2) / (2.0 * h);
        j11 * j22 - j12 * j21
    }

    #[test]
    fn maps_preserve_volume() {
        let mut p = Anharmonic { forces: 0 };
        let mut lf = |t: f64, q: f64| {
            let r = leapfrog_trajectory(&mut p, &[t], &[q], 0.15, 5, &MassMatrix::Identity).unwrap();
            (r.theta[0], r.pi[0])
        };
        assert!((jacobian_det(&mut lf, 0.4, 1.1) - 1.0).abs() < 1e-4);
        let mut q = Anharmonic { forces: 0 };
        let mut im = |t: f64, pi: f64| {
            let r = implicit_trajectory(&mut q, &[t], &[pi], 0.15, 3, &MassMatrix::Identity, &tight_anderson()).unwrap();
            (r.theta[0], r.pi[0])
        };
        assert!((jacobian_det(&mut im, -0.6, 0.9) - 1.0).abs() < 1e-4);
    }

    #[test]
    fn dimension_checked() {
        let mut p = IsotropicGaussian::new(2, 1.0);
        assert!(leapfrog_trajectory(&mut p, &[0.0], &[0.0, 0.0], 0.1, 1, &MassMatrix::Identity).is_err());
    }
}
