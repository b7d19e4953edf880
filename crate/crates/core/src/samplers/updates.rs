use rand::Rng;

use super::integrators::{implicit_trajectory, leapfrog_trajectory, Trajectory};
use super::mass::MassMatrix;
use super::target::Potential;
use crate::anderson::AndersonConfig;
use crate::error::{Error, Result};
use crate::random::{standard_normal, uniform};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Integrator {
    #[default]
    Leapfrog,
    ImplicitMidpoint,
}

#[derive(Debug, Clone)]
pub struct HmcConfig<T> {
    pub dt: T,
    pub n_int: usize,
    pub mass: MassMatrix<T>,
    pub integrator: Integrator,
    /// Nonlinear solver of the implicit integrator.
    pub anderson: AndersonConfig<T>,
}

impl<T: Real> HmcConfig<T> {
    pub fn leapfrog(dt: T, n_int: usize) -> Self {
        Self { dt, n_int, mass: MassMatrix::Identity, integrator: Integrator::Leapfrog, anderson: AndersonConfig::default() }
    }

    pub fn implicit(dt: T, n_int: usize) -> Self {
        Self { integrator: Integrator::ImplicitMidpoint, ..Self::leapfrog(dt, n_int) }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt >= T::zero() && self.dt.is_finite()) {
            return Err(Error::InvalidConfig("step size must be finite and nonnegative".into()));
        }
        if self.n_int == 0 {
            return Err(Error::InvalidConfig("integration count must be at least 1".into()));
        }
        self.anderson.validate()
    }

    pub fn trajectory<P: Potential<T> + ?Sized>(&self, potential: &mut P, theta: &[T], pi: &[T]) -> Result<Trajectory<T>> {
        match self.integrator {
            Integrator::Leapfrog => leapfrog_trajectory(potential, theta, pi, self.dt, self.n_int, &self.mass),
            Integrator::ImplicitMidpoint => {
                implicit_trajectory(potential, theta, pi, self.dt, self.n_int, &self.mass, &self.anderson)
            }
        }
    }
}

/// Result of one Metropolis–Hastings θ-update.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateOutcome<T> {
    pub accepted: bool,
    /// `H(end) - H(start)`; `+∞` when the proposal could not be computed.
    pub delta_h: T,
    /// `min(1, exp(-ΔH))`
    pub accept_prob: T,
    pub force_evaluations: usize,
    /// Why the proposal was rejected without evaluation, if it was.
    pub failure: Option<Error>,
}

impl<T: Real> UpdateOutcome<T> {
    fn failed(error: Error, force_evaluations: usize) -> Self {
        log::warn!("proposal rejected after solver failure: {error}");
        Self {
            accepted: false,
            delta_h: T::infinity(),
            accept_prob: T::zero(),
            force_evaluations,
            failure: Some(error),
        }
    }
}

fn metropolis<T: Real, R: Rng + ?Sized>(delta_h: T, rng: &mut R) -> (bool, T) {
    let prob = if delta_h <= T::zero() { T::one() } else { (-delta_h).exp() };
    // one uniform per test keeps the random stream aligned across outcomes
    let u: T = uniform(rng);
    (u < prob, prob)
}

/// HMC update: fresh momentum `π ~ N(0, M)`, a trajectory, and a
/// Metropolis test on the total energy. `theta` is only written on
/// acceptance. Errors from the current point's energy are returned;
/// failures along the trajectory reject the proposal.
pub fn hmc_update<T, P, R>(
    potential: &mut P,
    theta: &mut Vec<T>,
    config: &HmcConfig<T>,
    rng: &mut R,
) -> Result<UpdateOutcome<T>>
where
    T: Real,
    P: Potential<T> + ?Sized,
    R: Rng + ?Sized,
{
    let pi0 = config.mass.sample_momentum(rng, theta.len());
    let h0 = potential.potential(theta)? + config.mass.kinetic_energy(&pi0);
    let traj = match config.trajectory(potential, theta, &pi0) {
        Ok(t) => t,
        Err(e) => return Ok(UpdateOutcome::failed(e, 0)),
    };
    let u1 = match potential.potential(&traj.theta) {
        Ok(u) => u,
        Err(e) => return Ok(UpdateOutcome::failed(e, traj.force_evaluations)),
    };
    let h1 = u1 + config.mass.kinetic_energy(&traj.pi);
    let delta_h = if h1.is_finite() { h1 - h0 } else { T::infinity() };
    let (accepted, accept_prob) = metropolis(delta_h, rng);
    if accepted {
        *theta = traj.theta;
    }
    Ok(UpdateOutcome { accepted, delta_h, accept_prob, force_evaluations: traj.force_evaluations, failure: None })
}

/// Random-walk Metropolis with proposal `θ' ~ N(θ, Δt² I)`.
pub fn rwm_update<T, P, R>(potential: &mut P, theta: &mut Vec<T>, dt: T, rng: &mut R) -> Result<UpdateOutcome<T>>
where
    T: Real,
    P: Potential<T> + ?Sized,
    R: Rng + ?Sized,
{
    let proposal: Vec<T> = theta.iter().map(|&t| t + dt * standard_normal::<T, R>(rng)).collect();
    let u0 = potential.potential(theta)?;
    let u1 = match potential.potential(&proposal) {
        Ok(u) => u,
        Err(e) => return Ok(UpdateOutcome::failed(e, 0)),
    };
    let delta_h = if u1.is_finite() { u1 - u0 } else { T::infinity() };
    let (accepted, accept_prob) = metropolis(delta_h, rng);
    if accepted {
        *theta = proposal;
    }
    Ok(UpdateOutcome { accepted, delta_h, accept_prob, force_evaluations: 0, failure: None })
}
