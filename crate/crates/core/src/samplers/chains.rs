use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::target::{DeterminantPotential, ExtendedState, Potential, PreconditionerPolicy, SolverStats, TargetKind, TargetModel};
use super::updates::{hmc_update, rwm_update, HmcConfig, UpdateOutcome};
use crate::diagnostics::ChainTrace;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// θ-proposal mechanism.
#[derive(Debug, Clone)]
pub enum Proposal<T> {
    RandomWalk { dt: T },
    Hmc(HmcConfig<T>),
}

impl<T: Real> Proposal<T> {
    pub fn dt(&self) -> T {
        match self {
            Self::RandomWalk { dt } => *dt,
            Self::Hmc(c) => c.dt,
        }
    }

    fn with_dt(&self, dt: T) -> Self {
        match self {
            Self::RandomWalk { .. } => Self::RandomWalk { dt },
            Self::Hmc(c) => Self::Hmc(HmcConfig { dt, ..c.clone() }),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::RandomWalk { dt } if !(*dt >= T::zero() && dt.is_finite()) => {
                Err(Error::InvalidConfig("step size must be finite and nonnegative".into()))
            }
            Self::RandomWalk { .. } => Ok(()),
            Self::Hmc(c) => c.validate(),
        }
    }
}

/// Warm-up before recording: `steps` outer steps, optionally with their
/// own step size. Warm-up states are kept separately in the trace.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BurnIn<T> {
    pub steps: usize,
    pub dt: Option<T>,
}

#[derive(Debug, Clone)]
pub struct SamplerSpec<T> {
    pub proposal: Proposal<T>,
    pub precond: PreconditionerPolicy,
    pub burn_in: BurnIn<T>,
    /// Defaults to every component equal to `0.01`.
    pub initial_theta: Option<Vec<T>>,
}

impl<T: Real> SamplerSpec<T> {
    pub fn new(proposal: Proposal<T>) -> Self {
        Self { proposal, precond: PreconditionerPolicy::None, burn_in: BurnIn { steps: 0, dt: None }, initial_theta: None }
    }

    pub fn validate(&self, target: &TargetModel<T>) -> Result<()> {
        self.proposal.validate()?;
        self.precond.validate()?;
        if let Proposal::Hmc(c) = &self.proposal {
            c.mass.check_dim(target.dim())?;
        }
        if let Some(dt) = self.burn_in.dt {
            self.proposal.with_dt(dt).validate()?;
        }
        if let Some(th) = &self.initial_theta {
            if th.len() != target.dim() {
                return Err(Error::DimensionMismatch { expected: target.dim(), got: th.len() });
            }
        }
        Ok(())
    }
}

enum ChainPotential<'t, T> {
    Extended(ExtendedState<'t, T>),
    Determinant(DeterminantPotential<'t, T>),
}

impl<T: Real> ChainPotential<'_, T> {
    fn inner(&mut self) -> &mut dyn Potential<T> {
        match self {
            Self::Extended(s) => s,
            Self::Determinant(d) => d,
        }
    }
}

/// One θ-update with the configured proposal.
fn theta_update<T: Real>(
    potential: &mut dyn Potential<T>,
    theta: &mut Vec<T>,
    proposal: &Proposal<T>,
    rng: &mut ChaCha8Rng,
) -> Result<UpdateOutcome<T>> {
    match proposal {
        Proposal::RandomWalk { dt } => rwm_update(potential, theta, *dt, rng),
        Proposal::Hmc(c) => hmc_update(potential, theta, c, rng),
    }
}

fn chain_work(s: &SolverStats) -> usize {
    s.cg_iterations + s.pole_iterations + s.anderson_iterations
}

fn run_chain<T: Real>(target: &TargetModel<T>, spec: &SamplerSpec<T>, steps: usize, chain: usize, seed: u64) -> ChainTrace<T> {
    let mut trace = ChainTrace::new(chain, seed);
    if let Err(e) = chain_body(target, spec, steps, &mut trace) {
        log::error!("chain {chain} failed: {e}");
        trace.failure = Some(e.to_string());
    }
    trace
}

fn chain_body<T: Real>(target: &TargetModel<T>, spec: &SamplerSpec<T>, steps: usize, trace: &mut ChainTrace<T>) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(trace.seed);
    let mut theta = spec.initial_theta.clone().unwrap_or_else(|| target.initial_theta());
    let mut potential = match target.kind() {
        TargetKind::Pseudofermion => ChainPotential::Extended(ExtendedState::new(target)?.with_policy(spec.precond)?),
        TargetKind::Determinant => ChainPotential::Determinant(DeterminantPotential::new(target)),
    };
    let refresh = match spec.precond {
        PreconditionerPolicy::Nystrom { refresh, .. } => Some(refresh),
        _ => None,
    };
    if let ChainPotential::Extended(state) = &mut potential {
        state.refresh_preconditioner(&theta, &mut rng)?;
    }
    let warm = spec.burn_in.dt.map(|dt| spec.proposal.with_dt(dt));
    let total = spec.burn_in.steps + steps;
    let mut updates = 0usize;
    if spec.burn_in.steps == 0 {
        trace.theta.push(theta.clone());
    } else {
        trace.burn_in.push(theta.clone());
    }
    for step in 0..total {
        let recording = step >= spec.burn_in.steps;
        let proposal = match (&warm, recording) {
            (Some(w), false) => w,
            _ => &spec.proposal,
        };
        let start = Instant::now();
        let before = chain_work(&potential.inner().stats());
        let gibbs = match &mut potential {
            ChainPotential::Extended(state) => state.gibbs_update_phi(&theta, &mut rng),
            ChainPotential::Determinant(_) => Ok(()),
        };
        let outcome = match gibbs {
            Ok(()) => theta_update(potential.inner(), &mut theta, proposal, &mut rng)?,
            Err(e) => {
                log::warn!("chain {}: φ update failed at step {step}: {e}", trace.chain_id);
                UpdateOutcome { accepted: false, delta_h: T::infinity(), accept_prob: T::zero(), force_evaluations: 0, failure: Some(e) }
            }
        };
        updates += 1;
        if let (Some(r), ChainPotential::Extended(state)) = (refresh, &mut potential) {
            if updates % r == 0 {
                state.refresh_preconditioner(&theta, &mut rng)?;
            }
        }
        let work = chain_work(&potential.inner().stats()) - before;
        let elapsed = start.elapsed().as_secs_f64();
        if recording {
            trace.record(theta.clone(), &outcome, elapsed, work);
        } else {
            trace.burn_in.push(theta.clone());
            if step + 1 == spec.burn_in.steps {
                trace.theta.push(theta.clone());
            }
        }
    }
    Ok(())
}

/// Runs `n_chains` independent chains of `steps` recorded outer steps
/// each (after the burn-in), in parallel. Chain `c` draws from its own
/// stream seeded with `seed + c`; a chain that fails is returned with
/// its partial trace and the error message set.
pub fn run_chains<T: Real>(
    target: &TargetModel<T>,
    spec: &SamplerSpec<T>,
    n_chains: usize,
    steps: usize,
    seed: u64,
) -> Result<Vec<ChainTrace<T>>> {
    spec.validate(target)?;
    if n_chains == 0 {
        return Err(Error::InvalidConfig("at least one chain is required".into()));
    }
    Ok((0..n_chains)
        .into_par_iter()
        .map(|c| {
            let chain_seed = seed.wrapping_add(c as u64);
            catch_unwind(AssertUnwindSafe(|| run_chain(target, spec, steps, c, chain_seed))).unwrap_or_else(|_| {
                let mut t = ChainTrace::new(c, chain_seed);
                t.failure = Some("chain panicked".into());
                t
            })
        })
        .collect())
}
