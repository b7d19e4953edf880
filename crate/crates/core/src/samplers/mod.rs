//! Samplers for GP hyperparameters: the pseudofermion extended target and
//! the dense determinant reference, random-walk Metropolis, leapfrog and
//! implicit-midpoint HMC, and the batched chain driver.

mod chains;
mod integrators;
mod mass;
mod target;
mod updates;

pub use chains::{run_chains, BurnIn, Proposal, SamplerSpec};
pub use integrators::{implicit_midpoint_step, implicit_trajectory, leapfrog_trajectory, MidpointStep, Trajectory};
pub use mass::MassMatrix;
pub use target::{
    DeterminantPotential, ExtendedState, IsotropicGaussian, Potential, PreconditionerPolicy, Prior, SolverStats,
    TargetKind, TargetModel, DEFAULT_DENSE_LIMIT, DEFAULT_INITIAL_THETA, RESCALE_POWER_ITERATIONS,
};
pub use updates::{hmc_update, rwm_update, HmcConfig, Integrator, UpdateOutcome};
