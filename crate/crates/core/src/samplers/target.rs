use rand::Rng;

use crate::dense::Cholesky;
use crate::error::{Error, Result};
use crate::kernel::{HyperParams, KernelModel, KernelOperator};
use crate::linalg::{cg_solve, nystrom_factorize, power_method, KernelOnly, NystromPreconditioner, Preconditioner, SolveConfig};
use crate::pole::{apply_inv_sqrt, build_pole_expansion, PowerMode, SpectralBounds, DEFAULT_POLES};
use crate::random::standard_normal_vec;
use crate::scalar::{dot, Real};

/// Largest `N` for which the dense determinant target may be built.
pub const DEFAULT_DENSE_LIMIT: usize = 4096;
/// Starting value of every hyperparameter.
pub const DEFAULT_INITIAL_THETA: f64 = 0.01;
/// Power iterations behind the rescaling preconditioner `R = I / c`.
pub const RESCALE_POWER_ITERATIONS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetKind {
    /// Extended density over `(θ, φ)`; needs only solves and matvecs.
    Pseudofermion,
    /// Exact marginal using a dense log-determinant.
    Determinant,
}

/// Prior `p(θ) ∝ exp(-S(θ))`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Prior<T> {
    #[default]
    Flat,
    /// Independent `N(0, scale²)` on every component.
    Gaussian { scale: T },
}

impl<T: Real> Prior<T> {
    /// `S(θ)`
    pub fn value(&self, theta: &[T]) -> T {
        match *self {
            Self::Flat => T::zero(),
            Self::Gaussian { scale } => T::lit(0.5) * dot(theta, theta) / (scale * scale),
        }
    }

    /// `∇S(θ)`
    pub fn gradient(&self, theta: &[T]) -> Vec<T> {
        match *self {
            Self::Flat => vec![T::zero(); theta.len()],
            Self::Gaussian { scale } => theta.iter().map(|&t| t / (scale * scale)).collect(),
        }
    }
}

/// Preconditioning of the linear solves inside a chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PreconditionerPolicy {
    #[default]
    None,
    /// `R = I / c` with `c ≈ ρ(A)`; only changes the fused implicit map.
    Rescale,
    /// Rank-`rank` randomized Nyström factorization of `K(θ)`, rebuilt
    /// every `refresh` Metropolis updates.
    Nystrom { rank: usize, refresh: usize },
}

impl PreconditionerPolicy {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::Nystrom { rank, refresh } if rank == 0 || refresh == 0 => {
                Err(Error::InvalidConfig("Nyström rank and refresh period must be positive".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Posterior over GP hyperparameters for a fixed dataset and kernel family.
#[derive(Debug, Clone)]
pub struct TargetModel<T> {
    kind: TargetKind,
    model: KernelModel<T>,
    template: HyperParams<T>,
    prior: Prior<T>,
    solve: SolveConfig<T>,
    n_poles: usize,
}

impl<T: Real> TargetModel<T> {
    /// `template` fixes the kernel shape and the values of frozen scales;
    /// its Chebyshev coefficients are ignored.
    pub fn new(kind: TargetKind, model: KernelModel<T>, template: HyperParams<T>, prior: Prior<T>) -> Result<Self> {
        Self::with_dense_limit(kind, model, template, prior, DEFAULT_DENSE_LIMIT)
    }

    pub fn with_dense_limit(
        kind: TargetKind,
        model: KernelModel<T>,
        template: HyperParams<T>,
        prior: Prior<T>,
        dense_limit: usize,
    ) -> Result<Self> {
        if kind == TargetKind::Determinant && model.len() > dense_limit {
            return Err(Error::InvalidConfig(format!(
                "determinant target limited to N <= {dense_limit}, got {}",
                model.len()
            )));
        }
        if template.d() != model.data().dim() || template.n_cheb() != model.basis().n_cheb() {
            return Err(Error::InvalidConfig("hyperparameter shape does not match the kernel model".into()));
        }
        if model.is_empty() {
            return Err(Error::InvalidConfig("empty dataset".into()));
        }
        Ok(Self { kind, model, template, prior, solve: SolveConfig::default(), n_poles: DEFAULT_POLES })
    }

    pub fn with_solve_config(mut self, solve: SolveConfig<T>) -> Result<Self> {
        solve.validate()?;
        self.solve = solve;
        Ok(self)
    }

    pub fn with_poles(mut self, n_poles: usize) -> Result<Self> {
        if n_poles == 0 {
            return Err(Error::InvalidConfig("pole count must be positive".into()));
        }
        self.n_poles = n_poles;
        Ok(self)
    }

    #[inline]
    pub fn kind(&self) -> TargetKind {
        self.kind
    }

    #[inline]
    pub fn model(&self) -> &KernelModel<T> {
        &self.model
    }

    #[inline]
    pub fn template(&self) -> &HyperParams<T> {
        &self.template
    }

    #[inline]
    pub fn prior(&self) -> &Prior<T> {
        &self.prior
    }

    #[inline]
    pub fn solve_config(&self) -> &SolveConfig<T> {
        &self.solve
    }

    #[inline]
    pub fn n_poles(&self) -> usize {
        self.n_poles
    }

    /// Number of sampled hyperparameters `n`.
    #[inline]
    pub fn dim(&self) -> usize {
        self.template.dim()
    }

    /// Number of data points `N`.
    #[inline]
    pub fn len(&self) -> usize {
        self.model.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.model.is_empty()
    }

    pub fn initial_theta(&self) -> Vec<T> {
        vec![T::lit(DEFAULT_INITIAL_THETA); self.dim()]
    }

    pub fn hyperparams(&self, theta: &[T]) -> Result<HyperParams<T>> {
        self.template.with_theta(theta)
    }

    pub fn operator(&self, theta: &[T]) -> Result<KernelOperator<'_, T>> {
        if !crate::scalar::all_finite(theta) {
            return Err(Error::Domain("non-finite hyperparameters".into()));
        }
        KernelOperator::new(&self.model, self.hyperparams(theta)?)
    }

    fn observations(&self) -> &[T] {
        self.model.data().observations()
    }
}

/// Work counters accumulated by a potential.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SolverStats {
    pub cg_solves: usize,
    pub cg_iterations: usize,
    pub pole_iterations: usize,
    pub anderson_iterations: usize,
    pub failures: usize,
}

/// Potential energy `U(θ)` driving the θ-moves.
pub trait Potential<T: Real> {
    fn dim(&self) -> usize;

    fn potential(&mut self, theta: &[T]) -> Result<T>;

    /// `∇U(θ)`
    fn force(&mut self, theta: &[T]) -> Result<Vec<T>>;

    /// Prepares the fused implicit-midpoint map at the step start `θ₀`
    /// and returns the initial auxiliary unknowns.
    fn midpoint_init(&mut self, _theta0: &[T]) -> Result<Vec<T>> {
        Ok(Vec::new())
    }

    /// The force and auxiliary update of the fused map at the midpoint
    /// `θ_m`. Exact potentials carry no auxiliary unknowns.
    fn midpoint_map(&mut self, theta_mid: &[T], _aux: &[T]) -> Result<(Vec<T>, Vec<T>)> {
        Ok((self.force(theta_mid)?, Vec::new()))
    }

    fn stats(&self) -> SolverStats {
        SolverStats::default()
    }

    fn stats_mut(&mut self) -> Option<&mut SolverStats> {
        None
    }
}

/// `U(θ) = |θ|² / (2 s²)`, used to exercise integrators and updates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IsotropicGaussian<T> {
    dim: usize,
    scale: T,
}

impl<T: Real> IsotropicGaussian<T> {
    pub fn new(dim: usize, scale: T) -> Self {
        Self { dim, scale }
    }
}

impl<T: Real> Potential<T> for IsotropicGaussian<T> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn potential(&mut self, theta: &[T]) -> Result<T> {
        Ok(T::lit(0.5) * dot(theta, theta) / (self.scale * self.scale))
    }

    fn force(&mut self, theta: &[T]) -> Result<Vec<T>> {
        Ok(theta.iter().map(|&t| t / (self.scale * self.scale)).collect())
    }
}

/// Linear-residual preconditioner `R(θ₀)` of the fused midpoint map.
#[derive(Debug, Clone, Copy)]
enum MidpointScaling<T> {
    Identity,
    Scale(T),
    Woodbury(T),
}

/// Pseudofermion state: the auxiliary field `φ` with caches of
/// `x_θ = A(θ)⁻¹ y` and `U_φ(θ)`, plus the chain's current preconditioner.
#[derive(Debug, Clone)]
pub struct ExtendedState<'t, T> {
    target: &'t TargetModel<T>,
    phi: Vec<T>,
    policy: PreconditionerPolicy,
    nystrom: Option<NystromPreconditioner<T>>,
    x_cache: Option<(Vec<T>, Vec<T>)>,
    u_cache: Option<(Vec<T>, T)>,
    last_x: Option<Vec<T>>,
    scaling: MidpointScaling<T>,
    stats: SolverStats,
}

impl<'t, T: Real> ExtendedState<'t, T> {
    /// State with `φ = 0`.
    pub fn new(target: &'t TargetModel<T>) -> Result<Self> {
        if target.kind() != TargetKind::Pseudofermion {
            return Err(Error::InvalidConfig("extended state needs a pseudofermion target".into()));
        }
        Ok(Self {
            target,
            phi: vec![T::zero(); target.len()],
            policy: PreconditionerPolicy::None,
            nystrom: None,
            x_cache: None,
            u_cache: None,
            last_x: None,
            scaling: MidpointScaling::Identity,
            stats: SolverStats::default(),
        })
    }

    pub fn with_policy(mut self, policy: PreconditionerPolicy) -> Result<Self> {
        policy.validate()?;
        self.policy = policy;
        Ok(self)
    }

    #[inline]
    pub fn target(&self) -> &'t TargetModel<T> {
        self.target
    }

    #[inline]
    pub fn phi(&self) -> &[T] {
        &self.phi
    }

    pub fn set_phi(&mut self, phi: Vec<T>) -> Result<()> {
        if phi.len() != self.target.len() {
            return Err(Error::DimensionMismatch { expected: self.target.len(), got: phi.len() });
        }
        self.phi = phi;
        self.u_cache = None;
        Ok(())
    }

    #[inline]
    pub fn policy(&self) -> PreconditionerPolicy {
        self.policy
    }

    #[inline]
    pub fn nystrom(&self) -> Option<&NystromPreconditioner<T>> {
        self.nystrom.as_ref()
    }

    /// Rebuilds the Nyström factorization of `K(θ)` under the Nyström
    /// policy; a no-op otherwise.
    pub fn refresh_preconditioner<R: Rng + ?Sized>(&mut self, theta: &[T], rng: &mut R) -> Result<()> {
        if let PreconditionerPolicy::Nystrom { rank, .. } = self.policy {
            let op = self.target.operator(theta)?;
            let rank = rank.min(self.target.len());
            self.nystrom = Some(nystrom_factorize(&KernelOnly(&op), rank, rng)?);
        }
        Ok(())
    }

    /// Gibbs update `φ = A(θ)^{-1/2} ξ` with `ξ ~ N(0, I)`, which is an
    /// exact draw from `φ | θ`. On failure `φ` is left unchanged.
    pub fn gibbs_update_phi<R: Rng + ?Sized>(&mut self, theta: &[T], rng: &mut R) -> Result<()> {
        let xi: Vec<T> = standard_normal_vec(rng, self.target.len());
        let op = self.target.operator(theta)?;
        let bounds = SpectralBounds::estimate(&op, op.noise_variance())?;
        let expansion = build_pole_expansion(bounds, self.target.n_poles(), PowerMode::InvSqrt)?;
        let woodbury = self.nystrom.as_ref().map(|p| p.woodbury(op.noise_variance()));
        let precond = woodbury.as_ref().map(|w| w as &dyn crate::linalg::ShiftedPreconditioner<T>);
        match apply_inv_sqrt(&op, &xi, &expansion, self.target.solve_config(), precond) {
            Ok(app) => {
                self.stats.pole_iterations += app.iterations.iter().sum::<usize>();
                self.set_phi(app.value)
            }
            Err(e) => {
                self.stats.failures += 1;
                Err(e)
            }
        }
    }

    fn solve_x(&mut self, op: &KernelOperator<'_, T>, theta: &[T]) -> Result<Vec<T>> {
        if let Some((th, x)) = &self.x_cache {
            if th.as_slice() == theta {
                return Ok(x.clone());
            }
        }
        let woodbury = self.nystrom.as_ref().map(|p| p.woodbury(op.noise_variance()));
        let precond = woodbury.as_ref().map(|w| w as &dyn Preconditioner<T>);
        let sol = cg_solve(op, self.target.observations(), self.target.solve_config(), precond, None);
        let sol = match sol {
            Ok(s) => s,
            Err(e) => {
                self.stats.failures += 1;
                return Err(e);
            }
        };
        self.stats.cg_solves += 1;
        self.stats.cg_iterations += sol.iterations;
        self.x_cache = Some((theta.to_vec(), sol.x.clone()));
        self.last_x = Some(sol.x.clone());
        Ok(sol.x)
    }

    /// `x_θ = A(θ)⁻¹ y`, solved at most once per `θ`.
    pub fn solution(&mut self, theta: &[T]) -> Result<Vec<T>> {
        let op = self.target.operator(theta)?;
        self.solve_x(&op, theta)
    }

    /// `f_φ(θ, x) = ∇S − ½ ∇[xᵀ A x] + ½ ∇[φᵀ A φ]` with `x` frozen,
    /// together with `A(θ) x`.
    fn frozen_force(&self, op: &KernelOperator<'_, T>, theta: &[T], x: &[T]) -> Result<(Vec<T>, Vec<T>)> {
        let (mut applied, grads) = op.apply_with_quad_form_grads(&[x, &self.phi])?;
        let half = T::lit(0.5);
        let mut f = self.target.prior().gradient(theta);
        for ((fi, &gx), &gp) in f.iter_mut().zip(&grads[0]).zip(&grads[1]) {
            *fi += half * (gp - gx);
        }
        let ax = applied.swap_remove(0);
        Ok((f, ax))
    }
}

impl<T: Real> Potential<T> for ExtendedState<'_, T> {
    fn dim(&self) -> usize {
        self.target.dim()
    }

    /// `U_φ(θ) = S(θ) + ½ yᵀ x_θ + ½ φᵀ A(θ) φ`
    fn potential(&mut self, theta: &[T]) -> Result<T> {
        if let Some((th, u)) = &self.u_cache {
            if th.as_slice() == theta {
                return Ok(*u);
            }
        }
        let op = self.target.operator(theta)?;
        let x = self.solve_x(&op, theta)?;
        let aphi = op.apply(&self.phi)?;
        let half = T::lit(0.5);
        let u = self.target.prior().value(theta)
            + half * dot(self.target.observations(), &x)
            + half * dot(&self.phi, &aphi);
        if !u.is_finite() {
            return Err(Error::NumericalOverflow(format!("potential is not finite at θ = {theta:?}")));
        }
        self.u_cache = Some((theta.to_vec(), u));
        Ok(u)
    }

    fn force(&mut self, theta: &[T]) -> Result<Vec<T>> {
        let op = self.target.operator(theta)?;
        let x = self.solve_x(&op, theta)?;
        Ok(self.frozen_force(&op, theta, &x)?.0)
    }

    fn midpoint_init(&mut self, theta0: &[T]) -> Result<Vec<T>> {
        let op = self.target.operator(theta0)?;
        self.scaling = match self.policy {
            PreconditionerPolicy::None => MidpointScaling::Identity,
            PreconditionerPolicy::Rescale => {
                let c = power_method(&op, RESCALE_POWER_ITERATIONS)?;
                MidpointScaling::Scale(T::one() / c)
            }
            PreconditionerPolicy::Nystrom { .. } if self.nystrom.is_some() => MidpointScaling::Woodbury(op.noise_variance()),
            PreconditionerPolicy::Nystrom { .. } => {
                return Err(Error::InvalidConfig("Nyström preconditioner has not been built".into()))
            }
        };
        Ok(match &self.last_x {
            Some(x) => x.clone(),
            None => vec![T::zero(); self.target.len()],
        })
    }

    /// `(f_φ(θ_m, x), x + R(θ₀)[y − A(θ_m) x])`
    fn midpoint_map(&mut self, theta_mid: &[T], aux: &[T]) -> Result<(Vec<T>, Vec<T>)> {
        let op = self.target.operator(theta_mid)?;
        let (f, ax) = self.frozen_force(&op, theta_mid, aux)?;
        let residual: Vec<T> = self.target.observations().iter().zip(&ax).map(|(&y, &a)| y - a).collect();
        let corr = match self.scaling {
            MidpointScaling::Identity => residual,
            MidpointScaling::Scale(s) => residual.into_iter().map(|r| r * s).collect(),
            MidpointScaling::Woodbury(noise) => {
                self.nystrom.as_ref().expect("Nyström factor").woodbury_apply(noise, &residual)
            }
        };
        let next: Vec<T> = aux.iter().zip(&corr).map(|(&x, &c)| x + c).collect();
        self.last_x = Some(next.clone());
        Ok((f, next))
    }

    fn stats(&self) -> SolverStats {
        self.stats
    }

    fn stats_mut(&mut self) -> Option<&mut SolverStats> {
        Some(&mut self.stats)
    }
}

/// Exact marginal potential `U(θ) = S(θ) + ½ log|A(θ)| + ½ yᵀ A(θ)⁻¹ y`
/// from a dense Cholesky factorization.
#[derive(Debug, Clone)]
pub struct DeterminantPotential<'t, T> {
    target: &'t TargetModel<T>,
    stats: SolverStats,
}

impl<'t, T: Real> DeterminantPotential<'t, T> {
    pub fn new(target: &'t TargetModel<T>) -> Self {
        Self { target, stats: SolverStats::default() }
    }

    fn factor(&mut self, op: &KernelOperator<'_, T>, theta: &[T]) -> Result<Cholesky<T>> {
        Cholesky::new(&op.dense_matrix()).map_err(|e| {
            self.stats.failures += 1;
            Error::NotPositiveDefinite(format!("A(θ) at θ = {theta:?}: {e}"))
        })
    }
}

impl<T: Real> Potential<T> for DeterminantPotential<'_, T> {
    fn dim(&self) -> usize {
        self.target.dim()
    }

    fn potential(&mut self, theta: &[T]) -> Result<T> {
        let op = self.target.operator(theta)?;
        let chol = self.factor(&op, theta)?;
        let y = self.target.observations();
        let x = chol.solve(y);
        let half = T::lit(0.5);
        Ok(self.target.prior().value(theta) + half * chol.log_det() + half * dot(y, &x))
    }

    /// `∇S + ½ tr(A⁻¹ ∂A) − ½ xᵀ ∂A x`
    fn force(&mut self, theta: &[T]) -> Result<Vec<T>> {
        let op = self.target.operator(theta)?;
        let k = op.dense_kernel();
        let mut a = k.clone();
        let n = op.dim();
        for i in 0..n {
            a[(i, i)] += op.noise_variance();
        }
        let chol = Cholesky::new(&a).map_err(|e| {
            self.stats.failures += 1;
            Error::NotPositiveDefinite(format!("A(θ) at θ = {theta:?}: {e}"))
        })?;
        let inv = chol.inverse();
        let x = chol.solve(self.target.observations());
        let hp = op.hyperparams();
        let basis = self.target.model().basis();
        let data = self.target.model().data();
        let nt = basis.n_terms();
        let two = T::lit(2.0);
        let mut trace = vec![T::zero(); hp.dim()];
        let mut h_r2 = T::zero();
        for i in 0..n {
            let inv_row = inv.row(i);
            let k_row = k.row(i);
            let h: T = inv_row.iter().zip(k_row).map(|(&p, &q)| p * q).sum();
            let c = two * h;
            for (t, &b) in trace[..nt].iter_mut().zip(basis.row(i)) {
                *t += c * b;
            }
            if hp.infers_ell() {
                let xi = data.point(i);
                for j in 0..n {
                    let r2: T = xi.iter().zip(data.point(j)).map(|(&p, &q)| (p - q) * (p - q)).sum();
                    h_r2 += inv_row[j] * k_row[j] * r2;
                }
            }
        }
        if let Some(s) = hp.sigma_index() {
            trace[s] = two * hp.sigma() * hp.log_sigma().exp() * inv.trace();
        }
        if let Some(l) = hp.ell_index() {
            let s = hp.two_ell_sq();
            trace[l] = h_r2 * hp.log_ell().exp() / (s * s);
        }
        let quad = op.quad_form_grad(&x)?;
        let half = T::lit(0.5);
        let mut f = self.target.prior().gradient(theta);
        for ((fi, &t), &q) in f.iter_mut().zip(&trace).zip(&quad) {
            *fi += half * (t - q);
        }
        Ok(f)
    }

    fn stats(&self) -> SolverStats {
        self.stats
    }

    fn stats_mut(&mut self) -> Option<&mut SolverStats> {
        Some(&mut self.stats)
    }
}
