//! Experiment configuration: a sectioned TOML file whose every key has a
//! default, plus dotted `section.key=value` overrides from the command line.

use std::path::{Path, PathBuf};

use detfree_gp::anderson::AndersonConfig;
use detfree_gp::kernel::{HyperParams, KernelModel};
use detfree_gp::linalg::{ShiftStrategy, SolveConfig};
use detfree_gp::pole::DEFAULT_POLES;
use detfree_gp::samplers::{
    BurnIn, HmcConfig, PreconditionerPolicy, Prior, Proposal, SamplerSpec, TargetKind, TargetModel,
};
use detfree_gp::Dataset64;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Verify,
    Scale,
    Sample,
    Predict,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetName {
    Pseudofermion,
    Determinant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplerName {
    Rwm,
    HmcLeapfrog,
    HmcImplicit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PrecondName {
    None,
    Rescale,
    Nystrom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataSource {
    /// `n` equispaced points on `[-1, 1)` with every observation `y_value`.
    Equispaced,
    /// Uniform points with `y = Π cos(x^j) + η ε`.
    Synthetic,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub kind: ExperimentKind,
    pub output: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TargetSection {
    pub kind: TargetName,
    /// Standard deviation of an isotropic Gaussian prior; absent means flat.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prior_scale: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerSection {
    pub kind: SamplerName,
    pub dt: f64,
    pub n_int: usize,
    pub burn_in: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub burn_in_dt: Option<f64>,
    pub initial_theta: f64,
    pub anderson_depth: usize,
    pub anderson_tol: f64,
    pub anderson_max_iter: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChainsSection {
    pub batch: usize,
    pub steps: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelSection {
    pub d: usize,
    pub n_cheb: usize,
    pub freeze_sigma: bool,
    pub freeze_ell: bool,
    /// `σ²` when frozen, and the starting value otherwise.
    pub noise_variance: f64,
    /// `2ℓ²` when frozen, and the starting value otherwise.
    pub two_ell_sq: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrecondSection {
    pub kind: PrecondName,
    pub rank: usize,
    pub refresh: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoleSection {
    pub n_p: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    pub tol: f64,
    pub max_iter: usize,
    pub shifts: ShiftName,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShiftName {
    #[default]
    Independent,
    SharedKrylov,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub source: DataSource,
    pub n: usize,
    pub y_value: f64,
    pub eta: f64,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    pub strict: bool,
    /// Random training subset size for CSV data.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub subsample: Option<usize>,
    pub subsample_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifySection {
    pub grid_lo: f64,
    pub grid_hi: f64,
    pub grid_n: usize,
    /// Outer steps between recorded error checkpoints.
    pub every: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScaleSection {
    pub sizes: Vec<usize>,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictSection {
    pub grid_per_axis: usize,
    pub stride: usize,
    /// Existing trace file to predict from; sampled afresh when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub traces: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticsSection {
    pub window_constant: f64,
    pub min_length_multiple: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub target: TargetSection,
    pub sampler: SamplerSection,
    pub chains: ChainsSection,
    pub kernel: KernelSection,
    pub precond: PrecondSection,
    pub pole: PoleSection,
    pub solver: SolverSection,
    pub data: DataSection,
    pub verify: VerifySection,
    pub scale: ScaleSection,
    pub predict: PredictSection,
    pub diagnostics: DiagnosticsSection,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self { kind: ExperimentKind::Sample, output: PathBuf::from("out") }
    }
}

impl Default for TargetSection {
    fn default() -> Self {
        Self { kind: TargetName::Pseudofermion, prior_scale: None }
    }
}

impl Default for SamplerSection {
    fn default() -> Self {
        Self {
            kind: SamplerName::HmcLeapfrog,
            dt: 0.4,
            n_int: 3,
            burn_in: 0,
            burn_in_dt: None,
            initial_theta: 0.01,
            anderson_depth: 10,
            anderson_tol: 1e-10,
            anderson_max_iter: 500,
        }
    }
}

impl Default for ChainsSection {
    fn default() -> Self {
        Self { batch: 100, steps: 2000, seed: 0 }
    }
}

impl Default for KernelSection {
    fn default() -> Self {
        Self { d: 1, n_cheb: 2, freeze_sigma: true, freeze_ell: true, noise_variance: 0.1, two_ell_sq: 1.0 }
    }
}

impl Default for PrecondSection {
    fn default() -> Self {
        Self { kind: PrecondName::None, rank: 5, refresh: 2 }
    }
}

impl Default for PoleSection {
    fn default() -> Self {
        Self { n_p: DEFAULT_POLES }
    }
}

impl Default for SolverSection {
    fn default() -> Self {
        Self { tol: 1e-6, max_iter: 10_000, shifts: ShiftName::Independent }
    }
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            source: DataSource::Equispaced,
            n: 10,
            y_value: 1.0,
            eta: 0.1,
            seed: 0,
            path: None,
            strict: true,
            subsample: None,
            subsample_seed: 0,
        }
    }
}

impl Default for VerifySection {
    fn default() -> Self {
        Self { grid_lo: -3.0, grid_hi: 3.0, grid_n: 100, every: 50 }
    }
}

impl Default for ScaleSection {
    fn default() -> Self {
        Self { sizes: vec![500, 1000, 2000, 4000], steps: 5 }
    }
}

impl Default for PredictSection {
    fn default() -> Self {
        Self { grid_per_axis: 50, stride: 10, traces: None }
    }
}

impl Default for DiagnosticsSection {
    fn default() -> Self {
        Self { window_constant: 5.0, min_length_multiple: 50.0 }
    }
}

fn config_err(msg: impl Into<String>) -> HarnessError {
    HarnessError::Config(msg.into())
}

/// Parses an override value as a TOML literal, falling back to a bare string.
fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.into()),
    }
}

/// Sets `section.key` (any depth) in a TOML table.
fn set_dotted(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(config_err(format!("malformed key `{key}`")));
    }
    let (last, path) = parts.split_last().expect("nonempty split");
    let mut cur = table;
    for p in path {
        let entry = cur.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| config_err(format!("`{p}` in `{key}` is not a section")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Self::with_overrides(text, &[])
    }

    /// Parses `text`, applies `key=value` overrides in order, then validates.
    pub fn with_overrides(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e| config_err(format!("{e}")))?;
        for ov in overrides {
            let (k, v) = ov.split_once('=').ok_or_else(|| config_err(format!("override `{ov}` is not key=value")))?;
            set_dotted(&mut table, k.trim(), parse_value(v.trim()))?;
        }
        let cfg: Self = table.try_into().map_err(|e: toml::de::Error| config_err(format!("{e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::with_overrides(&text, overrides)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64, name: &str| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(config_err(format!("{name} must be positive and finite, got {v}")))
            }
        };
        let at_least = |v: usize, lo: usize, name: &str| {
            if v >= lo {
                Ok(())
            } else {
                Err(config_err(format!("{name} must be at least {lo}, got {v}")))
            }
        };
        if !(self.sampler.dt >= 0.0 && self.sampler.dt.is_finite()) {
            return Err(config_err(format!("sampler.dt must be nonnegative, got {}", self.sampler.dt)));
        }
        if let Some(dt) = self.sampler.burn_in_dt {
            if !(dt >= 0.0 && dt.is_finite()) {
                return Err(config_err(format!("sampler.burn_in_dt must be nonnegative, got {dt}")));
            }
        }
        at_least(self.sampler.n_int, 1, "sampler.n_int")?;
        at_least(self.sampler.anderson_depth, 1, "sampler.anderson_depth")?;
        at_least(self.sampler.anderson_max_iter, 1, "sampler.anderson_max_iter")?;
        pos(self.sampler.anderson_tol, "sampler.anderson_tol")?;
        if !self.sampler.initial_theta.is_finite() {
            return Err(config_err("sampler.initial_theta must be finite"));
        }
        at_least(self.chains.batch, 1, "chains.batch")?;
        at_least(self.chains.steps, 1, "chains.steps")?;
        at_least(self.kernel.d, 1, "kernel.d")?;
        at_least(self.kernel.n_cheb, 1, "kernel.n_cheb")?;
        if self.kernel.n_cheb.checked_pow(self.kernel.d as u32).is_none_or(|t| t > 1 << 20) {
            return Err(config_err("kernel.n_cheb^d is too large"));
        }
        pos(self.kernel.noise_variance, "kernel.noise_variance")?;
        pos(self.kernel.two_ell_sq, "kernel.two_ell_sq")?;
        if let Some(s) = self.target.prior_scale {
            pos(s, "target.prior_scale")?;
        }
        if self.precond.kind == PrecondName::Nystrom {
            at_least(self.precond.rank, 1, "precond.rank")?;
            at_least(self.precond.refresh, 1, "precond.refresh")?;
        }
        at_least(self.pole.n_p, 1, "pole.n_p")?;
        pos(self.solver.tol, "solver.tol")?;
        at_least(self.solver.max_iter, 1, "solver.max_iter")?;
        at_least(self.data.n, 1, "data.n")?;
        if !(self.data.eta >= 0.0 && self.data.eta.is_finite()) {
            return Err(config_err("data.eta must be nonnegative"));
        }
        if self.data.source == DataSource::Csv && self.data.path.is_none() {
            return Err(config_err("data.path is required for CSV data"));
        }
        if self.data.source == DataSource::Equispaced && self.kernel.d != 1 {
            return Err(config_err("equispaced data is one-dimensional; set kernel.d = 1"));
        }
        if let Some(s) = self.data.subsample {
            at_least(s, 1, "data.subsample")?;
        }
        if !(self.verify.grid_lo < self.verify.grid_hi) {
            return Err(config_err("verify.grid_lo must be below verify.grid_hi"));
        }
        at_least(self.verify.grid_n, 2, "verify.grid_n")?;
        at_least(self.verify.every, 1, "verify.every")?;
        if self.scale.sizes.is_empty() || self.scale.sizes.contains(&0) {
            return Err(config_err("scale.sizes must be a nonempty list of positive sizes"));
        }
        at_least(self.scale.steps, 1, "scale.steps")?;
        at_least(self.predict.grid_per_axis, 2, "predict.grid_per_axis")?;
        at_least(self.predict.stride, 1, "predict.stride")?;
        pos(self.diagnostics.window_constant, "diagnostics.window_constant")?;
        pos(self.diagnostics.min_length_multiple, "diagnostics.min_length_multiple")?;
        Ok(())
    }

    pub fn iat_config(&self) -> detfree_gp::diagnostics::IatConfig {
        detfree_gp::diagnostics::IatConfig {
            window_constant: self.diagnostics.window_constant,
            min_length_multiple: self.diagnostics.min_length_multiple,
        }
    }

    pub fn solve_config(&self) -> SolveConfig<f64> {
        let shifts = match self.solver.shifts {
            ShiftName::Independent => ShiftStrategy::Independent,
            ShiftName::SharedKrylov => ShiftStrategy::SharedKrylov,
        };
        SolveConfig { tolerance: self.solver.tol, max_iterations: self.solver.max_iter, shifts }
    }

    pub fn hyperparams(&self) -> Result<HyperParams<f64>> {
        let k = &self.kernel;
        Ok(HyperParams::new(k.d, k.n_cheb, k.noise_variance, k.two_ell_sq)?
            .inferring_sigma(!k.freeze_sigma)
            .inferring_ell(!k.freeze_ell))
    }

    pub fn target_model(&self, data: Dataset64) -> Result<TargetModel<f64>> {
        if data.dim() != self.kernel.d {
            return Err(config_err(format!("data has dimension {}, kernel.d is {}", data.dim(), self.kernel.d)));
        }
        let kind = match self.target.kind {
            TargetName::Pseudofermion => TargetKind::Pseudofermion,
            TargetName::Determinant => TargetKind::Determinant,
        };
        let prior = match self.target.prior_scale {
            None => Prior::Flat,
            Some(scale) => Prior::Gaussian { scale },
        };
        let model = KernelModel::new(data, self.kernel.n_cheb);
        Ok(TargetModel::new(kind, model, self.hyperparams()?, prior)?
            .with_solve_config(self.solve_config())?
            .with_poles(self.pole.n_p)?)
    }

    pub fn anderson_config(&self) -> AndersonConfig<f64> {
        AndersonConfig {
            depth: self.sampler.anderson_depth,
            max_iterations: self.sampler.anderson_max_iter,
            tolerance: self.sampler.anderson_tol,
            regularization: 0.0,
        }
    }

    pub fn proposal(&self) -> Proposal<f64> {
        let s = &self.sampler;
        match s.kind {
            SamplerName::Rwm => Proposal::RandomWalk { dt: s.dt },
            SamplerName::HmcLeapfrog => Proposal::Hmc(HmcConfig::leapfrog(s.dt, s.n_int)),
            SamplerName::HmcImplicit => {
                Proposal::Hmc(HmcConfig { anderson: self.anderson_config(), ..HmcConfig::implicit(s.dt, s.n_int) })
            }
        }
    }

    pub fn precond_policy(&self) -> PreconditionerPolicy {
        match self.precond.kind {
            PrecondName::None => PreconditionerPolicy::None,
            PrecondName::Rescale => PreconditionerPolicy::Rescale,
            PrecondName::Nystrom => PreconditionerPolicy::Nystrom { rank: self.precond.rank, refresh: self.precond.refresh },
        }
    }

    pub fn sampler_spec(&self, dim: usize) -> SamplerSpec<f64> {
        SamplerSpec {
            proposal: self.proposal(),
            precond: self.precond_policy(),
            burn_in: BurnIn { steps: self.sampler.burn_in, dt: self.sampler.burn_in_dt },
            initial_theta: Some(vec![self.sampler.initial_theta; dim]),
        }
    }
}
