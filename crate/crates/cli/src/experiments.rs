//! Experiment drivers: verification against a quadrature reference,
//! cost scaling, sampling, prediction and offline diagnostics.

use std::path::{Path, PathBuf};

use detfree_gp::diagnostics::{
    ecdf_sup_error, estimator_std, iat_estimate_batch, pooled_window, wall_time_per_independent_sample_from_traces, IatConfig,
};
use detfree_gp::posterior::{total_variance_summary, PredictionGrid};
use detfree_gp::samplers::{run_chains, TargetModel};
use detfree_gp::{ChainTrace64, Dataset64};
use serde::Serialize;

use crate::config::{DataSource, ExperimentConfig, ExperimentKind};
use crate::data::{load_csv, normalize, synth_dataset, AffineTransform};
use crate::error::{HarnessError, Result};
use crate::output::{
    fmt_f64, read_traces, write_timings, write_traces, OutputDir, CONFIG_FILE, SUMMARY_FILE, TIMING_FILE, TRACE_FILE,
};
use crate::quadrature::{quadrature_reference, QuadratureReference};

/// Training data in normalized coordinates plus the map back.
pub fn load_data(cfg: &ExperimentConfig) -> Result<(Dataset64, AffineTransform)> {
    let d = &cfg.data;
    match d.source {
        DataSource::Equispaced => Ok((Dataset64::equispaced_1d(d.n, vec![d.y_value; d.n])?, AffineTransform::identity(1))),
        DataSource::Synthetic => Ok((synth_dataset(cfg.kernel.d, d.n, d.eta, d.seed)?, AffineTransform::identity(cfg.kernel.d))),
        DataSource::Csv => {
            let path = d.path.as_deref().ok_or_else(|| HarnessError::Config("data.path is required".into()))?;
            let (mut raw, report) = load_csv(path, d.strict)?;
            if !report.dropped.is_empty() {
                log::warn!("{}: dropped {} malformed rows", path.display(), report.dropped.len());
            }
            if let Some(n) = d.subsample {
                raw = raw.subsample(n, d.subsample_seed);
            }
            normalize(&raw)
        }
    }
}

/// Per-component summary statistics of a batch of chains.
#[derive(Debug, Clone, Serialize)]
pub struct ComponentSummary {
    pub mean: f64,
    pub std: f64,
    pub tau: Option<f64>,
    pub iat_window: Option<usize>,
    pub iat_reliable: bool,
    pub effective_samples: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ChainSummary {
    pub chains: usize,
    pub failed_chains: Vec<(usize, String)>,
    pub steps: usize,
    pub acceptance_rate: f64,
    pub mean_accept_prob: f64,
    pub failed_proposals: usize,
    pub components: Vec<ComponentSummary>,
    pub wall_time_per_independent_sample: Option<f64>,
    pub mean_seconds_per_step: f64,
}

/// Per-chain recorded values of component `k`, the initial state excluded.
fn component_chains(traces: &[&ChainTrace64], k: usize) -> Vec<Vec<f64>> {
    traces.iter().map(|t| t.theta[1..].iter().map(|th| th[k]).collect()).collect()
}

pub fn summarize(traces: &[ChainTrace64], iat: &IatConfig) -> ChainSummary {
    let done: Vec<&ChainTrace64> = traces.iter().filter(|t| t.is_complete() && t.n_steps() > 0).collect();
    let min_len = done.iter().map(|t| t.n_steps()).min().unwrap_or(0);
    let done: Vec<&ChainTrace64> = done.into_iter().filter(|t| t.n_steps() == min_len).collect();
    let n = done.first().map_or(0, |t| t.theta[0].len());
    let components: Vec<ComponentSummary> = (0..n)
        .map(|k| {
            let chains = component_chains(&done, k);
            let all: Vec<f64> = chains.iter().flatten().copied().collect();
            let mean = all.iter().sum::<f64>() / all.len() as f64;
            let var = all.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (all.len().max(2) - 1) as f64;
            let refs: Vec<&[f64]> = chains.iter().map(Vec::as_slice).collect();
            let est = iat_estimate_batch(&refs, iat).ok();
            ComponentSummary {
                mean,
                std: var.sqrt(),
                tau: est.map(|e| e.tau),
                iat_window: est.map(|e| e.window),
                iat_reliable: est.is_some_and(|e| e.reliable),
                effective_samples: est.map(|e| all.len() as f64 / e.tau),
            }
        })
        .collect();
    let steps: usize = done.iter().map(|t| t.n_steps()).sum();
    let max_tau = components.iter().filter_map(|c| c.tau).fold(None, |m: Option<f64>, t| Some(m.map_or(t, |m| m.max(t))));
    let owned: Vec<ChainTrace64> = done.iter().map(|t| (*t).clone()).collect();
    ChainSummary {
        chains: traces.len(),
        failed_chains: traces.iter().filter_map(|t| t.failure.clone().map(|f| (t.chain_id, f))).collect(),
        steps: min_len,
        acceptance_rate: done.iter().map(|t| t.acceptance_rate()).sum::<f64>() / done.len().max(1) as f64,
        mean_accept_prob: done.iter().map(|t| t.mean_accept_prob()).sum::<f64>() / done.len().max(1) as f64,
        failed_proposals: traces.iter().map(|t| t.failed_proposals).sum(),
        components,
        wall_time_per_independent_sample: max_tau.map(|tau| wall_time_per_independent_sample_from_traces(&owned, tau)),
        mean_seconds_per_step: done.iter().map(|t| t.total_wall_time()).sum::<f64>() / steps.max(1) as f64,
    }
}

/// Moving-window error series against a quadrature reference.
#[derive(Debug, Clone, Serialize)]
pub struct VerificationSeries {
    pub steps: Vec<usize>,
    /// Sup-norm marginal-CDF error per component.
    pub cdf_error: [Vec<f64>; 2],
    /// `|windowed mean − reference mean|` per component.
    pub mean_error: [Vec<f64>; 2],
    /// Estimator standard deviation of the windowed mean.
    pub estimator_std: [Vec<f64>; 2],
    pub tau: [f64; 2],
}

impl VerificationSeries {
    pub fn final_index(&self) -> usize {
        self.steps.len() - 1
    }
}

/// Evaluates the windowed statistics every `every` steps, and at the last step.
pub fn verification_series(
    traces: &[ChainTrace64],
    reference: &QuadratureReference,
    every: usize,
    iat: &IatConfig,
) -> Result<VerificationSeries> {
    let done: Vec<&ChainTrace64> = traces.iter().filter(|t| t.is_complete()).collect();
    if done.is_empty() {
        return Err(HarnessError::Solver(detfree_gp::Error::InvalidConfig("every chain failed".into())));
    }
    let t_len = done.iter().map(|t| t.n_steps()).min().unwrap_or(0);
    if t_len == 0 {
        return Err(HarnessError::Config("chains have no recorded steps".into()));
    }
    let mut steps: Vec<usize> = (every..=t_len).step_by(every.max(1)).collect();
    if steps.last() != Some(&t_len) {
        steps.push(t_len);
    }
    let mut out = VerificationSeries {
        steps: steps.clone(),
        cdf_error: [Vec::new(), Vec::new()],
        mean_error: [Vec::new(), Vec::new()],
        estimator_std: [Vec::new(), Vec::new()],
        tau: [0.0; 2],
    };
    for k in 0..2 {
        // chain element j is X_j, with X_0 the starting point
        let chains: Vec<Vec<f64>> = done.iter().map(|t| t.theta[..=t_len].iter().map(|th| th[k]).collect()).collect();
        let refs: Vec<&[f64]> = chains.iter().map(Vec::as_slice).collect();
        let tails: Vec<&[f64]> = chains.iter().map(|c| &c[t_len / 2 + 1..]).collect();
        let tau = iat_estimate_batch(&tails, iat).map(|e| e.tau.max(1.0)).unwrap_or(1.0);
        out.tau[k] = tau;
        for &i in &steps {
            let w = pooled_window(&refs, i);
            out.cdf_error[k].push(ecdf_sup_error(&w, &reference.nodes, &reference.marginal_cdf[k])?);
            let m = w.iter().sum::<f64>() / w.len() as f64;
            out.mean_error[k].push((m - reference.mean[k]).abs());
            out.estimator_std[k].push(estimator_std(&refs, i, tau).unwrap_or(f64::NAN));
        }
    }
    Ok(out)
}

/// One row of the cost-scaling table.
#[derive(Debug, Clone, Serialize)]
pub struct ScalePoint {
    pub n: usize,
    pub seconds_per_step: f64,
    pub acceptance_rate: f64,
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// The scaled instance at size `n`: uniform synthetic data with the
/// kernel narrowed as `2ℓ² = (N / 10⁴)^{−2/d}`.
pub fn scaled_config(cfg: &ExperimentConfig, n: usize) -> ExperimentConfig {
    let mut c = cfg.clone();
    c.data.source = DataSource::Synthetic;
    c.data.n = n;
    c.kernel.two_ell_sq = (n as f64 / 1e4).powf(-2.0 / cfg.kernel.d as f64);
    c
}

/// Median seconds per outer step at each configured size.
pub fn scaling_table(cfg: &ExperimentConfig) -> Result<Vec<ScalePoint>> {
    cfg.scale
        .sizes
        .iter()
        .map(|&n| {
            let c = scaled_config(cfg, n);
            let (data, _) = load_data(&c)?;
            let target = c.target_model(data)?;
            let spec = c.sampler_spec(target.dim());
            let traces = run_chains(&target, &spec, c.chains.batch, c.scale.steps, c.chains.seed)?;
            let times: Vec<f64> = traces.iter().flat_map(|t| t.wall_times.iter().copied()).collect();
            let acc = traces.iter().map(|t| t.mean_accept_prob()).sum::<f64>() / traces.len() as f64;
            log::info!("N = {n}: {:.4} s/step", median(times.clone()));
            Ok(ScalePoint { n, seconds_per_step: median(times), acceptance_rate: acc })
        })
        .collect()
}

/// Files produced by an experiment.
#[derive(Debug, Clone)]
pub struct Artifacts {
    pub dir: PathBuf,
    pub files: Vec<PathBuf>,
}

fn sample_chains(cfg: &ExperimentConfig, target: &TargetModel<f64>) -> Result<Vec<ChainTrace64>> {
    let spec = cfg.sampler_spec(target.dim());
    Ok(run_chains(target, &spec, cfg.chains.batch, cfg.chains.steps, cfg.chains.seed)?)
}

fn write_chain_outputs(out: &OutputDir, traces: &[ChainTrace64], files: &mut Vec<PathBuf>) -> Result<()> {
    write_traces(&out.file(TRACE_FILE), traces)?;
    write_timings(&out.file(TIMING_FILE), traces)?;
    files.push(out.file(TRACE_FILE));
    files.push(out.file(TIMING_FILE));
    for t in traces {
        if let Some(f) = &t.failure {
            log::error!("chain {} failed: {f}", t.chain_id);
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct VerifySummary<'a> {
    reference_mean: [f64; 2],
    reference_variance: [f64; 2],
    final_cdf_error: [f64; 2],
    final_mean_error: [f64; 2],
    final_estimator_std: [f64; 2],
    chains: &'a ChainSummary,
}

fn run_verify(cfg: &ExperimentConfig, out: &OutputDir, files: &mut Vec<PathBuf>) -> Result<()> {
    let (data, _) = load_data(cfg)?;
    let target = cfg.target_model(data)?;
    let v = &cfg.verify;
    let reference = quadrature_reference(&target, v.grid_lo, v.grid_hi, v.grid_n)?;
    let rows: Vec<Vec<String>> = (0..reference.n())
        .map(|i| {
            vec![
                fmt_f64(reference.nodes[i]),
                fmt_f64(reference.marginal_density[0][i]),
                fmt_f64(reference.marginal_cdf[0][i]),
                fmt_f64(reference.marginal_density[1][i]),
                fmt_f64(reference.marginal_cdf[1][i]),
            ]
        })
        .collect();
    files.push(out.write_table("reference.csv", &["theta", "pdf_0", "cdf_0", "pdf_1", "cdf_1"], &rows)?);
    let traces = sample_chains(cfg, &target)?;
    write_chain_outputs(out, &traces, files)?;
    let series = verification_series(&traces, &reference, v.every, &cfg.iat_config())?;
    let cdf_rows: Vec<Vec<String>> = series
        .steps
        .iter()
        .enumerate()
        .map(|(r, s)| vec![s.to_string(), fmt_f64(series.cdf_error[0][r]), fmt_f64(series.cdf_error[1][r])])
        .collect();
    files.push(out.write_table("cdf_error.csv", &["step", "theta_0", "theta_1"], &cdf_rows)?);
    let mean_rows: Vec<Vec<String>> = series
        .steps
        .iter()
        .enumerate()
        .map(|(r, s)| {
            vec![
                s.to_string(),
                fmt_f64(series.mean_error[0][r]),
                fmt_f64(series.estimator_std[0][r]),
                fmt_f64(series.mean_error[1][r]),
                fmt_f64(series.estimator_std[1][r]),
            ]
        })
        .collect();
    files.push(out.write_table("mean_error.csv", &["step", "error_0", "std_0", "error_1", "std_1"], &mean_rows)?);
    let summary = summarize(&traces, &cfg.iat_config());
    let last = series.final_index();
    files.push(out.write_json(
        SUMMARY_FILE,
        &VerifySummary {
            reference_mean: reference.mean,
            reference_variance: reference.variance,
            final_cdf_error: [series.cdf_error[0][last], series.cdf_error[1][last]],
            final_mean_error: [series.mean_error[0][last], series.mean_error[1][last]],
            final_estimator_std: [series.estimator_std[0][last], series.estimator_std[1][last]],
            chains: &summary,
        },
    )?);
    Ok(())
}

#[derive(Serialize)]
struct ScaleSummary {
    points: Vec<ScalePoint>,
    loglog_slope: Option<f64>,
}

fn run_scale(cfg: &ExperimentConfig, out: &OutputDir, files: &mut Vec<PathBuf>) -> Result<()> {
    let points = scaling_table(cfg)?;
    let rows: Vec<Vec<String>> = points
        .iter()
        .map(|p| vec![p.n.to_string(), fmt_f64(p.seconds_per_step), fmt_f64(p.acceptance_rate)])
        .collect();
    files.push(out.write_table("scaling.csv", &["n", "seconds_per_step", "accept_prob"], &rows)?);
    let slope = (points.len() >= 2).then(|| {
        let x: Vec<f64> = points.iter().map(|p| p.n as f64).collect();
        let y: Vec<f64> = points.iter().map(|p| p.seconds_per_step).collect();
        loglog_slope(&x, &y)
    });
    files.push(out.write_json(SUMMARY_FILE, &ScaleSummary { points, loglog_slope: slope })?);
    Ok(())
}

fn run_sample(cfg: &ExperimentConfig, out: &OutputDir, files: &mut Vec<PathBuf>) -> Result<()> {
    let (data, tf) = load_data(cfg)?;
    let target = cfg.target_model(data)?;
    let traces = sample_chains(cfg, &target)?;
    write_chain_outputs(out, &traces, files)?;
    files.push(out.write_json("transform.json", &tf)?);
    files.push(out.write_json(SUMMARY_FILE, &summarize(&traces, &cfg.iat_config()))?);
    Ok(())
}

#[derive(Serialize)]
struct PredictSummary {
    samples_used: usize,
    grid_points: usize,
    max_total_std: f64,
}

fn run_predict(cfg: &ExperimentConfig, out: &OutputDir, files: &mut Vec<PathBuf>) -> Result<()> {
    let (data, tf) = load_data(cfg)?;
    let target = cfg.target_model(data)?;
    let traces = match &cfg.predict.traces {
        Some(p) => read_traces(p, None)?,
        None => {
            let t = sample_chains(cfg, &target)?;
            write_chain_outputs(out, &t, files)?;
            t
        }
    };
    let samples: Vec<Vec<f64>> =
        traces.iter().filter(|t| t.is_complete()).flat_map(|t| t.theta[1..].iter().cloned()).collect();
    let grid = PredictionGrid::regular(cfg.kernel.d, cfg.predict.grid_per_axis)?;
    let s = total_variance_summary(target.model(), target.template(), &samples, &grid, cfg.predict.stride, &cfg.solve_config())?;
    let mut header: Vec<String> = (1..=cfg.kernel.d).map(|j| format!("x{j}")).collect();
    header.extend(["mean", "std", "expected_variance", "variance_of_mean"].map(String::from));
    let rows: Vec<Vec<String>> = (0..grid.len())
        .map(|g| {
            let mut r: Vec<String> = tf.inverse_point(grid.point(g)).into_iter().map(fmt_f64).collect();
            r.push(fmt_f64(tf.inverse_y(s.mean[g])));
            r.push(fmt_f64(tf.inverse_std(s.total_std[g])));
            r.push(fmt_f64(s.expected_variance[g]));
            r.push(fmt_f64(s.variance_of_mean[g]));
            r
        })
        .collect();
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    files.push(out.write_table("prediction.csv", &header_refs, &rows)?);
    let max_total_std = s.total_std.iter().copied().fold(0.0, f64::max);
    files.push(out.write_json(
        SUMMARY_FILE,
        &PredictSummary { samples_used: s.samples_used, grid_points: grid.len(), max_total_std },
    )?);
    Ok(())
}

/// Runs the configured experiment into `cfg.experiment.output`, starting
/// with a snapshot of the configuration.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Artifacts> {
    cfg.validate()?;
    let out = OutputDir::acquire(&cfg.experiment.output)?;
    let mut files = vec![out.write_text(CONFIG_FILE, &cfg.to_toml_string())?];
    match cfg.experiment.kind {
        ExperimentKind::Verify => run_verify(cfg, &out, &mut files)?,
        ExperimentKind::Scale => run_scale(cfg, &out, &mut files)?,
        ExperimentKind::Sample => run_sample(cfg, &out, &mut files)?,
        ExperimentKind::Predict => run_predict(cfg, &out, &mut files)?,
    }
    Ok(Artifacts { dir: out.path().to_path_buf(), files })
}

/// Recomputes the chain summary from a stored run directory.
pub fn diagnose(dir: &Path, iat: &IatConfig) -> Result<PathBuf> {
    let traces = read_traces(&dir.join(TRACE_FILE), Some(&dir.join(TIMING_FILE)))?;
    let out = OutputDir::acquire(dir)?;
    out.write_json("diagnostics.json", &summarize(&traces, iat))
}
