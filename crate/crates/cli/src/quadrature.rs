//! Brute-force reference posterior for two inferred hyperparameters,
//! tabulated on a tensor grid with the trapezoidal rule.

use detfree_gp::samplers::{DeterminantPotential, Potential, TargetModel};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuadratureReference {
    pub lo: f64,
    pub hi: f64,
    /// Equispaced nodes per axis, endpoints included.
    pub nodes: Vec<f64>,
    /// Normalized density, row-major with `θ₀` slowest.
    pub density: Vec<f64>,
    pub marginal_density: [Vec<f64>; 2],
    /// Marginal CDFs at the nodes.
    pub marginal_cdf: [Vec<f64>; 2],
    pub mean: [f64; 2],
    pub variance: [f64; 2],
}

fn trapezoid_weights(n: usize, h: f64) -> Vec<f64> {
    let mut w = vec![h; n];
    w[0] = 0.5 * h;
    w[n - 1] = 0.5 * h;
    w
}

fn cumulative_trapezoid(f: &[f64], h: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(f.len());
    let mut acc = 0.0;
    out.push(0.0);
    for w in f.windows(2) {
        acc += 0.5 * h * (w[0] + w[1]);
        out.push(acc);
    }
    out
}

impl QuadratureReference {
    pub fn n(&self) -> usize {
        self.nodes.len()
    }

    pub fn spacing(&self) -> f64 {
        (self.hi - self.lo) / (self.n() - 1) as f64
    }

    /// Trapezoidal integral of the normalized density.
    pub fn total_mass(&self) -> f64 {
        let n = self.n();
        let w = trapezoid_weights(n, self.spacing());
        (0..n).map(|i| (0..n).map(|j| w[i] * w[j] * self.density[i * n + j]).sum::<f64>()).sum()
    }
}

/// Evaluates the exact marginal posterior `exp(−U(θ))` from dense
/// factorizations at every node of `[lo, hi]²` and normalizes it.
pub fn quadrature_reference(target: &TargetModel<f64>, lo: f64, hi: f64, n: usize) -> Result<QuadratureReference> {
    if target.dim() != 2 {
        return Err(HarnessError::Solver(detfree_gp::Error::Unsupported(format!(
            "quadrature reference needs exactly two inferred hyperparameters, got {}",
            target.dim()
        ))));
    }
    if !(lo < hi) || n < 2 {
        return Err(HarnessError::Config("quadrature grid needs lo < hi and at least 2 nodes".into()));
    }
    let h = (hi - lo) / (n - 1) as f64;
    let nodes: Vec<f64> = (0..n).map(|i| lo + h * i as f64).collect();
    let log_density: Vec<f64> = (0..n * n)
        .into_par_iter()
        .map_init(
            || DeterminantPotential::new(target),
            |pot, k| pot.potential(&[nodes[k / n], nodes[k % n]]).map(|u| -u),
        )
        .collect::<detfree_gp::Result<_>>()?;
    let peak = log_density.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut density: Vec<f64> = log_density.iter().map(|l| (l - peak).exp()).collect();
    let w = trapezoid_weights(n, h);
    let mass: f64 = (0..n * n).map(|k| w[k / n] * w[k % n] * density[k]).sum();
    density.iter_mut().for_each(|p| *p /= mass);

    let m0: Vec<f64> = (0..n).map(|i| (0..n).map(|j| w[j] * density[i * n + j]).sum()).collect();
    let m1: Vec<f64> = (0..n).map(|j| (0..n).map(|i| w[i] * density[i * n + j]).sum()).collect();
    let moments = |m: &[f64]| {
        let mean: f64 = m.iter().zip(&nodes).zip(&w).map(|((p, x), wi)| wi * p * x).sum();
        let var: f64 = m.iter().zip(&nodes).zip(&w).map(|((p, x), wi)| wi * p * (x - mean) * (x - mean)).sum();
        (mean, var)
    };
    let (mean0, var0) = moments(&m0);
    let (mean1, var1) = moments(&m1);
    let cdf = |m: &[f64]| {
        let mut c = cumulative_trapezoid(m, h);
        let total = *c.last().expect("n >= 2");
        c.iter_mut().for_each(|v| *v /= total);
        c
    };
    Ok(QuadratureReference {
        lo,
        hi,
        marginal_cdf: [cdf(&m0), cdf(&m1)],
        marginal_density: [m0, m1],
        nodes,
        density,
        mean: [mean0, mean1],
        variance: [var0, var1],
    })
}
