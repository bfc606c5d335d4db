//! Simulation-side ground truth for the linear model: the asymptotic
//! variance `Γ⁻¹[Σ/n + C(n,2)⁻¹h⁻ᵈ Δ(K)]Γ⁻¹` and its jackknife and bootstrap
//! variants, Monte Carlo evaluation of its components, and empirical bias
//! and variance measurement over replicated datasets.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dgp::{generate, DgpConfig, DgpError, WDesign};
use crate::inference::{solve_bandwidths, InferenceError};
use crate::jackknife::{debias_combine, DebiasPlan};
use crate::kernel::{EquivalentKernel, KernelSpec};
use crate::models::PairwiseModel;
use crate::rng;
use crate::solver::SolverConfig;

/// Batches used for Monte Carlo standard errors.
pub const BATCHES: usize = 10;
pub const MIN_REPS: usize = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("oracle components are available for the linear model only, got {0}")]
    NotPlr(PairwiseModel),
    #[error("need at least {min} Monte Carlo replications, got {got}")]
    TooFewReps { min: usize, got: usize },
    #[error("invalid oracle input: {0}")]
    Invalid(String),
    #[error("{failed} of {total} replications failed (more than 5%); first: {first}")]
    TooManyFailures { failed: usize, total: usize, first: String },
    #[error(transparent)]
    Dgp(#[from] DgpError),
    #[error(transparent)]
    Inference(#[from] InferenceError),
}

/// Mean and batch-means standard error.
pub fn batch_mean(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let b = BATCHES.min(n);
    if b < 2 {
        return (mean, f64::NAN);
    }
    let means: Vec<f64> = (0..b)
        .map(|j| {
            let (lo, hi) = (j * n / b, (j + 1) * n / b);
            values[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect();
    let mm = means.iter().sum::<f64>() / b as f64;
    let var = means.iter().map(|m| (m - mm).powi(2)).sum::<f64>() / (b - 1) as f64;
    (mean, (var / b as f64).sqrt())
}

fn matrix(k: usize, v: &[f64]) -> Vec<Vec<f64>> {
    v.chunks(k).map(<[f64]>::to_vec).collect()
}

fn to_dmatrix(m: &[Vec<f64>]) -> DMatrix<f64> {
    let k = m.len();
    DMatrix::from_fn(k, k, |i, j| m[i][j])
}

fn from_dmatrix(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleComponents {
    pub k: usize,
    /// `E[G₀(w)]`
    pub gamma: Vec<Vec<f64>>,
    /// `E[ξ₀ξ₀']`
    pub sigma: Vec<Vec<f64>>,
    /// `E[Ξ₀(w)]`
    pub xi: Vec<Vec<f64>>,
    /// `E[Ξ₀(w)] ∫K²` for the base kernel.
    pub delta: Vec<Vec<f64>>,
    pub kernel_sq_integral: f64,
    /// Entrywise standard errors; zero for closed-form components.
    pub gamma_se: Vec<Vec<f64>>,
    pub sigma_se: Vec<Vec<f64>>,
    pub xi_se: Vec<Vec<f64>>,
    pub mc_samples: usize,
}

fn check_plr(dgp: &DgpConfig) -> Result<(), OracleError> {
    dgp.validate()?;
    if dgp.model != PairwiseModel::Plr {
        return Err(OracleError::NotPlr(dgp.model));
    }
    Ok(())
}

/// Closed-form components for the built-in designs, where `V[x|w] = I`.
pub fn analytic_components_plr(dgp: &DgpConfig, spec: &KernelSpec) -> Result<OracleComponents, OracleError> {
    check_plr(dgp)?;
    let k = dgp.k;
    let (ef, ef2) = dgp.w_design.density_moments(dgp.d);
    let s2 = dgp.noise_scale * dgp.noise_scale;
    let diag = |v: f64| -> Vec<Vec<f64>> { (0..k).map(|i| (0..k).map(|j| if i == j { v } else { 0.0 }).collect()).collect() };
    let ksq = spec.squared_integral();
    Ok(OracleComponents {
        k,
        gamma: diag(2.0 * ef),
        sigma: diag(4.0 * s2 * ef2),
        xi: diag(4.0 * s2 * ef),
        delta: diag(4.0 * s2 * ef * ksq),
        kernel_sq_integral: ksq,
        gamma_se: diag(0.0),
        sigma_se: diag(0.0),
        xi_se: diag(0.0),
        mc_samples: 0,
    })
}

fn sample_w<R: Rng + ?Sized>(design: &WDesign, d: usize, rng: &mut R) -> Vec<f64> {
    (0..d)
        .map(|_| match *design {
            WDesign::Gaussian { mean, sd } => {
                let z: f64 = StandardNormal.sample(rng);
                mean + sd * z
            }
            WDesign::Uniform { lo, hi } => lo + (hi - lo) * rng.random::<f64>(),
        })
        .collect()
}

/// Monte Carlo components. `x - E[x|w]` is the generator's `ν`, and the
/// error is independent of `(x, w)`, so
/// `G₀ = 2νν'f`, `ξ₀ = -2νεf` and `Ξ₀ = (ν₁-ν₂)(ν₁-ν₂)'(ε₁-ε₂)² f`
/// with two independent draws at a common `w`.
pub fn oracle_components_plr<R: Rng + ?Sized>(dgp: &DgpConfig, spec: &KernelSpec, mc_samples: usize, rng: &mut R) -> Result<OracleComponents, OracleError> {
    check_plr(dgp)?;
    if mc_samples < BATCHES * 2 {
        return Err(OracleError::TooFewReps { min: BATCHES * 2, got: mc_samples });
    }
    let k = dgp.k;
    let kk = k * k;
    let sd = dgp.noise_scale;
    let mut g = vec![Vec::with_capacity(mc_samples); kk];
    let mut s = vec![Vec::with_capacity(mc_samples); kk];
    let mut x = vec![Vec::with_capacity(mc_samples); kk];
    let normal = |rng: &mut R| -> f64 { StandardNormal.sample(rng) };
    for _ in 0..mc_samples {
        let w = sample_w(&dgp.w_design, dgp.d, rng);
        let f = dgp.w_design.density(&w);
        let nu: Vec<f64> = (0..k).map(|_| normal(rng)).collect();
        let eps = sd * normal(rng);
        let nu1: Vec<f64> = (0..k).map(|_| normal(rng)).collect();
        let nu2: Vec<f64> = (0..k).map(|_| normal(rng)).collect();
        let de = sd * (normal(rng) - normal(rng));
        for a in 0..k {
            for b in 0..k {
                g[a * k + b].push(2.0 * nu[a] * nu[b] * f);
                s[a * k + b].push(4.0 * eps * eps * nu[a] * nu[b] * f * f);
                x[a * k + b].push((nu1[a] - nu2[a]) * (nu1[b] - nu2[b]) * de * de * f);
            }
        }
    }
    let summarize = |cols: &[Vec<f64>]| -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let (m, e): (Vec<f64>, Vec<f64>) = cols.iter().map(|c| batch_mean(c)).unzip();
        (matrix(k, &m), matrix(k, &e))
    };
    let (gamma, gamma_se) = summarize(&g);
    let (sigma, sigma_se) = summarize(&s);
    let (xi, xi_se) = summarize(&x);
    let ksq = spec.squared_integral();
    let delta = xi.iter().map(|r| r.iter().map(|v| v * ksq).collect()).collect();
    Ok(OracleComponents { k, gamma, sigma, xi, delta, kernel_sq_integral: ksq, gamma_se, sigma_se, xi_se, mc_samples })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VarianceKind {
    /// Plain estimator, base kernel.
    V,
    /// Jackknifed estimator, equivalent kernel.
    VBar,
    /// Naive bootstrap limit: small-bandwidth term tripled.
    VBarStar,
}

pub fn pair_count_f64(n: usize) -> f64 {
    n as f64 * (n as f64 - 1.0) / 2.0
}

pub fn variance_formula(c: &OracleComponents, n: usize, h: f64, d: usize, which: VarianceKind, ek: &EquivalentKernel) -> Result<Vec<Vec<f64>>, OracleError> {
    if n < 2 || !(h > 0.0 && h.is_finite()) || d == 0 {
        return Err(OracleError::Invalid(format!("need n >= 2, h > 0 and d >= 1 (n={n}, h={h}, d={d})")));
    }
    let ksq = match which {
        VarianceKind::V => ek.base.squared_integral(),
        VarianceKind::VBar => ek.squared_integral(),
        VarianceKind::VBarStar => 3.0 * ek.squared_integral(),
    };
    let gamma = to_dmatrix(&c.gamma);
    let ginv = gamma.clone().try_inverse().ok_or_else(|| OracleError::Invalid("singular Γ₀".into()))?;
    let small = ksq / (pair_count_f64(n) * h.powi(d as i32));
    let middle = to_dmatrix(&c.sigma) / n as f64 + to_dmatrix(&c.xi) * small;
    Ok(from_dmatrix(&(&ginv * middle * &ginv)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingVariance {
    pub reps: usize,
    pub mean: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
    pub cov_se: Vec<Vec<f64>>,
    pub failures: usize,
}

/// Runs `f` on independent datasets `stream(seed, [EXPERIMENT, r])`,
/// replicate-parallel, results in replicate order.
pub fn replicate<T, F>(dgp: &DgpConfig, reps: usize, seed: u64, f: F) -> Result<Vec<T>, OracleError>
where
    T: Send,
    F: Fn(usize, &crate::data::Dataset) -> Result<T, String> + Sync,
{
    dgp.validate()?;
    let out: Vec<Result<T, String>> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let data = generate(dgp, &mut rng::stream(seed, &[rng::EXPERIMENT, r as u64])).map_err(|e| e.to_string())?;
            f(r, &data)
        })
        .collect();
    let mut ok = Vec::with_capacity(reps);
    let mut failed = Vec::new();
    for o in out {
        match o {
            Ok(v) => ok.push(v),
            Err(e) => failed.push(e),
        }
    }
    if failed.len() as f64 > 0.05 * reps as f64 {
        return Err(OracleError::TooManyFailures { failed: failed.len(), total: reps, first: failed[0].clone() });
    }
    Ok(ok)
}

/// Covariance of the draws with batch-means standard errors per entry.
pub fn sample_covariance(draws: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let r = draws.len();
    let k = draws[0].len();
    let mean: Vec<f64> = (0..k).map(|a| draws.iter().map(|t| t[a]).sum::<f64>() / r as f64).collect();
    let scale = r as f64 / (r as f64 - 1.0);
    let mut cov = vec![vec![0.0; k]; k];
    let mut se = vec![vec![0.0; k]; k];
    for a in 0..k {
        for b in 0..k {
            let prods: Vec<f64> = draws.iter().map(|t| (t[a] - mean[a]) * (t[b] - mean[b])).collect();
            let (m, e) = batch_mean(&prods);
            cov[a][b] = m * scale;
            se[a][b] = e * scale;
        }
    }
    (mean, cov, se)
}

pub fn empirical_sampling_variance(dgp: &DgpConfig, spec: &KernelSpec, h: f64, plan: &DebiasPlan, reps: usize, seed: u64, config: &SolverConfig) -> Result<SamplingVariance, OracleError> {
    if reps < MIN_REPS {
        return Err(OracleError::TooFewReps { min: MIN_REPS, got: reps });
    }
    let bandwidths = plan.bandwidths(h);
    let thetas = replicate(dgp, reps, seed, |_, data| {
        let levels = solve_bandwidths(data, dgp.model, spec, &bandwidths, config).map_err(|e| e.to_string())?;
        let t: Vec<Vec<f64>> = levels.into_iter().map(|r| r.theta).collect();
        debias_combine(&t, plan).map_err(|e| e.to_string())
    })?;
    let (mean, cov, cov_se) = sample_covariance(&thetas);
    Ok(SamplingVariance { reps, mean, cov, cov_se, failures: reps - thetas.len() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BiasStatus {
    Fitted,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasCurve {
    pub order: usize,
    pub h: Vec<f64>,
    pub bias: Vec<Vec<f64>>,
    pub se: Vec<Vec<f64>>,
    /// `|bias₁| > 3 SE₁`
    pub qualifying: Vec<bool>,
    pub slope: Option<f64>,
    pub status: BiasStatus,
    pub reps: usize,
}

impl BiasCurve {
    fn fit(order: usize, h: Vec<f64>, bias: Vec<Vec<f64>>, se: Vec<Vec<f64>>, reps: usize) -> Self {
        let qualifying: Vec<bool> = bias.iter().zip(&se).map(|(b, s)| b[0].abs() > 3.0 * s[0]).collect();
        let pts: Vec<(f64, f64)> = h.iter().zip(&bias).zip(&qualifying).filter(|(_, &q)| q).map(|((h, b), _)| (h.ln(), b[0].abs().ln())).collect();
        let slope = (pts.len() >= 2).then(|| least_squares_slope(&pts));
        let status = if slope.is_some() { BiasStatus::Fitted } else { BiasStatus::Inconclusive };
        Self { order, h, bias, se, qualifying, slope, status, reps }
    }

    pub fn qualifying_count(&self) -> usize {
        self.qualifying.iter().filter(|&&q| q).count()
    }
}

pub fn least_squares_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

fn check_grid(grid: &[f64]) -> Result<(), OracleError> {
    if grid.is_empty() || grid.iter().any(|h| !(*h > 0.0 && h.is_finite())) || grid.windows(2).any(|w| w[1] >= w[0]) {
        return Err(OracleError::Invalid("bandwidth grid must be positive and strictly decreasing".into()));
    }
    Ok(())
}

/// Bias curves for several plans from the same datasets; every replicate
/// solves once at the union of all bandwidths.
pub fn bias_curves(dgp: &DgpConfig, spec: &KernelSpec, plans: &[DebiasPlan], grid: &[f64], reps: usize, seed: u64, config: &SolverConfig) -> Result<Vec<BiasCurve>, OracleError> {
    check_grid(grid)?;
    if reps < BATCHES * 2 {
        return Err(OracleError::TooFewReps { min: BATCHES * 2, got: reps });
    }
    let mut union: Vec<f64> = Vec::new();
    let mut slot = |b: f64| match union.iter().position(|&u| u == b) {
        Some(i) => i,
        None => {
            union.push(b);
            union.len() - 1
        }
    };
    let slots: Vec<Vec<Vec<usize>>> = plans.iter().map(|p| grid.iter().map(|&h| p.bandwidths(h).into_iter().map(&mut slot).collect()).collect()).collect();

    let k = dgp.k;
    let theta0 = &dgp.theta0;
    let errors: Vec<Vec<Vec<Vec<f64>>>> = replicate(dgp, reps, seed, |_, data| {
        let levels = solve_bandwidths(data, dgp.model, spec, &union, config).map_err(|e| e.to_string())?;
        slots
            .iter()
            .zip(plans)
            .map(|(per_h, plan)| {
                per_h
                    .iter()
                    .map(|s| {
                        let t: Vec<Vec<f64>> = s.iter().map(|&i| levels[i].theta.clone()).collect();
                        let est = debias_combine(&t, plan).map_err(|e| e.to_string())?;
                        Ok(est.iter().zip(theta0).map(|(a, b)| a - b).collect())
                    })
                    .collect()
            })
            .collect()
    })?;
    let used = errors.len();
    Ok(plans
        .iter()
        .enumerate()
        .map(|(p, plan)| {
            let mut bias = Vec::with_capacity(grid.len());
            let mut se = Vec::with_capacity(grid.len());
            for g in 0..grid.len() {
                let (m, e): (Vec<f64>, Vec<f64>) = (0..k).map(|a| batch_mean(&errors.iter().map(|r| r[p][g][a]).collect::<Vec<_>>())).unzip();
                bias.push(m);
                se.push(e);
            }
            BiasCurve::fit(plan.order, grid.to_vec(), bias, se, used)
        })
        .collect())
}

pub fn bias_curve(dgp: &DgpConfig, spec: &KernelSpec, plan: &DebiasPlan, grid: &[f64], reps: usize, seed: u64, config: &SolverConfig) -> Result<BiasCurve, OracleError> {
    Ok(bias_curves(dgp, spec, std::slice::from_ref(plan), grid, reps, seed, config)?.remove(0))
}
