//! Debiased estimation over a bandwidth ladder, the bandwidth-rescaled
//! nonparametric bootstrap, and percentile confidence intervals.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Dataset;
use crate::jackknife::{debias_combine, DebiasPlan, JackknifeError};
use crate::kernel::KernelSpec;
use crate::models::PairwiseModel;
use crate::objective::{pairwise_weights, regime_diagnostics, ObjectiveError, RegimeDiagnostics};
use crate::rng;
use crate::solver::{estimate_with_weights, plr_closed_form_ladder, EstimateRecord, SolverConfig, SolverError};

/// Largest tolerated share of failed bootstrap replicates.
pub const MAX_FAILURE_SHARE: f64 = 0.05;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InferenceError {
    #[error("level {level} (bandwidth {bandwidth}): {source}")]
    Level { level: usize, bandwidth: f64, source: SolverError },
    #[error(transparent)]
    Jackknife(#[from] JackknifeError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error("invalid interval request: {0}")]
    InvalidSpec(String),
    #[error("{failed} of {total} bootstrap replicates failed (more than 5%)")]
    TooManyFailures { failed: usize, total: usize },
    #[error("no bootstrap draws")]
    EmptyDraws,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CiSpec {
    pub contrast: Vec<f64>,
    pub alpha: f64,
    pub replicates: usize,
    pub seed: u64,
}

impl CiSpec {
    pub fn validate(&self, k: usize) -> Result<(), InferenceError> {
        if self.contrast.len() != k {
            return Err(InferenceError::InvalidSpec(format!("contrast has length {}, expected {k}", self.contrast.len())));
        }
        if self.contrast.iter().all(|v| *v == 0.0) || self.contrast.iter().any(|v| !v.is_finite()) {
            return Err(InferenceError::InvalidSpec("contrast must be finite and nonzero".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(InferenceError::InvalidSpec(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if self.replicates < 2 {
            return Err(InferenceError::InvalidSpec(format!("need at least 2 bootstrap replicates, got {}", self.replicates)));
        }
        Ok(())
    }
}

/// Bandwidths used by bootstrap replicates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BootstrapScaling {
    /// `3^{1/d} c_l h`
    Rescaled,
    /// `c_l h`, the inconsistent naive bootstrap kept for validation.
    Unscaled,
}

impl BootstrapScaling {
    pub fn factor(&self, d: usize) -> f64 {
        match self {
            BootstrapScaling::Rescaled => 3f64.powf(1.0 / d as f64),
            BootstrapScaling::Unscaled => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DebiasedEstimate {
    pub levels: Vec<EstimateRecord>,
    pub theta: Vec<f64>,
    pub regimes: Vec<RegimeDiagnostics>,
}

/// Solves at every bandwidth, PLR in a single pass over pairs.
pub fn solve_bandwidths(data: &Dataset, model: PairwiseModel, spec: &KernelSpec, bandwidths: &[f64], config: &SolverConfig) -> Result<Vec<EstimateRecord>, InferenceError> {
    let level_err = |level: usize, source: SolverError| InferenceError::Level { level, bandwidth: bandwidths[level], source };
    if model == PairwiseModel::Plr {
        let ladder = plr_closed_form_ladder(data, spec, bandwidths).map_err(|e| level_err(0, e))?;
        return ladder.into_iter().enumerate().map(|(l, r)| r.map_err(|e| level_err(l, e))).collect();
    }
    model.validate_outcomes(data).map_err(ObjectiveError::from)?;
    bandwidths
        .iter()
        .enumerate()
        .map(|(l, &h)| {
            let weights = pairwise_weights(data, spec, h)?;
            estimate_with_weights(&weights, model, data, config).map_err(|e| level_err(l, e))
        })
        .collect()
}

pub fn debiased_estimate(data: &Dataset, model: PairwiseModel, spec: &KernelSpec, h: f64, plan: &DebiasPlan, config: &SolverConfig) -> Result<DebiasedEstimate, InferenceError> {
    let bandwidths = plan.bandwidths(h);
    let levels = solve_bandwidths(data, model, spec, &bandwidths, config)?;
    let thetas: Vec<Vec<f64>> = levels.iter().map(|r| r.theta.clone()).collect();
    let theta = debias_combine(&thetas, plan)?;
    let regimes = bandwidths.iter().map(|&b| RegimeDiagnostics::from_scalars(data.n(), b, data.d())).collect();
    Ok(DebiasedEstimate { levels, theta, regimes })
}

/// Regime diagnostics with the nonzero-pair share filled in.
pub fn level_regimes(data: &Dataset, spec: &KernelSpec, bandwidths: &[f64]) -> Result<Vec<RegimeDiagnostics>, InferenceError> {
    bandwidths
        .iter()
        .map(|&h| Ok(regime_diagnostics(&pairwise_weights(data, spec, h)?, data.n(), h, data.d())))
        .collect()
}

pub fn bootstrap_resample<R: Rng + ?Sized>(data: &Dataset, rng: &mut R) -> Dataset {
    let n = data.n();
    let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
    data.select(&idx).expect("resample keeps the dataset shape")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateFailure {
    pub replicate: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapDraws {
    pub scaling: BootstrapScaling,
    pub bandwidths: Vec<f64>,
    /// Full-sample estimate at the replicate bandwidths.
    pub center: Vec<f64>,
    pub center_levels: Vec<EstimateRecord>,
    /// `θ̆* - θ̆` for each successful replicate, in replicate order.
    pub draws: Vec<Vec<f64>>,
    pub failures: Vec<ReplicateFailure>,
}

/// Bootstrap draws for several debiasing plans that share resamples.
///
/// Each replicate solves once at the union of the plans' bandwidths.
#[allow(clippy::too_many_arguments)]
pub fn bootstrap_draws_multi(
    data: &Dataset,
    model: PairwiseModel,
    spec: &KernelSpec,
    h: f64,
    plans: &[DebiasPlan],
    replicates: usize,
    seed: u64,
    scaling: BootstrapScaling,
    config: &SolverConfig,
) -> Result<Vec<BootstrapDraws>, InferenceError> {
    if replicates == 0 {
        return Err(InferenceError::InvalidSpec("need at least 1 bootstrap replicate".into()));
    }
    let factor = scaling.factor(data.d());
    let mut union: Vec<f64> = Vec::new();
    let slots: Vec<Vec<usize>> = plans
        .iter()
        .map(|plan| {
            plan.bandwidths(h)
                .into_iter()
                .map(|b| {
                    let b = factor * b;
                    match union.iter().position(|&u| u == b) {
                        Some(i) => i,
                        None => {
                            union.push(b);
                            union.len() - 1
                        }
                    }
                })
                .collect()
        })
        .collect();

    let center_levels = solve_bandwidths(data, model, spec, &union, config)?;
    let combine = |levels: &[Vec<f64>], plan_index: usize| -> Result<Vec<f64>, JackknifeError> {
        let picked: Vec<Vec<f64>> = slots[plan_index].iter().map(|&s| levels[s].clone()).collect();
        debias_combine(&picked, &plans[plan_index])
    };
    let center_thetas: Vec<Vec<f64>> = center_levels.iter().map(|r| r.theta.clone()).collect();
    let centers: Vec<Vec<f64>> = (0..plans.len()).map(|p| combine(&center_thetas, p)).collect::<Result<_, _>>()?;

    let outcomes: Vec<Result<Vec<Vec<f64>>, String>> = (0..replicates)
        .into_par_iter()
        .map(|b| {
            let mut r = rng::stream(seed, &[rng::BOOTSTRAP, b as u64]);
            let sample = bootstrap_resample(data, &mut r);
            let levels = solve_bandwidths(&sample, model, spec, &union, config).map_err(|e| e.to_string())?;
            let thetas: Vec<Vec<f64>> = levels.into_iter().map(|r| r.theta).collect();
            (0..plans.len()).map(|p| combine(&thetas, p).map_err(|e| e.to_string())).collect()
        })
        .collect();

    let mut failures = Vec::new();
    let mut per_plan: Vec<Vec<Vec<f64>>> = vec![Vec::with_capacity(replicates); plans.len()];
    for (b, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(estimates) => {
                for (p, est) in estimates.into_iter().enumerate() {
                    per_plan[p].push(est.iter().zip(&centers[p]).map(|(a, c)| a - c).collect());
                }
            }
            Err(message) => failures.push(ReplicateFailure { replicate: b, message }),
        }
    }
    if failures.len() as f64 > MAX_FAILURE_SHARE * replicates as f64 {
        return Err(InferenceError::TooManyFailures { failed: failures.len(), total: replicates });
    }
    Ok(per_plan
        .into_iter()
        .enumerate()
        .map(|(p, draws)| BootstrapDraws {
            scaling,
            bandwidths: slots[p].iter().map(|&s| union[s]).collect(),
            center: centers[p].clone(),
            center_levels: slots[p].iter().map(|&s| center_levels[s].clone()).collect(),
            draws,
            failures: failures.clone(),
        })
        .collect())
}

#[allow(clippy::too_many_arguments)]
pub fn bootstrap_draws(data: &Dataset, model: PairwiseModel, spec: &KernelSpec, h: f64, plan: &DebiasPlan, ci: &CiSpec, scaling: BootstrapScaling, config: &SolverConfig) -> Result<BootstrapDraws, InferenceError> {
    ci.validate(data.k())?;
    let mut out = bootstrap_draws_multi(data, model, spec, h, std::slice::from_ref(plan), ci.replicates, ci.seed, scaling, config)?;
    Ok(out.remove(0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
    pub level: f64,
    pub point: f64,
}

impl Interval {
    pub fn contains(&self, v: f64) -> bool {
        self.lower <= v && v <= self.upper
    }

    pub fn length(&self) -> f64 {
        self.upper - self.lower
    }
}

/// `inf{q : #{v_b ≤ q}/B ≥ t}` for sorted `v`.
pub fn inf_quantile(sorted: &[f64], t: f64) -> f64 {
    let b = sorted.len();
    let bf = b as f64;
    let mut i = ((t * bf).ceil() as usize).clamp(1, b);
    while i > 1 && (i - 1) as f64 / bf >= t {
        i -= 1;
    }
    while i < b && (i as f64 / bf) < t {
        i += 1;
    }
    sorted[i - 1]
}

pub fn percentile_ci(theta_tilde: &[f64], draws: &[Vec<f64>], contrast: &[f64], alpha: f64) -> Result<Interval, InferenceError> {
    if draws.is_empty() {
        return Err(InferenceError::EmptyDraws);
    }
    if contrast.len() != theta_tilde.len() {
        return Err(InferenceError::InvalidSpec(format!("contrast has length {}, expected {}", contrast.len(), theta_tilde.len())));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(InferenceError::InvalidSpec(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let dot = |v: &[f64]| -> f64 { v.iter().zip(contrast).map(|(a, b)| a * b).sum() };
    let mut values: Vec<f64> = draws.iter().map(|d| dot(d)).collect();
    values.sort_by(f64::total_cmp);
    let point = dot(theta_tilde);
    let upper_q = inf_quantile(&values, 1.0 - alpha / 2.0);
    let lower_q = inf_quantile(&values, alpha / 2.0);
    Ok(Interval { lower: point - upper_q, upper: point - lower_q, level: 1.0 - alpha, point })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceResult {
    pub plan: DebiasPlan,
    pub estimate: DebiasedEstimate,
    pub bootstrap: BootstrapDraws,
    pub interval: Interval,
}

#[allow(clippy::too_many_arguments)]
pub fn run_inference(data: &Dataset, model: PairwiseModel, spec: &KernelSpec, h: f64, plan: &DebiasPlan, ci: &CiSpec, config: &SolverConfig) -> Result<InferenceResult, InferenceError> {
    ci.validate(data.k())?;
    let mut estimate = debiased_estimate(data, model, spec, h, plan, config)?;
    estimate.regimes = level_regimes(data, spec, &plan.bandwidths(h))?;
    let bootstrap = bootstrap_draws(data, model, spec, h, plan, ci, BootstrapScaling::Rescaled, config)?;
    let interval = percentile_ci(&estimate.theta, &bootstrap.draws, &ci.contrast, ci.alpha)?;
    Ok(InferenceResult { plan: plan.clone(), estimate, bootstrap, interval })
}
