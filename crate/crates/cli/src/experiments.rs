//! Monte Carlo studies: bootstrap coverage, naive-bootstrap variance
//! inflation, bias order, and the variance formula against simulation.
//!
//! Replicate `r` draws its dataset from `stream(seed, [EXPERIMENT, r])` and
//! its bootstrap resamples from `derive_seed(seed, [EXPERIMENT, r])`, so
//! every study is a pure function of its inputs regardless of thread count.

use rayon::prelude::*;
use serde::Serialize;

use pairdiff_core::dgp::{generate, DgpConfig};
use pairdiff_core::inference::{bootstrap_draws_multi, percentile_ci, solve_bandwidths, BootstrapScaling, BootstrapDraws};
use pairdiff_core::jackknife::debias_combine;
use pairdiff_core::objective::{Regime, RegimeDiagnostics};
use pairdiff_core::oracle::{analytic_components_plr, batch_mean, bias_curves, empirical_sampling_variance, variance_formula, BiasCurve, BiasStatus, VarianceKind};
use pairdiff_core::rng;
use pairdiff_core::solver::SolverConfig;
use pairdiff_core::{DebiasPlan, EquivalentKernel, KernelSpec, PairwiseModel};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

impl Verdict {
    pub fn from_bool(ok: bool) -> Self {
        if ok {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }

    /// Fail dominates, then inconclusive.
    pub fn all(items: impl IntoIterator<Item = Verdict>) -> Self {
        items.into_iter().fold(Verdict::Pass, |acc, v| match (acc, v) {
            (Verdict::Fail, _) | (_, Verdict::Fail) => Verdict::Fail,
            (Verdict::Inconclusive, _) | (_, Verdict::Inconclusive) => Verdict::Inconclusive,
            _ => Verdict::Pass,
        })
    }
}

fn in_band(v: f64, band: (f64, f64)) -> bool {
    band.0 <= v && v <= band.1
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sample_var(v: &[f64]) -> f64 {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() as f64 - 1.0)
}

/// Replicate-parallel map with the study failure policy (abort above 5%).
fn run_replicates<T: Send>(reps: usize, f: impl Fn(usize) -> Result<T, String> + Sync) -> Result<(Vec<T>, usize), CliError> {
    let out: Vec<Result<T, String>> = (0..reps).into_par_iter().map(&f).collect();
    let mut ok = Vec::with_capacity(reps);
    let mut first = None;
    for o in out {
        match o {
            Ok(v) => ok.push(v),
            Err(e) => {
                first.get_or_insert(e);
            }
        }
    }
    let failures = reps - ok.len();
    if failures as f64 > 0.05 * reps as f64 {
        return Err(CliError::Numerical(format!("{failures} of {reps} replications failed; first: {}", first.unwrap_or_default())));
    }
    Ok((ok, failures))
}

fn replicate_data(dgp: &DgpConfig, seed: u64, r: usize) -> Result<pairdiff_core::Dataset, String> {
    generate(dgp, &mut rng::stream(seed, &[rng::EXPERIMENT, r as u64])).map_err(|e| e.to_string())
}

/// Debiased estimates for several plans from one solve at the union of
/// their bandwidths.
fn debiased_many(data: &pairdiff_core::Dataset, model: PairwiseModel, spec: &KernelSpec, h: f64, plans: &[DebiasPlan], config: &SolverConfig) -> Result<Vec<Vec<f64>>, String> {
    let mut union: Vec<f64> = Vec::new();
    let slots: Vec<Vec<usize>> = plans
        .iter()
        .map(|p| {
            p.bandwidths(h)
                .into_iter()
                .map(|b| match union.iter().position(|&u| u == b) {
                    Some(i) => i,
                    None => {
                        union.push(b);
                        union.len() - 1
                    }
                })
                .collect()
        })
        .collect();
    let levels = solve_bandwidths(data, model, spec, &union, config).map_err(|e| e.to_string())?;
    plans
        .iter()
        .zip(&slots)
        .map(|(p, s)| {
            let t: Vec<Vec<f64>> = s.iter().map(|&i| levels[i].theta.clone()).collect();
            debias_combine(&t, p).map_err(|e| e.to_string())
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct RegimeSummary {
    pub regime: Regime,
    pub n_hd: f64,
    pub n2_hd: f64,
    pub outside_theory: bool,
    pub bootstrap_bandwidths: Vec<f64>,
}

impl RegimeSummary {
    fn new(n: usize, h: f64, d: usize, bootstrap_bandwidths: Vec<f64>) -> Self {
        let r = RegimeDiagnostics::from_scalars(n, h, d);
        Self { regime: r.regime, n_hd: r.n_hd, n2_hd: r.n2_hd, outside_theory: r.outside_theory, bootstrap_bandwidths }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CoverageStudy {
    pub dgp: DgpConfig,
    pub kernel: KernelSpec,
    pub h: f64,
    pub plans: Vec<DebiasPlan>,
    pub alphas: Vec<f64>,
    pub reps: usize,
    pub replicates: usize,
    pub contrast: Vec<f64>,
    pub seed: u64,
    /// Acceptance band; 3 binomial standard errors around the nominal level when absent.
    pub band: Option<(f64, f64)>,
    pub solver: SolverConfig,
}

#[derive(Debug, Clone, Serialize)]
pub struct CoverageReport {
    pub model: PairwiseModel,
    pub order: usize,
    pub nominal: f64,
    pub reps: usize,
    pub covered: usize,
    pub coverage: f64,
    /// `sqrt(p(1-p)/reps)` at the empirical coverage.
    pub se: f64,
    pub band: (f64, f64),
    pub average_length: f64,
    pub failures: usize,
    pub bootstrap_failures: usize,
    pub regime: RegimeSummary,
    pub verdict: Verdict,
}

pub fn binomial_se(p: f64, reps: usize) -> f64 {
    (p * (1.0 - p) / reps as f64).sqrt()
}

/// Coverage of the rescaled percentile interval. Plans and levels share
/// each replicate's dataset and bootstrap resamples.
pub fn run_coverage(study: &CoverageStudy) -> Result<Vec<CoverageReport>, CliError> {
    let s = study;
    if s.reps == 0 {
        return Err(CliError::Config("coverage needs at least one replication".into()));
    }
    let target = dot(&s.contrast, &s.dgp.theta0);
    let model = s.dgp.model;
    // Per replicate: for each plan, for each level, (covered, length); plus bootstrap failures.
    let (rows, failures) = run_replicates(s.reps, |r| {
        let data = replicate_data(&s.dgp, s.seed, r)?;
        let tilde = debiased_many(&data, model, &s.kernel, s.h, &s.plans, &s.solver)?;
        let boot_seed = rng::derive_seed(s.seed, &[rng::EXPERIMENT, r as u64]);
        let draws = bootstrap_draws_multi(&data, model, &s.kernel, s.h, &s.plans, s.replicates, boot_seed, BootstrapScaling::Rescaled, &s.solver).map_err(|e| e.to_string())?;
        let mut out = Vec::with_capacity(s.plans.len());
        for (t, d) in tilde.iter().zip(&draws) {
            let per_level: Vec<(bool, f64)> = s
                .alphas
                .iter()
                .map(|&a| percentile_ci(t, &d.draws, &s.contrast, a).map(|ci| (ci.contains(target), ci.length())).map_err(|e| e.to_string()))
                .collect::<Result<_, _>>()?;
            out.push(per_level);
        }
        Ok((out, draws.first().map_or(0, |d: &BootstrapDraws| d.failures.len())))
    })?;
    let used = rows.len();
    let boot_failures: usize = rows.iter().map(|r| r.1).sum();
    let mut reports = Vec::new();
    for (p, plan) in s.plans.iter().enumerate() {
        for (l, &alpha) in s.alphas.iter().enumerate() {
            let nominal = 1.0 - alpha;
            let covered = rows.iter().filter(|r| r.0[p][l].0).count();
            let coverage = covered as f64 / used as f64;
            let length = rows.iter().map(|r| r.0[p][l].1).sum::<f64>() / used as f64;
            let band = s.band.unwrap_or_else(|| {
                let e = 3.0 * binomial_se(nominal, used);
                ((nominal - e).max(0.0), (nominal + e).min(1.0))
            });
            let boot_bw: Vec<f64> = plan.bandwidths(s.h).iter().map(|b| BootstrapScaling::Rescaled.factor(s.dgp.d) * b).collect();
            reports.push(CoverageReport {
                model,
                order: plan.order,
                nominal,
                reps: used,
                covered,
                coverage,
                se: binomial_se(coverage, used),
                band,
                average_length: length,
                failures,
                bootstrap_failures: boot_failures,
                regime: RegimeSummary::new(s.dgp.n, s.h, s.dgp.d, boot_bw),
                verdict: Verdict::from_bool(in_band(coverage, band)),
            });
        }
    }
    Ok(reports)
}

#[derive(Debug, Clone, Serialize)]
pub struct InflationStudy {
    pub dgp: DgpConfig,
    pub kernel: KernelSpec,
    pub h: f64,
    pub plan: DebiasPlan,
    pub reps: usize,
    pub replicates: usize,
    pub contrast: Vec<f64>,
    pub seed: u64,
    pub inflated_band: (f64, f64),
    pub scaled_band: (f64, f64),
    pub consistent_band: (f64, f64),
    pub solver: SolverConfig,
}

#[derive(Debug, Clone, Serialize)]
pub struct InflationReport {
    pub h: f64,
    pub regime: RegimeSummary,
    pub reps: usize,
    pub failures: usize,
    /// Monte Carlo variance of `a'θ̃` across datasets.
    pub mc_variance: f64,
    pub mc_variance_se: f64,
    /// Average within-dataset variance of the bootstrap draws.
    pub boot_variance_unscaled: f64,
    pub boot_variance_scaled: f64,
    pub ratio_unscaled: f64,
    pub ratio_scaled: f64,
    /// `a'V̄*a / a'V̄a` from the closed-form components.
    pub formula_ratio: Option<f64>,
    /// Which band the unscaled ratio was held to.
    pub unscaled_band: (f64, f64),
    pub scaled_band: (f64, f64),
    pub verdict: Verdict,
}

pub fn run_boot_inflation(study: &InflationStudy) -> Result<InflationReport, CliError> {
    let s = study;
    if s.reps < 20 || s.replicates < 2 {
        return Err(CliError::Config("boot-inflation needs at least 20 replications and 2 bootstrap draws".into()));
    }
    let model = s.dgp.model;
    let plans = std::slice::from_ref(&s.plan);
    let (rows, failures) = run_replicates(s.reps, |r| {
        let data = replicate_data(&s.dgp, s.seed, r)?;
        let tilde = debiased_many(&data, model, &s.kernel, s.h, plans, &s.solver)?.remove(0);
        let boot_seed = rng::derive_seed(s.seed, &[rng::EXPERIMENT, r as u64]);
        let var_of = |scaling| -> Result<f64, String> {
            let d = bootstrap_draws_multi(&data, model, &s.kernel, s.h, plans, s.replicates, boot_seed, scaling, &s.solver).map_err(|e| e.to_string())?.remove(0);
            Ok(sample_var(&d.draws.iter().map(|v| dot(v, &s.contrast)).collect::<Vec<_>>()))
        };
        Ok((dot(&tilde, &s.contrast), var_of(BootstrapScaling::Unscaled)?, var_of(BootstrapScaling::Rescaled)?))
    })?;
    let point: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let mc_variance = sample_var(&point);
    let m = point.iter().sum::<f64>() / point.len() as f64;
    let (_, sq_se) = batch_mean(&point.iter().map(|p| (p - m).powi(2)).collect::<Vec<_>>());
    let mc_variance_se = sq_se * point.len() as f64 / (point.len() as f64 - 1.0);
    let boot_variance_unscaled = rows.iter().map(|r| r.1).sum::<f64>() / rows.len() as f64;
    let boot_variance_scaled = rows.iter().map(|r| r.2).sum::<f64>() / rows.len() as f64;
    let ratio_unscaled = boot_variance_unscaled / mc_variance;
    let ratio_scaled = boot_variance_scaled / mc_variance;

    let formula_ratio = if model == PairwiseModel::Plr {
        let comp = analytic_components_plr(&s.dgp, &s.kernel)?;
        let ek = EquivalentKernel::new(s.kernel, s.plan.c.clone(), s.plan.lambdas.clone()).map_err(|e| CliError::Config(e.to_string()))?;
        let quad = |kind| -> Result<f64, CliError> {
            let v = variance_formula(&comp, s.dgp.n, s.h, s.dgp.d, kind, &ek)?;
            Ok(s.contrast.iter().enumerate().map(|(i, a)| a * dot(&v[i], &s.contrast)).sum())
        };
        Some(quad(VarianceKind::VBarStar)? / quad(VarianceKind::VBar)?)
    } else {
        None
    };
    let regime = RegimeSummary::new(s.dgp.n, s.h, s.dgp.d, s.plan.bandwidths(s.h).iter().map(|b| BootstrapScaling::Rescaled.factor(s.dgp.d) * b).collect());
    let unscaled_band = match regime.regime {
        Regime::Linear => s.consistent_band,
        Regime::SmallBandwidth => s.inflated_band,
        Regime::Intermediate => (f64::NEG_INFINITY, f64::INFINITY),
    };
    let verdict = if regime.regime == Regime::Intermediate {
        Verdict::Inconclusive
    } else {
        Verdict::from_bool(in_band(ratio_unscaled, unscaled_band) && in_band(ratio_scaled, s.scaled_band))
    };
    Ok(InflationReport {
        h: s.h,
        regime,
        reps: rows.len(),
        failures,
        mc_variance,
        mc_variance_se,
        boot_variance_unscaled,
        boot_variance_scaled,
        ratio_unscaled,
        ratio_scaled,
        formula_ratio,
        unscaled_band,
        scaled_band: s.scaled_band,
        verdict,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct BiasOrderStudy {
    pub dgp: DgpConfig,
    pub kernel: KernelSpec,
    pub plans: Vec<DebiasPlan>,
    pub grid: Vec<f64>,
    pub reps: usize,
    pub seed: u64,
    pub solver: SolverConfig,
}

#[derive(Debug, Clone, Serialize)]
pub struct BiasOrderReport {
    pub curve: BiasCurve,
    /// `2 + L`, the leading surviving bias power.
    pub expected_slope: f64,
    /// `expected * [0.8, 1.2]`
    pub band: (f64, f64),
    pub verdict: Verdict,
}

/// Slope bands are ±20% of `L + 2`. More than two non-qualifying grid
/// points make the verdict inconclusive.
pub fn run_bias_order(study: &BiasOrderStudy) -> Result<Vec<BiasOrderReport>, CliError> {
    let s = study;
    let curves = bias_curves(&s.dgp, &s.kernel, &s.plans, &s.grid, s.reps, s.seed, &s.solver)?;
    Ok(curves
        .into_iter()
        .map(|curve| {
            let expected_slope = 2.0 + curve.order as f64;
            let band = (0.8 * expected_slope, 1.2 * expected_slope);
            let missing = curve.h.len() - curve.qualifying_count();
            let verdict = match (curve.status, curve.slope) {
                (BiasStatus::Fitted, Some(slope)) if missing <= 2 => Verdict::from_bool(in_band(slope, band)),
                _ => Verdict::Inconclusive,
            };
            BiasOrderReport { curve, expected_slope, band, verdict }
        })
        .collect())
}

#[derive(Debug, Clone, Serialize)]
pub struct VarianceMatchStudy {
    pub dgp: DgpConfig,
    pub kernel: KernelSpec,
    pub bandwidths: Vec<f64>,
    pub plan: DebiasPlan,
    pub reps: usize,
    pub seed: u64,
    pub band: (f64, f64),
    pub solver: SolverConfig,
}

#[derive(Debug, Clone, Serialize)]
pub struct VarianceMatchRow {
    pub h: f64,
    pub regime: RegimeSummary,
    pub formula: Vec<f64>,
    pub empirical: Vec<f64>,
    pub empirical_se: Vec<f64>,
    pub ratio: Vec<f64>,
    pub failures: usize,
    pub verdict: Verdict,
}

/// Diagonal of the formula (`V` when `L = 0`, else `V̄`) against the Monte
/// Carlo variance of the estimator at each bandwidth.
pub fn run_variance_match(study: &VarianceMatchStudy) -> Result<Vec<VarianceMatchRow>, CliError> {
    let s = study;
    let comp = analytic_components_plr(&s.dgp, &s.kernel)?;
    let ek = EquivalentKernel::new(s.kernel, s.plan.c.clone(), s.plan.lambdas.clone()).map_err(|e| CliError::Config(e.to_string()))?;
    let kind = if s.plan.order == 0 { VarianceKind::V } else { VarianceKind::VBar };
    s.bandwidths
        .iter()
        .map(|&h| {
            let v = variance_formula(&comp, s.dgp.n, h, s.dgp.d, kind, &ek)?;
            let emp = empirical_sampling_variance(&s.dgp, &s.kernel, h, &s.plan, s.reps, s.seed, &s.solver)?;
            let k = s.dgp.k;
            let formula: Vec<f64> = (0..k).map(|i| v[i][i]).collect();
            let empirical: Vec<f64> = (0..k).map(|i| emp.cov[i][i]).collect();
            let empirical_se: Vec<f64> = (0..k).map(|i| emp.cov_se[i][i]).collect();
            let ratio: Vec<f64> = empirical.iter().zip(&formula).map(|(e, f)| e / f).collect();
            let verdict = Verdict::from_bool(ratio.iter().all(|r| in_band(*r, s.band)));
            Ok(VarianceMatchRow { h, regime: RegimeSummary::new(s.dgp.n, h, s.dgp.d, Vec::new()), formula, empirical, empirical_se, ratio, failures: emp.failures, verdict })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use pairdiff_core::dgp::GammaShape;

    fn small_dgp(model: PairwiseModel, n: usize) -> DgpConfig {
        let mut d = DgpConfig::new(model, n, 2, 1);
        d.gamma = GammaShape::Quadratic;
        d
    }

    #[test]
    fn coverage_report_is_consistent() {
        let study = CoverageStudy {
            dgp: small_dgp(PairwiseModel::Plr, 60),
            kernel: KernelSpec::gaussian(1),
            h: 0.4,
            plans: vec![DebiasPlan::undebiased(), DebiasPlan::with_default_multipliers(2).unwrap()],
            alphas: vec![0.05, 0.5],
            reps: 30,
            replicates: 49,
            contrast: vec![1.0, 0.0],
            seed: 3,
            band: None,
            solver: SolverConfig::default(),
        };
        let reports = run_coverage(&study).unwrap();
        assert_eq!(reports.len(), 4);
        for r in &reports {
            assert!((0.0..=1.0).contains(&r.coverage));
            assert_eq!(r.se, (r.coverage * (1.0 - r.coverage) / r.reps as f64).sqrt());
            assert_eq!(r.coverage, r.covered as f64 / r.reps as f64);
        }
        assert!(reports[0].average_length > reports[1].average_length);
        let again = run_coverage(&study).unwrap();
        assert_eq!(serde_json::to_string(&reports).unwrap(), serde_json::to_string(&again).unwrap());
    }

    #[test]
    fn verdict_combination() {
        assert_eq!(Verdict::all([Verdict::Pass, Verdict::Inconclusive]), Verdict::Inconclusive);
        assert_eq!(Verdict::all([Verdict::Fail, Verdict::Inconclusive]), Verdict::Fail);
        assert_eq!(Verdict::all([]), Verdict::Pass);
    }

    #[test]
    fn inflation_needs_enough_reps() {
        let study = InflationStudy {
            dgp: small_dgp(PairwiseModel::Plr, 40),
            kernel: KernelSpec::gaussian(1),
            h: 0.02,
            plan: DebiasPlan::undebiased(),
            reps: 10,
            replicates: 10,
            contrast: vec![1.0, 0.0],
            seed: 0,
            inflated_band: (2.0, 4.0),
            scaled_band: (0.7, 1.4),
            consistent_band: (0.8, 1.3),
            solver: SolverConfig::default(),
        };
        assert!(matches!(run_boot_inflation(&study), Err(CliError::Config(_))));
    }
}
