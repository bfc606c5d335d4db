//! Command execution. Each command maps a resolved [`RunConfig`] to a JSON
//! document and, for the validation commands and `kernel-check`, a table.

use serde::Serialize;
use serde_json::{json, Value};

use pairdiff_core::inference::{debiased_estimate, level_regimes, run_inference, CiSpec};
use pairdiff_core::kernel::{kernel_moment, multi_indices, QuadratureConfig};
use pairdiff_core::solver::{EstimateRecord, SolverConfig};
use pairdiff_core::{Dataset, DebiasPlan, EquivalentKernel, PairwiseModel};

use crate::config::{DataSource, RunConfig};
use crate::error::CliError;
use crate::experiments::{
    run_bias_order, run_boot_inflation, run_coverage, run_variance_match, BiasOrderStudy, CoverageStudy, InflationStudy, Verdict, VarianceMatchStudy,
};
use crate::ingest::ingest_csv;
use crate::output::{num, opt_num, to_value, Table};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Estimate,
    BootstrapCi,
    BiasOrder,
    VarianceMatch,
    BootInflation,
    Coverage,
    KernelCheck,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Estimate => "estimate",
            Command::BootstrapCi => "bootstrap-ci",
            Command::BiasOrder => "validate bias-order",
            Command::VarianceMatch => "validate variance-match",
            Command::BootInflation => "validate boot-inflation",
            Command::Coverage => "validate coverage",
            Command::KernelCheck => "kernel-check",
        }
    }

    /// Whether the command needs an explicit data source.
    pub fn needs_data(self) -> bool {
        matches!(self, Command::Estimate | Command::BootstrapCi)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Output {
    pub json: Value,
    pub table: Option<Table>,
}

pub const DEFAULT_BIAS_GRID: [f64; 5] = [1.6, 1.13, 0.8, 0.57, 0.4];

pub fn execute(cmd: Command, cfg: &RunConfig) -> Result<Output, CliError> {
    let (result, table, verdict) = match cmd {
        Command::Estimate => (estimate(cfg)?, None, None),
        Command::BootstrapCi => (bootstrap_ci(cfg)?, None, None),
        Command::BiasOrder => with_table(bias_order(cfg)?),
        Command::VarianceMatch => with_table(variance_match(cfg)?),
        Command::BootInflation => with_table(boot_inflation(cfg)?),
        Command::Coverage => with_table(coverage(cfg)?),
        Command::KernelCheck => with_table(kernel_check(cfg)?),
    };
    let mut doc = json!({ "command": cmd.name(), "config": to_value(cfg), "result": result });
    if let Some(v) = verdict {
        doc["verdict"] = to_value(&v);
    }
    Ok(Output { json: doc, table })
}

fn with_table((v, t, verdict): (Value, Table, Verdict)) -> (Value, Option<Table>, Option<Verdict>) {
    (v, Some(t), Some(verdict))
}

fn load(cfg: &RunConfig) -> Result<Dataset, CliError> {
    match &cfg.source {
        DataSource::File { path } => ingest_csv(path),
        DataSource::Dgp(dgp) => dgp.generate_seeded().map_err(|e| CliError::Config(e.to_string())),
    }
}

fn check_contrast(contrast: &[f64], k: usize) -> Result<(), CliError> {
    if contrast.len() != k {
        return Err(CliError::Config(format!("contrast has {} entries, the data have k = {k}", contrast.len())));
    }
    Ok(())
}

#[derive(Serialize)]
struct LevelSummary {
    bandwidth: f64,
    theta: Vec<f64>,
    objective: f64,
    iterations: usize,
    usable_pairs: usize,
    fell_back: bool,
}

fn levels_value(levels: &[EstimateRecord], verbose: bool) -> Value {
    if verbose {
        return to_value(&levels);
    }
    to_value(
        &levels
            .iter()
            .map(|r| LevelSummary { bandwidth: r.bandwidth, theta: r.theta.clone(), objective: r.objective, iterations: r.iterations, usable_pairs: r.usable_pairs, fell_back: r.fell_back })
            .collect::<Vec<_>>(),
    )
}

fn data_shape(data: &Dataset) -> Value {
    json!({ "n": data.n(), "k": data.k(), "d": data.d() })
}

fn estimate(cfg: &RunConfig) -> Result<Value, CliError> {
    let data = load(cfg)?;
    let h = cfg.bandwidth.resolve(data.n());
    let spec = cfg.kernel_spec(data.d())?;
    let plan = cfg.plan();
    let mut est = debiased_estimate(&data, cfg.model, &spec, h, &plan, &SolverConfig::default())?;
    est.regimes = level_regimes(&data, &spec, &plan.bandwidths(h))?;
    Ok(json!({
        "data": data_shape(&data),
        "h": h,
        "plan": to_value(&plan),
        "theta": est.theta,
        "levels": levels_value(&est.levels, cfg.verbose),
        "regimes": to_value(&est.regimes),
    }))
}

fn bootstrap_ci(cfg: &RunConfig) -> Result<Value, CliError> {
    let data = load(cfg)?;
    let h = cfg.bandwidth.resolve(data.n());
    let spec = cfg.kernel_spec(data.d())?;
    let plan = cfg.plan();
    let contrast = cfg.contrast(data.k());
    check_contrast(&contrast, data.k())?;
    let ci = CiSpec { contrast, alpha: cfg.bootstrap.alpha, replicates: cfg.bootstrap.replicates, seed: cfg.seed };
    let res = run_inference(&data, cfg.model, &spec, h, &plan, &ci, &SolverConfig::default())?;
    let b = &res.bootstrap;
    let mut boot = json!({
        "scaling": to_value(&b.scaling),
        "bandwidths": b.bandwidths,
        "center": b.center,
        "replicates": ci.replicates,
        "successful": b.draws.len(),
        "failures": to_value(&b.failures),
    });
    if cfg.verbose {
        boot["center_levels"] = to_value(&b.center_levels);
        boot["draws"] = to_value(&b.draws);
    }
    Ok(json!({
        "data": data_shape(&data),
        "h": h,
        "plan": to_value(&plan),
        "theta": res.estimate.theta,
        "levels": levels_value(&res.estimate.levels, cfg.verbose),
        "regimes": to_value(&res.estimate.regimes),
        "contrast": ci.contrast,
        "interval": to_value(&res.interval),
        "bootstrap": boot,
    }))
}

fn plan_for(cfg: &RunConfig, order: usize) -> Result<DebiasPlan, CliError> {
    if order == cfg.order {
        Ok(cfg.plan())
    } else {
        DebiasPlan::with_default_multipliers(order).map_err(|e| CliError::Config(e.to_string()))
    }
}

fn plans(cfg: &RunConfig, default: &[usize]) -> Result<Vec<DebiasPlan>, CliError> {
    let orders = cfg.validate.orders.clone().unwrap_or_else(|| default.to_vec());
    if orders.is_empty() {
        return Err(CliError::Config("validate.orders is empty".into()));
    }
    orders.iter().map(|&o| plan_for(cfg, o)).collect()
}

fn per_n(n: usize, d: usize, nhd: f64) -> f64 {
    (nhd / n as f64).powf(1.0 / d as f64)
}

type Validation = (Value, Table, Verdict);

fn bias_order(cfg: &RunConfig) -> Result<Validation, CliError> {
    let dgp = cfg.dgp()?.clone();
    if dgp.model != PairwiseModel::Plr {
        return Err(CliError::Config("bias-order needs the plr model".into()));
    }
    let study = BiasOrderStudy {
        kernel: cfg.kernel_spec(dgp.d)?,
        plans: plans(cfg, &[0, 2])?,
        grid: cfg.validate.grid.clone().unwrap_or_else(|| DEFAULT_BIAS_GRID.to_vec()),
        reps: cfg.validate.reps.unwrap_or(200),
        seed: cfg.seed,
        solver: SolverConfig::default(),
        dgp,
    };
    let reports = run_bias_order(&study)?;
    let k = study.dgp.k;
    let mut header = vec!["order".to_string(), "h".into()];
    header.extend((1..=k).map(|i| format!("bias_{i}")));
    header.extend((1..=k).map(|i| format!("se_{i}")));
    header.push("qualifying".into());
    let mut table = Table::new(header);
    for r in &reports {
        let c = &r.curve;
        for (i, h) in c.h.iter().enumerate() {
            let mut row = vec![c.order.to_string(), num(*h)];
            row.extend(c.bias[i].iter().map(|v| num(*v)));
            row.extend(c.se[i].iter().map(|v| num(*v)));
            row.push(c.qualifying[i].to_string());
            table.push(row);
        }
    }
    let verdict = Verdict::all(reports.iter().map(|r| r.verdict));
    Ok((to_value(&reports), table, verdict))
}

fn variance_match(cfg: &RunConfig) -> Result<Validation, CliError> {
    let dgp = cfg.dgp()?.clone();
    if dgp.model != PairwiseModel::Plr {
        return Err(CliError::Config("variance-match needs the plr model".into()));
    }
    let study = VarianceMatchStudy {
        kernel: cfg.kernel_spec(dgp.d)?,
        bandwidths: cfg.validate.bandwidths.clone().unwrap_or_else(|| vec![per_n(dgp.n, dgp.d, 50.0), per_n(dgp.n, dgp.d, 2.0)]),
        plan: cfg.plan(),
        reps: cfg.validate.reps.unwrap_or(1000),
        seed: cfg.seed,
        band: cfg.validate.ratio_band,
        solver: SolverConfig::default(),
        dgp,
    };
    let rows = run_variance_match(&study)?;
    let mut table = Table::new(["h", "n_hd", "coordinate", "formula", "empirical", "empirical_se", "ratio", "verdict"]);
    for r in &rows {
        for i in 0..r.formula.len() {
            table.push(vec![num(r.h), num(r.regime.n_hd), (i + 1).to_string(), num(r.formula[i]), num(r.empirical[i]), num(r.empirical_se[i]), num(r.ratio[i]), verdict_str(r.verdict)]);
        }
    }
    let verdict = Verdict::all(rows.iter().map(|r| r.verdict));
    Ok((to_value(&rows), table, verdict))
}

fn verdict_str(v: Verdict) -> String {
    to_value(&v).as_str().unwrap_or_default().to_owned()
}

fn boot_inflation(cfg: &RunConfig) -> Result<Validation, CliError> {
    let dgp = cfg.dgp()?.clone();
    let contrast = cfg.contrast(dgp.k);
    check_contrast(&contrast, dgp.k)?;
    let bandwidths = cfg.validate.bandwidths.clone().unwrap_or_else(|| vec![per_n(dgp.n, dgp.d, 1.0), per_n(dgp.n, dgp.d, 50.0)]);
    let mut reports = Vec::new();
    for h in bandwidths {
        let study = InflationStudy {
            dgp: dgp.clone(),
            kernel: cfg.kernel_spec(dgp.d)?,
            h,
            plan: cfg.plan(),
            reps: cfg.validate.reps.unwrap_or(400),
            replicates: cfg.bootstrap.replicates,
            contrast: contrast.clone(),
            seed: cfg.seed,
            inflated_band: cfg.validate.inflated_band,
            scaled_band: cfg.validate.scaled_band,
            consistent_band: cfg.validate.consistent_band,
            solver: SolverConfig::default(),
        };
        reports.push(run_boot_inflation(&study)?);
    }
    let mut table = Table::new(["h", "n_hd", "regime", "mc_variance", "boot_variance_unscaled", "boot_variance_scaled", "ratio_unscaled", "ratio_scaled", "formula_ratio", "verdict"]);
    for r in &reports {
        table.push(vec![
            num(r.h),
            num(r.regime.n_hd),
            to_value(&r.regime.regime).as_str().unwrap_or_default().to_owned(),
            num(r.mc_variance),
            num(r.boot_variance_unscaled),
            num(r.boot_variance_scaled),
            num(r.ratio_unscaled),
            num(r.ratio_scaled),
            opt_num(r.formula_ratio),
            verdict_str(r.verdict),
        ]);
    }
    let verdict = Verdict::all(reports.iter().map(|r| r.verdict));
    Ok((to_value(&reports), table, verdict))
}

fn coverage(cfg: &RunConfig) -> Result<Validation, CliError> {
    let dgp = cfg.dgp()?.clone();
    let contrast = cfg.contrast(dgp.k);
    check_contrast(&contrast, dgp.k)?;
    let study = CoverageStudy {
        kernel: cfg.kernel_spec(dgp.d)?,
        h: cfg.bandwidth.resolve(dgp.n),
        plans: plans(cfg, &[cfg.order])?,
        alphas: cfg.validate.alphas.clone().unwrap_or_else(|| vec![cfg.bootstrap.alpha]),
        reps: cfg.validate.reps.unwrap_or(500),
        replicates: cfg.bootstrap.replicates,
        contrast,
        seed: cfg.seed,
        band: cfg.validate.coverage_band,
        solver: SolverConfig::default(),
        dgp,
    };
    if study.alphas.iter().any(|a| !(*a > 0.0 && *a < 1.0)) {
        return Err(CliError::Config("validate.alphas must lie in (0, 1)".into()));
    }
    let reports = run_coverage(&study)?;
    let mut table = Table::new(["model", "order", "nominal", "coverage", "se", "covered", "reps", "average_length", "band_lo", "band_hi", "failures", "verdict"]);
    for r in &reports {
        table.push(vec![
            r.model.to_string(),
            r.order.to_string(),
            num(r.nominal),
            num(r.coverage),
            num(r.se),
            r.covered.to_string(),
            r.reps.to_string(),
            num(r.average_length),
            num(r.band.0),
            num(r.band.1),
            r.failures.to_string(),
            verdict_str(r.verdict),
        ]);
    }
    let verdict = Verdict::all(reports.iter().map(|r| r.verdict));
    Ok((to_value(&reports), table, verdict))
}

pub const MOMENT_TOLERANCE: f64 = 1e-6;
pub const LEADING_MOMENT_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, Serialize)]
struct MomentRow {
    alpha: Vec<u32>,
    order: u32,
    value: f64,
    error_estimate: f64,
    expected: Option<f64>,
    ok: bool,
}

/// Moments of the equivalent kernel through `|α| = L + 2`: unit mass,
/// vanishing moments below `L + 2`, and some nonvanishing moment at `L + 2`.
fn kernel_check(cfg: &RunConfig) -> Result<Validation, CliError> {
    let d = cfg.kernel_dim.unwrap_or(1);
    let base = cfg.kernel_spec(d)?;
    let plan = cfg.plan();
    let ek = EquivalentKernel::new(base, plan.c.clone(), plan.lambdas.clone()).map_err(|e| CliError::Config(e.to_string()))?;
    let top = plan.order as u32 + 2;
    let quad = QuadratureConfig::for_dim(d);
    let mut rows = Vec::new();
    for order in 0..=top {
        for alpha in multi_indices(d, order) {
            let m = kernel_moment(&ek, &alpha, &quad).map_err(|e| CliError::Numerical(e.to_string()))?;
            let expected = match order {
                0 => Some(1.0),
                o if o < top => Some(0.0),
                _ => None,
            };
            let ok = expected.is_none_or(|e| (m.value - e).abs() <= MOMENT_TOLERANCE);
            rows.push(MomentRow { alpha, order, value: m.value, error_estimate: m.error_estimate, expected, ok });
        }
    }
    let leading = rows.iter().filter(|r| r.order == top).fold(0.0_f64, |acc, r| acc.max(r.value.abs()));
    let verdict = Verdict::from_bool(rows.iter().all(|r| r.ok) && leading > LEADING_MOMENT_FLOOR);
    let mut table = Table::new(["alpha", "order", "value", "error_estimate", "expected", "ok"]);
    for r in &rows {
        let alpha: Vec<String> = r.alpha.iter().map(u32::to_string).collect();
        table.push(vec![alpha.join(";"), r.order.to_string(), num(r.value), num(r.error_estimate), opt_num(r.expected), r.ok.to_string()]);
    }
    let value = json!({
        "dimension": d,
        "kernel_order": top,
        "multipliers": plan.c,
        "lambdas": plan.lambdas,
        "leading_moment": leading,
        "squared_integral": ek.squared_integral(),
        "moments": to_value(&rows),
    });
    Ok((value, table, verdict))
}
