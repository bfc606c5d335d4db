//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Set `PAIRDIFF_ACCEPT=1,4,10` to run a subset.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::Rng;
use serde_json::Value;

use pairdiff_cli::experiments::{
    run_bias_order, run_boot_inflation, run_coverage, run_variance_match, BiasOrderStudy, CoverageStudy, InflationStudy, VarianceMatchStudy, Verdict,
};
use pairdiff_core::dgp::{DgpConfig, GammaShape, WDesign};
use pairdiff_core::kernel::{kernel_moment, multi_indices, QuadratureConfig};
use pairdiff_core::models::PairwiseModel;
use pairdiff_core::objective::{objective_value, pairwise_weights};
use pairdiff_core::rng::stream;
use pairdiff_core::solver::{estimate, solve_plr_closed_form, solve_smooth, InitRule, SolverConfig};
use pairdiff_core::{Dataset, DebiasPlan, EquivalentKernel, KernelFamily, KernelSpec};

type Outcome = Result<String, String>;

const SEED: u64 = 20_240_611;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn rel(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let norm = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    diff / norm.max(1e-300)
}

fn family(i: u32) -> KernelFamily {
    [KernelFamily::Gaussian, KernelFamily::Epanechnikov, KernelFamily::Uniform][i as usize % 3]
}

fn jackknife_weights() -> Outcome {
    let mut rng = stream(SEED, &[1]);
    let (mut worst_sum, mut worst_moment) = (0.0f64, 0.0f64);
    for order in [0usize, 2, 4] {
        let mut drawn = 0;
        while drawn < 1000 {
            let mut c: Vec<f64> = vec![1.0];
            c.extend((0..order / 2).map(|_| rng.random_range(0.5..3.0)));
            if c.iter().enumerate().any(|(i, a)| c[i + 1..].iter().any(|b| (a - b).abs() < 0.05)) {
                continue;
            }
            drawn += 1;
            let plan = DebiasPlan::new(order, c.clone()).map_err(|e| e.to_string())?;
            worst_sum = worst_sum.max((plan.lambdas.iter().sum::<f64>() - 1.0).abs());
            for m in 1..=order / 2 {
                let s: f64 = plan.lambdas.iter().zip(&c).map(|(l, c)| l * c.powi(2 * m as i32)).sum();
                worst_moment = worst_moment.max(s.abs());
            }
        }
    }
    let fixed = DebiasPlan::new(2, vec![1.0, 2.0]).map_err(|e| e.to_string())?;
    let fixed_err = (fixed.lambdas[0] - 4.0 / 3.0).abs().max((fixed.lambdas[1] + 1.0 / 3.0).abs());
    check(
        worst_sum <= 1e-12 && worst_moment <= 1e-10 && fixed_err <= 1e-14,
        format!("max |sum-1| {worst_sum:.1e}, max |moment| {worst_moment:.1e}, c=(1,2) error {fixed_err:.1e}"),
    )
}

fn equivalent_kernel_order() -> Outcome {
    let mut notes = Vec::new();
    let mut ok = true;
    for fam in [KernelFamily::Gaussian, KernelFamily::Epanechnikov] {
        for d in [1usize, 2] {
            for order in [2usize, 4] {
                let plan = DebiasPlan::with_default_multipliers(order).map_err(|e| e.to_string())?;
                let ek = EquivalentKernel::new(KernelSpec::new(fam, d).map_err(|e| e.to_string())?, plan.c.clone(), plan.lambdas.clone()).map_err(|e| e.to_string())?;
                let quad = QuadratureConfig::for_dim(d);
                let (mut mass, mut low, mut lead) = (0.0, 0.0f64, 0.0f64);
                for o in 0..=order as u32 + 2 {
                    for alpha in multi_indices(d, o) {
                        let m = kernel_moment(&ek, &alpha, &quad).map_err(|e| format!("{fam} d={d} L={order} {alpha:?}: {e}"))?.value;
                        match o {
                            0 => mass = m,
                            o if o <= order as u32 + 1 => low = low.max(m.abs()),
                            _ => lead = lead.max(m.abs()),
                        }
                    }
                }
                let case_ok = (mass - 1.0).abs() <= 1e-6 && low <= 1e-6 && lead > 1e-3;
                ok &= case_ok;
                if !case_ok {
                    notes.push(format!("{fam} d={d} L={order}: mass {mass}, low {low:.1e}, lead {lead:.3e}"));
                }
            }
        }
    }
    check(ok, if ok { "8 cases: mass 1, vanishing moments through L+1, nonzero at L+2".into() } else { notes.join("; ") })
}

fn random_plr(rng: &mut impl Rng, seed: u64) -> (Dataset, KernelSpec, f64) {
    let n = rng.random_range(20..=200);
    let k = rng.random_range(1..=3);
    let d = rng.random_range(1..=2);
    let mut dgp = DgpConfig::new(PairwiseModel::Plr, n, k, d);
    dgp.seed = seed;
    let spec = KernelSpec::new(family(rng.random_range(0..3)), d).unwrap();
    let h = rng.random_range(0.6..1.5);
    (dgp.generate_seeded().unwrap(), spec, h)
}

fn plr_closed_form() -> Outcome {
    let mut rng = stream(SEED, &[3]);
    let (mut worst_theta, mut worst_obj) = (0.0f64, 0.0f64);
    let (mut solved, mut newton_steps) = (0, 0);
    let mut seed = 0;
    while solved < 200 {
        seed += 1;
        let (data, spec, h) = random_plr(&mut rng, seed);
        let weights = pairwise_weights(&data, &spec, h).map_err(|e| e.to_string())?;
        if weights.is_degenerate() {
            continue;
        }
        let closed = solve_plr_closed_form(&weights, &data).map_err(|e| e.to_string())?;
        let from_zero = SolverConfig { init: InitRule::Zero, ..SolverConfig::default() };
        let generic = solve_smooth(&weights, PairwiseModel::Plr, &data, &from_zero).map_err(|e| e.to_string())?;
        newton_steps += generic.iterations;
        worst_theta = worst_theta.max(rel(&generic.theta, &closed.theta));

        let n = data.n();
        let mut brute = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                let u: Vec<f64> = data.w(i).iter().zip(data.w(j)).map(|(a, b)| a - b).collect();
                let kh = spec.scaled_eval(&u, h).unwrap();
                let idx: f64 = data.x(i).iter().zip(data.x(j)).zip(&closed.theta).map(|((a, b), t)| (a - b) * t).sum();
                brute += kh * 0.5 * (data.y(i) - data.y(j) - idx).powi(2);
            }
        }
        brute /= (n * (n - 1) / 2) as f64;
        let lib = objective_value(&weights, PairwiseModel::Plr, &data, &closed.theta).map_err(|e| e.to_string())?;
        worst_obj = worst_obj.max((lib - brute).abs() / brute.abs());
        solved += 1;
    }
    check(worst_theta <= 1e-6 && worst_obj <= 1e-12, format!("200 instances ({newton_steps} Newton steps from zero): max theta rel gap {worst_theta:.1e}, max objective rel gap {worst_obj:.1e}"))
}

fn probe_pair(rng: &mut impl Rng, model: PairwiseModel, k: usize) -> ([f64; 2], Vec<Vec<f64>>, Vec<f64>) {
    let y = |rng: &mut dyn rand::RngCore| -> f64 {
        match model {
            PairwiseModel::Pll => f64::from(rng.random_bool(0.5) as u8),
            PairwiseModel::Plt => rng.random_range(-1.0f64..3.0).max(0.0),
            PairwiseModel::Plr => rng.random_range(-3.0..3.0),
        }
    };
    let ys = [y(rng), y(rng)];
    let xs = (0..2).map(|_| (0..k).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
    let theta = (0..k).map(|_| rng.random_range(-2.0..2.0)).collect();
    (ys, xs, theta)
}

fn pair_loss_at(model: PairwiseModel, ys: [f64; 2], xs: &[Vec<f64>], theta: &[f64]) -> f64 {
    let u: f64 = xs[0].iter().zip(&xs[1]).zip(theta).map(|((a, b), t)| (a - b) * t).sum();
    model.pair_loss(ys[0], ys[1], u)
}

fn score_at(model: PairwiseModel, ys: [f64; 2], xs: &[Vec<f64>], theta: &[f64]) -> Vec<f64> {
    use pairdiff_core::data::Observation;
    let a = Observation::new(ys[0], xs[0].clone(), vec![0.0]);
    let b = Observation::new(ys[1], xs[1].clone(), vec![0.0]);
    model.score(a.view(), b.view(), theta).unwrap()
}

fn score_correctness() -> Outcome {
    let mut rng = stream(SEED, &[4]);
    let mut worst_smooth = 0.0f64;
    for model in [PairwiseModel::Plr, PairwiseModel::Pll] {
        for _ in 0..10_000 {
            let k = rng.random_range(1..=3);
            let (ys, xs, theta) = probe_pair(&mut rng, model, k);
            let g = score_at(model, ys, &xs, &theta);
            for j in 0..k {
                let e = 1e-5;
                let mut tp = theta.clone();
                let mut tm = theta.clone();
                tp[j] += e;
                tm[j] -= e;
                let fd = (pair_loss_at(model, ys, &xs, &tp) - pair_loss_at(model, ys, &xs, &tm)) / (2.0 * e);
                worst_smooth = worst_smooth.max((fd - g[j]).abs());
            }
        }
    }
    let (mut worst_ineq, mut worst_fd) = (0.0f64, 0.0f64);
    let mut smooth_points = 0;
    for _ in 0..10_000 {
        let k = rng.random_range(1..=3);
        let (ys, xs, theta) = probe_pair(&mut rng, PairwiseModel::Plt, k);
        let g = score_at(PairwiseModel::Plt, ys, &xs, &theta);
        let f0 = pair_loss_at(PairwiseModel::Plt, ys, &xs, &theta);
        let other: Vec<f64> = (0..k).map(|_| rng.random_range(-3.0..3.0)).collect();
        let lin: f64 = g.iter().zip(other.iter().zip(&theta)).map(|(s, (a, b))| s * (a - b)).sum();
        worst_ineq = worst_ineq.max(f0 + lin - pair_loss_at(PairwiseModel::Plt, ys, &xs, &other));

        let e = 1e-6;
        let dx: Vec<f64> = xs[0].iter().zip(&xs[1]).map(|(a, b)| a - b).collect();
        let u: f64 = dx.iter().zip(&theta).map(|(a, t)| a * t).sum();
        let reach = 2.0 * e * dx.iter().map(|v| v.abs()).sum::<f64>();
        let smooth = PairwiseModel::Plt.kink(ys[0], ys[1]).is_none_or(|kink| (u - kink.at).abs() > reach);
        if smooth {
            smooth_points += 1;
            for j in 0..k {
                let mut tp = theta.clone();
                let mut tm = theta.clone();
                tp[j] += e;
                tm[j] -= e;
                let fd = (pair_loss_at(PairwiseModel::Plt, ys, &xs, &tp) - pair_loss_at(PairwiseModel::Plt, ys, &xs, &tm)) / (2.0 * e);
                worst_fd = worst_fd.max((fd - g[j]).abs());
            }
        }
    }
    check(
        worst_smooth <= 1e-7 && worst_ineq <= 1e-12 && worst_fd <= 1e-8,
        format!("PLR/PLL max FD gap {worst_smooth:.1e}; PLT max inequality violation {worst_ineq:.1e}, max FD gap {worst_fd:.1e} at {smooth_points} smooth points"),
    )
}

/// `C(n,2)⁻¹ Σ K_h (|Δy - u| - |Δy|)`-type objective, written out from the
/// four censoring cases.
fn plt_objective(data: &Dataset, h: f64, theta: f64) -> f64 {
    let spec = KernelSpec::gaussian(1);
    let n = data.n();
    let mut total = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let kh = spec.scaled_eval(&[data.w(i)[0] - data.w(j)[0]], h).unwrap();
            let u = (data.x(i)[0] - data.x(j)[0]) * theta;
            let (yi, yj) = (data.y(i), data.y(j));
            let m = if yi > 0.0 && yj > 0.0 {
                (yi - yj - u).abs() - (yi - yj).abs()
            } else if yi > 0.0 {
                (yi - u).max(0.0) - yi
            } else if yj > 0.0 {
                (yj + u).max(0.0) - yj
            } else {
                0.0
            };
            total += kh * m;
        }
    }
    total / (n * (n - 1) / 2) as f64
}

fn plt_enumeration() -> Outcome {
    let mut rng = stream(SEED, &[5]);
    let h = 1.0;
    let (mut checked, mut unbounded, mut worst) = (0, 0, 0.0f64);
    let mut seed = 0;
    while checked < 100 {
        seed += 1;
        let mut dgp = DgpConfig::new(PairwiseModel::Plt, rng.random_range(3..=6), 1, 1);
        dgp.seed = seed;
        let data = dgp.generate_seeded().unwrap();
        let n = data.n();
        let mut breaks = Vec::new();
        let (mut slope_lo, mut slope_hi) = (0.0, 0.0);
        for i in 0..n {
            for j in i + 1..n {
                let dx = data.x(i)[0] - data.x(j)[0];
                let (yi, yj) = (data.y(i), data.y(j));
                let at = match (yi > 0.0, yj > 0.0) {
                    (true, true) => Some(yi - yj),
                    (true, false) => Some(yi),
                    (false, true) => Some(-yj),
                    (false, false) => None,
                };
                if let (Some(at), true) = (at, dx != 0.0) {
                    breaks.push(at / dx);
                    let w = KernelSpec::gaussian(1).scaled_eval(&[data.w(i)[0] - data.w(j)[0]], h).unwrap();
                    // slopes of m(dx θ) in θ as θ → ±∞
                    let (left, right) = match (yi > 0.0, yj > 0.0) {
                        (true, true) => (-1.0, 1.0),
                        (true, false) => (-1.0, 0.0),
                        _ => (0.0, 1.0),
                    };
                    let (s_lo, s_hi) = if dx > 0.0 { (left * dx, right * dx) } else { (right * dx, left * dx) };
                    slope_lo += w * s_lo;
                    slope_hi += w * s_hi;
                }
            }
        }
        let solved = estimate(&data, PairwiseModel::Plt, &KernelSpec::gaussian(1), h, &SolverConfig::default());
        if breaks.is_empty() || slope_lo > -1e-12 || slope_hi < 1e-12 {
            // Objective flat or unbounded in some direction: the minimum is
            // not attained at a unique breakpoint set; the solver must not
            // claim an interior optimum with a lower value than any breakpoint.
            if slope_lo > 1e-12 || slope_hi < -1e-12 {
                unbounded += 1;
                if solved.is_ok() {
                    return Err(format!("instance {seed}: objective unbounded below but solver returned a minimum"));
                }
            }
            continue;
        }
        let best = breaks.iter().map(|&b| plt_objective(&data, h, b)).fold(f64::INFINITY, f64::min);
        let est = solved.map_err(|e| format!("instance {seed}: {e}"))?;
        let got = plt_objective(&data, h, est.theta[0]);
        worst = worst.max((got - best).abs());
        checked += 1;
    }
    check(worst <= 1e-8, format!("100 bounded instances, max objective gap {worst:.1e}; {unbounded} unbounded instances rejected by the solver"))
}

fn bias_dgp() -> DgpConfig {
    let mut dgp = DgpConfig::new(PairwiseModel::Plr, 4000, 2, 1);
    dgp.gamma = GammaShape::Sine;
    dgp.w_design = WDesign::Gaussian { mean: 6.0, sd: 6.0 };
    dgp.x_loading = 0.15;
    dgp.noise_scale = 0.1;
    dgp
}

fn bias_order() -> Outcome {
    let study = BiasOrderStudy {
        dgp: bias_dgp(),
        kernel: KernelSpec::gaussian(1),
        plans: vec![DebiasPlan::undebiased(), DebiasPlan::with_default_multipliers(2).unwrap()],
        grid: vec![1.6, 1.13, 0.8, 0.57, 0.4],
        reps: 400,
        seed: SEED,
        solver: SolverConfig::default(),
    };
    let reports = run_bias_order(&study).map_err(|e| e.to_string())?;
    let text: Vec<String> = reports
        .iter()
        .map(|r| format!("L={} slope {} band [{:.1}, {:.1}] ({}/{} points > 3 SE)", r.curve.order, r.curve.slope.map_or("none".into(), |s| format!("{s:.3}")), r.band.0, r.band.1, r.curve.qualifying_count(), r.curve.h.len()))
        .collect();
    check(reports.iter().all(|r| r.verdict == Verdict::Pass), text.join("; "))
}

/// Kernel-window occupancy scales with `n h f(w)`, so each leg uses the
/// covariate spread that puts it in its regime: wide at `nh = 1`, unit at
/// `nh = 50`.
fn inflation() -> Outcome {
    let n = 200;
    let study = |h: f64, sd: f64| {
        let mut dgp = DgpConfig::new(PairwiseModel::Plr, n, 2, 1);
        dgp.w_design = WDesign::Gaussian { mean: 0.0, sd };
        InflationStudy {
            dgp,
            kernel: KernelSpec::gaussian(1),
            h,
            plan: DebiasPlan::undebiased(),
            reps: 400,
            replicates: 400,
            contrast: vec![1.0, 0.0],
            seed: SEED,
            inflated_band: (2.0, 4.0),
            scaled_band: (0.7, 1.4),
            consistent_band: (0.8, 1.3),
            solver: SolverConfig::default(),
        }
    };
    let small = run_boot_inflation(&study(1.0 / n as f64, 4.0)).map_err(|e| e.to_string())?;
    let large = run_boot_inflation(&study(50.0 / n as f64, 1.0)).map_err(|e| e.to_string())?;
    let ok = (2.0..=4.0).contains(&small.ratio_unscaled) && (0.7..=1.4).contains(&small.ratio_scaled) && (0.8..=1.3).contains(&large.ratio_unscaled);
    check(
        ok,
        format!(
            "nh=1: unscaled {:.3} (formula {:.3}), rescaled {:.3}; nh=50: unscaled {:.3} (formula {:.3})",
            small.ratio_unscaled,
            small.formula_ratio.unwrap_or(f64::NAN),
            small.ratio_scaled,
            large.ratio_unscaled,
            large.formula_ratio.unwrap_or(f64::NAN)
        ),
    )
}

fn coverage() -> Outcome {
    let n = 300;
    let h = (n as f64).powf(-1.0 / 3.0);
    let base = |model, kernel, plans, alphas, reps, band| CoverageStudy {
        dgp: DgpConfig::new(model, n, 2, 1),
        kernel,
        h,
        plans,
        alphas,
        reps,
        replicates: 299,
        contrast: vec![1.0, 0.0],
        seed: SEED,
        band,
        solver: SolverConfig::default(),
    };
    let plr = base(PairwiseModel::Plr, KernelSpec::gaussian(1), vec![DebiasPlan::undebiased(), DebiasPlan::with_default_multipliers(2).unwrap()], vec![0.05, 0.2], 500, None);
    let mut reports = run_coverage(&plr).map_err(|e| e.to_string())?;
    let epan = KernelSpec::new(KernelFamily::Epanechnikov, 1).unwrap();
    for model in [PairwiseModel::Pll, PairwiseModel::Plt] {
        reports.extend(run_coverage(&base(model, epan, vec![DebiasPlan::undebiased()], vec![0.05], 200, Some((0.90, 0.99)))).map_err(|e| e.to_string())?);
    }
    let text: Vec<String> = reports.iter().map(|r| format!("{} L={} {:.2}: {:.3} in [{:.3}, {:.3}]", r.model, r.order, r.nominal, r.coverage, r.band.0, r.band.1)).collect();
    check(reports.iter().all(|r| r.verdict == Verdict::Pass), text.join("; "))
}

fn variance_formula() -> Outcome {
    let n = 500;
    let study = VarianceMatchStudy {
        dgp: DgpConfig::new(PairwiseModel::Plr, n, 2, 1),
        kernel: KernelSpec::gaussian(1),
        bandwidths: vec![50.0 / n as f64, 2.0 / n as f64],
        plan: DebiasPlan::undebiased(),
        reps: 1000,
        seed: SEED,
        band: (0.7, 1.4),
        solver: SolverConfig::default(),
    };
    let rows = run_variance_match(&study).map_err(|e| e.to_string())?;
    let text: Vec<String> = rows.iter().map(|r| format!("nh={}: ratios {:?}", r.regime.n_hd, r.ratio.iter().map(|v| (v * 1000.0).round() / 1000.0).collect::<Vec<_>>())).collect();
    check(rows.iter().all(|r| r.verdict == Verdict::Pass), text.join("; "))
}

fn determinism() -> Outcome {
    let threads_max = std::thread::available_parallelism().map_or(8, |n| n.get()).max(8).to_string();
    let runs: Vec<Vec<&str>> = vec![
        vec!["estimate", "--data", "data/demo_plr.csv", "--h", "0.4", "--L", "2"],
        vec!["estimate", "--model", "plt", "--set", "dgp.n=80", "--h", "0.5"],
        vec!["estimate", "--model", "pll", "--set", "dgp.n=80", "--h", "0.5", "--verbose"],
        vec!["bootstrap-ci", "--data", "data/demo_plr.csv", "--h", "0.4", "--B", "60", "--seed", "7", "--verbose"],
        vec!["bootstrap-ci", "--model", "plt", "--set", "dgp.n=60", "--h", "0.6", "--B", "30"],
        vec!["validate", "bias-order", "--set", "dgp.n=150", "--reps", "20", "--set", "validate.grid=1.2,0.8,0.5"],
        vec!["validate", "variance-match", "--set", "dgp.n=60", "--reps", "100"],
        vec!["validate", "boot-inflation", "--set", "dgp.n=60", "--reps", "20", "--B", "20"],
        vec!["validate", "coverage", "--set", "dgp.n=60", "--reps", "12", "--B", "19", "--L", "2"],
        vec!["validate", "coverage", "--model", "pll", "--set", "dgp.n=60", "--reps", "8", "--B", "19"],
        vec!["kernel-check", "--kernel", "epanechnikov", "--L", "4", "--set", "kernel.d=2"],
    ];
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let manifest = env!("CARGO_MANIFEST_DIR");
    let mut compared = 0;
    for (i, args) in runs.iter().enumerate() {
        let mut outputs = Vec::new();
        for (tag, threads) in [("a", "1"), ("b", threads_max.as_str())] {
            let json = dir.path().join(format!("run{i}{tag}.json"));
            let out = Command::new(env!("CARGO_BIN_EXE_pairdiff"))
                .current_dir(manifest)
                .args(args)
                .args(["--out", json.to_str().unwrap()])
                .env("PAIRDIFF_THREADS", threads)
                .output()
                .map_err(|e| e.to_string())?;
            if !out.status.success() {
                return Err(format!("`{}` failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr)));
            }
            let csv = json.with_extension("csv");
            outputs.push((std::fs::read(&json).map_err(|e| e.to_string())?, Path::new(&csv).exists().then(|| std::fs::read(&csv).unwrap())));
        }
        if outputs[0] != outputs[1] {
            return Err(format!("`{}` differs between 1 and {threads_max} workers", args.join(" ")));
        }
        let doc: Value = serde_json::from_slice(&outputs[0].0).map_err(|e| e.to_string())?;
        if doc.get("config").is_none() {
            return Err(format!("`{}` output lacks the resolved config", args.join(" ")));
        }
        compared += 1 + usize::from(outputs[0].1.is_some());
    }
    Ok(format!("{} commands, {compared} files byte-identical at 1 and {threads_max} workers", runs.len()))
}

fn main() {
    let criteria: [(u32, &str, fn() -> Outcome); 10] = [
        (1, "jackknife weights", jackknife_weights),
        (2, "equivalent-kernel order", equivalent_kernel_order),
        (3, "PLR closed form vs generic solver", plr_closed_form),
        (4, "score correctness", score_correctness),
        (5, "PLT solver vs breakpoint enumeration", plt_enumeration),
        (6, "bias order", bias_order),
        (7, "bootstrap inflation factor", inflation),
        (8, "bootstrap coverage", coverage),
        (9, "variance formula", variance_formula),
        (10, "determinism", determinism),
    ];
    let only: Option<Vec<u32>> = std::env::var("PAIRDIFF_ACCEPT").ok().map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let mut failed = 0;
    for (id, name, run) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let start = Instant::now();
        let outcome = run();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {id:>2} {name}: {detail} [{secs:.1}s]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {id:>2} {name}: {detail} [{secs:.1}s]");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
