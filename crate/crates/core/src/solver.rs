//! Approximate minimizers of the pairwise objective.
//!
//! * PLR: weighted pairwise least squares in closed form.
//! * Smooth losses: damped Newton with Armijo backtracking; gradient descent
//!   when the Hessian is numerically singular.
//! * Piecewise-linear losses: Polyak-step subgradient descent with iterate
//!   averaging, then steepest descent along the minimum-norm element of the
//!   near-active subdifferential with an exact breakpoint line search, and a
//!   final probe of nearby kink vertices.
//!
//! Every solve is single-threaded and deterministic.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Dataset;
use crate::kernel::{check_bandwidth, gaussian_exponent, gaussian_weight, KernelFamily, KernelSpec};
use crate::models::{PairwiseModel, Smoothness};
use crate::objective::{pair_count, pairwise_weights, Objective, ObjectiveError, PairWeights, RowSumVec};

/// Gram/Hessian condition numbers above this are treated as singular.
pub const CONDITION_LIMIT: f64 = 1e12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error("no usable pairs at bandwidth {bandwidth}: every kernel weight is zero")]
    NoUsablePairs { bandwidth: f64 },
    #[error("Gram matrix is singular or ill-conditioned (condition {condition:.3e}); degenerate direction {direction:?}")]
    IllConditioned { condition: f64, direction: Vec<f64> },
    #[error("no convergence after {iterations} iterations (gradient norm {gradient_norm:.3e})")]
    Nonconvergence { iterations: usize, gradient_norm: f64 },
    #[error("pairwise data are separated along {direction:?}: the minimum is at infinity")]
    Separation { direction: Vec<f64> },
    #[error("objective decreases without bound along {direction:?}")]
    UnboundedBelow { direction: Vec<f64> },
    #[error("the {strategy} strategy does not apply to the {model} model")]
    WrongStrategy { model: PairwiseModel, strategy: &'static str },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverPath {
    ClosedForm,
    Newton,
    GradientDescent,
    Breakpoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitRule {
    /// The better of the PLR closed form and zero.
    PlrClosedForm,
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Objective slack; `None` means `min(1e-10, 0.01/n²)`.
    pub slack: Option<f64>,
    pub grad_tol: f64,
    pub max_iter: usize,
    pub subgradient_iter: usize,
    pub armijo: f64,
    pub backtrack: f64,
    pub init: InitRule,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { slack: None, grad_tol: 1e-12, max_iter: 500, subgradient_iter: 0, armijo: 1e-4, backtrack: 0.5, init: InitRule::PlrClosedForm }
    }
}

impl SolverConfig {
    pub fn slack_for(&self, n: usize) -> f64 {
        self.slack.unwrap_or_else(|| default_slack(n))
    }
}

pub fn default_slack(n: usize) -> f64 {
    let n = n as f64;
    (0.01 / (n * n)).min(1e-10)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateRecord {
    pub theta: Vec<f64>,
    pub bandwidth: f64,
    pub objective: f64,
    pub initial_objective: f64,
    pub gradient_norm: f64,
    pub iterations: usize,
    pub path: SolverPath,
    pub condition_number: Option<f64>,
    pub usable_pairs: usize,
    pub fell_back: bool,
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Sufficient statistics of the weighted pairwise least-squares problem,
/// accumulated as `Σ w f` over pair features
/// `f = (upper triangle of dx dx', dx dy, dy²)`.
struct PlrMoments {
    acc: RowSumVec,
    k: usize,
    usable: usize,
}

fn feature_len(k: usize) -> usize {
    k * (k + 1) / 2 + k + 1
}

#[inline]
fn pair_features(xi: &[f64], xj: &[f64], dy: f64, dx: &mut [f64], out: &mut [f64]) {
    for ((d, s), t) in dx.iter_mut().zip(xi).zip(xj) {
        *d = s - t;
    }
    let mut o = 0;
    for (a, &da) in dx.iter().enumerate() {
        for &db in &dx[a..] {
            out[o] = da * db;
            o += 1;
        }
    }
    for &da in dx.iter() {
        out[o] = da * dy;
        o += 1;
    }
    out[o] = dy * dy;
}

impl PlrMoments {
    fn new(k: usize) -> Self {
        Self { acc: RowSumVec::new(feature_len(k)), k, usable: 0 }
    }

    #[inline]
    fn add(&mut self, features: &[f64], w: f64) {
        self.usable += 1;
        for (r, f) in self.acc.row_mut().iter_mut().zip(features) {
            *r += w * f;
        }
    }

    fn end_row(&mut self) {
        self.acc.end_row();
    }

    fn finish(self, norm: f64, bandwidth: f64) -> Result<EstimateRecord, SolverError> {
        let k = self.k;
        if self.usable == 0 {
            return Err(SolverError::NoUsablePairs { bandwidth });
        }
        let sums: Vec<f64> = self.acc.values().into_iter().map(|v| v * norm).collect();
        let mut gram = vec![0.0; k * k];
        let mut o = 0;
        for a in 0..k {
            for b in a..k {
                gram[a * k + b] = sums[o];
                gram[b * k + a] = sums[o];
                o += 1;
            }
        }
        let rhs = sums[o..o + k].to_vec();
        let yy = sums[o + k];
        let (theta, condition) = solve_spd(&gram, &rhs, k)?;
        let grad: Vec<f64> = (0..k).map(|a| (0..k).map(|b| gram[a * k + b] * theta[b]).sum::<f64>() - rhs[a]).collect();
        let quad: f64 = (0..k).map(|a| theta[a] * (0..k).map(|b| gram[a * k + b] * theta[b]).sum::<f64>()).sum();
        let lin: f64 = theta.iter().zip(&rhs).map(|(t, r)| t * r).sum();
        Ok(EstimateRecord {
            theta,
            bandwidth,
            objective: (0.5 * (yy - 2.0 * lin + quad)).max(0.0),
            initial_objective: 0.5 * yy,
            gradient_norm: max_abs(&grad),
            iterations: 0,
            path: SolverPath::ClosedForm,
            condition_number: Some(condition),
            usable_pairs: self.usable,
            fell_back: false,
        })
    }
}

/// Solves `A x = b` for symmetric positive definite `A`, refusing
/// ill-conditioned systems and naming the weakest direction.
fn solve_spd(a: &[f64], b: &[f64], k: usize) -> Result<(Vec<f64>, f64), SolverError> {
    let m = DMatrix::from_row_slice(k, k, a);
    let eig = SymmetricEigen::new(m.clone());
    let (mut lo, mut hi, mut lo_idx) = (f64::INFINITY, 0.0f64, 0);
    for (i, &v) in eig.eigenvalues.iter().enumerate() {
        if v < lo {
            lo = v;
            lo_idx = i;
        }
        hi = hi.max(v.abs());
    }
    let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if !(condition <= CONDITION_LIMIT) {
        let direction = eig.eigenvectors.column(lo_idx).iter().copied().collect();
        return Err(SolverError::IllConditioned { condition, direction });
    }
    let chol = m.clone().cholesky().ok_or_else(|| SolverError::IllConditioned {
        condition,
        direction: eig.eigenvectors.column(lo_idx).iter().copied().collect(),
    })?;
    let rhs = DVector::from_column_slice(b);
    let mut x = chol.solve(&rhs);
    let residual = &rhs - &m * &x;
    x += chol.solve(&residual);
    Ok((x.iter().copied().collect(), condition))
}

pub fn solve_plr_closed_form(weights: &PairWeights, data: &Dataset) -> Result<EstimateRecord, SolverError> {
    if weights.n() != data.n() {
        return Err(ObjectiveError::WeightsMismatch { weights: weights.n(), data: data.n() }.into());
    }
    let k = data.k();
    let mut mom = PlrMoments::new(k);
    let mut dx = vec![0.0; k];
    let mut feats = vec![0.0; feature_len(k)];
    let mut current = None;
    for p in weights.pairs() {
        if p.weight == 0.0 {
            continue;
        }
        if current != Some(p.i) {
            mom.end_row();
            current = Some(p.i);
        }
        let (i, j) = (p.i as usize, p.j as usize);
        pair_features(data.x(i), data.x(j), data.y(i) - data.y(j), &mut dx, &mut feats);
        mom.add(&feats, p.weight);
    }
    let mut rec = mom.finish(weights.normalization(), weights.bandwidth())?;
    // The quadratic-form objective loses digits to cancellation; recompute directly.
    rec.objective = crate::objective::objective_value(weights, PairwiseModel::Plr, data, &rec.theta)?;
    Ok(rec)
}

/// Closed-form PLR estimates at several bandwidths in one pass over the
/// pairs, without storing pair weights. Per-bandwidth results match
/// [`solve_plr_closed_form`] up to the objective value, which is reported in
/// its quadratic form.
pub fn plr_closed_form_ladder(data: &Dataset, spec: &KernelSpec, bandwidths: &[f64]) -> Result<Vec<Result<EstimateRecord, SolverError>>, SolverError> {
    for &h in bandwidths {
        check_bandwidth(h).map_err(ObjectiveError::from)?;
    }
    if spec.dim != data.d() {
        return Err(ObjectiveError::KernelDimension { kernel: spec.dim, data: data.d() }.into());
    }
    let (n, k) = (data.n(), data.k());
    let scales: Vec<f64> = bandwidths.iter().map(|&h| spec.pair_scale(h)).collect();
    let mut moms: Vec<PlrMoments> = bandwidths.iter().map(|_| PlrMoments::new(k)).collect();
    let exponents: Vec<f64> = bandwidths.iter().map(|&h| gaussian_exponent(h)).collect();
    let gaussian = spec.family == KernelFamily::Gaussian;
    let mut dx = vec![0.0; k];
    let mut feats = vec![0.0; feature_len(k)];
    for i in 0..n {
        let (wi, xi, yi) = (data.w(i), data.x(i), data.y(i));
        for j in i + 1..n {
            let wj = data.w(j);
            let sq = if gaussian { KernelSpec::sq_dist(wi, wj) } else { 0.0 };
            let mut ready = false;
            for (l, &h) in bandwidths.iter().enumerate() {
                let weight = if gaussian { gaussian_weight(sq, exponents[l], scales[l]) } else { spec.scaled_diff_eval(wi, wj, h, scales[l]) };
                if weight == 0.0 {
                    continue;
                }
                if !ready {
                    pair_features(xi, data.x(j), yi - data.y(j), &mut dx, &mut feats);
                    ready = true;
                }
                moms[l].add(&feats, weight);
            }
        }
        for m in moms.iter_mut() {
            m.end_row();
        }
    }
    let norm = 1.0 / pair_count(n) as f64;
    Ok(moms.into_iter().zip(bandwidths).map(|(m, &h)| m.finish(norm, h)).collect())
}

/// The starting point: PLR closed form when it exists and beats zero.
fn initial_point(weights: &PairWeights, data: &Dataset, table: &Objective, rule: InitRule) -> (Vec<f64>, f64) {
    let zero = vec![0.0; data.k()];
    let f0 = table.value(&zero).unwrap_or(f64::INFINITY);
    if rule == InitRule::Zero {
        return (zero, f0);
    }
    match solve_plr_closed_form(weights, data) {
        Ok(rec) => {
            let f = table.value(&rec.theta).unwrap_or(f64::INFINITY);
            if f <= f0 {
                (rec.theta, f)
            } else {
                (zero, f0)
            }
        }
        Err(_) => (zero, f0),
    }
}

pub fn solve_smooth(weights: &PairWeights, model: PairwiseModel, data: &Dataset, config: &SolverConfig) -> Result<EstimateRecord, SolverError> {
    if model.smoothness() == Smoothness::PiecewiseLinear {
        return Err(SolverError::WrongStrategy { model, strategy: "smooth" });
    }
    let table = Objective::new(weights, model, data)?;
    if table.is_empty() {
        return Err(SolverError::NoUsablePairs { bandwidth: weights.bandwidth() });
    }
    let k = data.k();
    let slack = config.slack_for(data.n());
    let (mut theta, f_init) = initial_point(weights, data, &table, config.init);
    let mut f = f_init;
    let mut u = Vec::with_capacity(table.len());
    let mut trial_u = Vec::with_capacity(table.len());
    let mut fell_back = false;
    let mut condition = None;
    let mut grad_norm = f64::INFINITY;
    for iter in 0..config.max_iter {
        table.indices(&theta, &mut u);
        if model == PairwiseModel::Pll && separated(&table, &u) {
            return Err(SolverError::Separation { direction: unit(&theta) });
        }
        let g = table.subgradient_at_indices(&u);
        grad_norm = max_abs(&g);
        if grad_norm <= config.grad_tol {
            return Ok(record(theta, weights, f, f_init, grad_norm, iter, fell_back, condition, &table));
        }
        let hess = table.hessian_at_indices(&u);
        let neg: Vec<f64> = g.iter().map(|v| -v).collect();
        let (step, newton) = match solve_spd(&hess, &neg, k) {
            Ok((p, c)) => {
                condition = Some(c);
                (p, true)
            }
            Err(_) => {
                fell_back = true;
                (neg, false)
            }
        };
        let slope: f64 = g.iter().zip(&step).map(|(a, b)| a * b).sum();
        if !(slope < 0.0) {
            return Ok(record(theta, weights, f, f_init, grad_norm, iter, fell_back, condition, &table));
        }
        let (theta_new, f_new) = armijo(&table, &theta, f, &step, slope, config, &mut trial_u);
        let progressed = f_new < f;
        if progressed {
            theta = theta_new;
            f = f_new;
        }
        // Newton decrement: f - inf f ≈ -slope/2 near the minimum.
        if (newton && -slope / 2.0 <= 0.1 * slack) || !progressed {
            return Ok(record(theta, weights, f, f_init, grad_norm, iter + 1, fell_back, condition, &table));
        }
        if max_abs(&theta) > 1e8 {
            return Err(SolverError::Separation { direction: unit(&theta) });
        }
    }
    Err(SolverError::Nonconvergence { iterations: config.max_iter, gradient_norm: grad_norm })
}

fn unit(v: &[f64]) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter().map(|x| x / norm).collect()
    } else {
        v.to_vec()
    }
}

/// True when every contributing logit pair is classified with a strict margin.
fn separated(table: &Objective, u: &[f64]) -> bool {
    (0..table.len()).all(|p| {
        let (a, b) = table.outcomes(p);
        (a - b) * u[p] > 0.0
    })
}

fn armijo(table: &Objective, theta: &[f64], f: f64, step: &[f64], slope: f64, config: &SolverConfig, u: &mut Vec<f64>) -> (Vec<f64>, f64) {
    let mut t = 1.0;
    let mut trial = theta.to_vec();
    for _ in 0..80 {
        for (x, (a, s)) in trial.iter_mut().zip(theta.iter().zip(step)) {
            *x = a + t * s;
        }
        table.indices(&trial, u);
        let ft = table.value_at_indices(u);
        if ft <= f + config.armijo * t * slope {
            return (trial, ft);
        }
        t *= config.backtrack;
    }
    (theta.to_vec(), f)
}

#[allow(clippy::too_many_arguments)]
fn record(theta: Vec<f64>, weights: &PairWeights, f: f64, f_init: f64, grad_norm: f64, iterations: usize, fell_back: bool, condition: Option<f64>, table: &Objective) -> EstimateRecord {
    EstimateRecord {
        theta,
        bandwidth: weights.bandwidth(),
        objective: f,
        initial_objective: f_init,
        gradient_norm: grad_norm,
        iterations,
        path: if fell_back { SolverPath::GradientDescent } else { SolverPath::Newton },
        condition_number: condition,
        usable_pairs: table.len(),
        fell_back,
    }
}

/// One pair's kink and one-sided slopes along the index.
#[derive(Debug, Clone, Copy)]
struct PairKink {
    at: f64,
    left: f64,
    right: f64,
}

struct Polyhedral<'a> {
    table: &'a Objective,
    kinks: Vec<Option<PairKink>>,
    smooth: bool,
}

impl<'a> Polyhedral<'a> {
    fn new(table: &'a Objective) -> Self {
        let model = table.model();
        let kinks = (0..table.len())
            .map(|p| {
                let (a, b) = table.outcomes(p);
                model.kink(a, b).map(|k| PairKink { at: k.at, left: k.left_slope, right: k.right_slope })
            })
            .collect();
        Self { table, kinks, smooth: model.smoothness() != Smoothness::PiecewiseLinear }
    }

    fn active_tol(at: f64) -> f64 {
        1e-9 * (1.0 + at.abs())
    }

    /// Slope of pair `p` when its index moves from `u` in direction `sign(v)`.
    #[inline]
    fn one_sided(&self, p: usize, u: f64, v: f64) -> f64 {
        match self.kinks[p] {
            Some(kink) => {
                if v > 0.0 {
                    if u < kink.at {
                        kink.left
                    } else {
                        kink.right
                    }
                } else if u > kink.at {
                    kink.right
                } else {
                    kink.left
                }
            }
            None => {
                let (a, b) = self.table.outcomes(p);
                self.table.model().pair_slope(a, b, u)
            }
        }
    }

    /// Minimum-norm element of the subdifferential with near-active kinks
    /// opened up to their full slope interval.
    fn min_norm_subgradient(&self, u: &[f64]) -> Vec<f64> {
        let table = self.table;
        let k = table.k();
        let norm = table.normalization();
        let mut active = Vec::new();
        let mut base = table.weighted_dx_sum(|p| {
            if let Some(kink) = self.kinks[p] {
                if (u[p] - kink.at).abs() <= Self::active_tol(kink.at) {
                    active.push(p);
                    return 0.0;
                }
            }
            let (a, b) = table.outcomes(p);
            table.model().pair_slope(a, b, u[p]) * table.weight(p)
        });
        if active.is_empty() {
            return base;
        }
        let cols: Vec<Vec<f64>> = active.iter().map(|&p| table.dx(p).iter().map(|v| v * table.weight(p) * norm).collect()).collect();
        let bounds: Vec<(f64, f64)> = active.iter().map(|&p| self.kinks[p].map(|k| (k.left, k.right)).unwrap()).collect();
        let col_sq: Vec<f64> = cols.iter().map(|c| c.iter().map(|v| v * v).sum()).collect();
        let mut t: Vec<f64> = bounds.iter().map(|(lo, hi)| 0.5 * (lo + hi)).collect();
        for (c, &tc) in cols.iter().zip(&t) {
            for a in 0..k {
                base[a] += c[a] * tc;
            }
        }
        let mut r = base;
        for _ in 0..2000 {
            let mut change: f64 = 0.0;
            for (m, c) in cols.iter().enumerate() {
                if col_sq[m] == 0.0 {
                    continue;
                }
                let dot: f64 = c.iter().zip(&r).map(|(x, y)| x * y).sum();
                let target = (t[m] - dot / col_sq[m]).clamp(bounds[m].0, bounds[m].1);
                let delta = target - t[m];
                if delta != 0.0 {
                    for a in 0..k {
                        r[a] += c[a] * delta;
                    }
                    t[m] = target;
                    change = change.max(delta.abs());
                }
            }
            if change <= 1e-15 {
                break;
            }
        }
        r
    }

    /// Right derivative of `t ↦ F(θ + t d)` at 0, plus the breakpoints ahead.
    /// Initial slope along `v`, the slope jumps ahead, and the slope scale `Σ w|v|`.
    fn ray(&self, u: &[f64], v: &[f64]) -> (f64, Vec<(f64, f64)>, f64) {
        let table = self.table;
        let norm = table.normalization();
        let mut breaks = Vec::new();
        let slope = table.sum_by_rows(|p| {
            if v[p] == 0.0 {
                return 0.0;
            }
            if let Some(kink) = self.kinks[p] {
                let t = (kink.at - u[p]) / v[p];
                if t > 0.0 {
                    breaks.push((t, table.weight(p) * norm * v[p].abs() * (kink.right - kink.left)));
                }
            }
            table.weight(p) * v[p] * self.one_sided(p, u[p], v[p])
        });
        let scale = table.sum_by_rows(|p| table.weight(p) * v[p].abs());
        (slope, breaks, scale)
    }

    fn line_search_piecewise(&self, u: &[f64], v: &[f64], direction: &[f64]) -> Result<Option<f64>, SolverError> {
        let (slope, mut breaks, scale) = self.ray(u, v);
        let flat = 1e-12 * scale;
        if !(slope < -flat) {
            return Ok(None);
        }
        breaks.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut s = slope;
        for (t, jump) in breaks {
            s += jump;
            if s >= -flat {
                return Ok(Some(t));
            }
        }
        Err(SolverError::UnboundedBelow { direction: unit(direction) })
    }

    fn derivative_along(&self, u: &[f64], v: &[f64], t: f64) -> f64 {
        let table = self.table;
        let model = table.model();
        table.sum_by_rows(|p| {
            let (a, b) = table.outcomes(p);
            table.weight(p) * v[p] * model.pair_slope(a, b, u[p] + t * v[p])
        })
    }

    fn line_search_smooth(&self, u: &[f64], v: &[f64], direction: &[f64]) -> Result<Option<f64>, SolverError> {
        if !(self.derivative_along(u, v, 0.0) < 0.0) {
            return Ok(None);
        }
        let mut lo = 0.0;
        let mut hi = 1.0;
        let mut grown = 0;
        while self.derivative_along(u, v, hi) < 0.0 {
            lo = hi;
            hi *= 2.0;
            grown += 1;
            if grown > 200 {
                return Err(SolverError::UnboundedBelow { direction: unit(direction) });
            }
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.derivative_along(u, v, mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(Some(if lo > 0.0 { lo } else { hi }))
    }
}

fn project(table: &Objective, d: &[f64]) -> Vec<f64> {
    let mut v = Vec::with_capacity(table.len());
    table.indices(d, &mut v);
    v
}

pub fn solve_nonsmooth(weights: &PairWeights, model: PairwiseModel, data: &Dataset, config: &SolverConfig) -> Result<EstimateRecord, SolverError> {
    let table = Objective::new(weights, model, data)?;
    if table.is_empty() {
        return Err(SolverError::NoUsablePairs { bandwidth: weights.bandwidth() });
    }
    let k = data.k();
    let slack = config.slack_for(data.n());
    let poly = Polyhedral::new(&table);
    let (start, f_init) = initial_point(weights, data, &table, config.init);
    let mut u = Vec::with_capacity(table.len());

    // Phase 1: Polyak-step subgradient descent with iterate averaging.
    let mut theta = start.clone();
    let mut best = (start.clone(), f_init);
    let mut avg = vec![0.0; k];
    let g0 = table.subgradient(&start)?;
    let delta0 = 0.01 * max_abs(&g0) * (1.0 + max_abs(&start));
    for it in 1..=config.subgradient_iter {
        table.indices(&theta, &mut u);
        let f = table.value_at_indices(&u);
        if f < best.1 {
            best = (theta.clone(), f);
        }
        let g = table.subgradient_at_indices(&u);
        let gg: f64 = g.iter().map(|v| v * v).sum();
        if gg == 0.0 {
            break;
        }
        let step = (f - best.1 + delta0 / (it as f64).sqrt()) / gg;
        for (x, gv) in theta.iter_mut().zip(&g) {
            *x -= step * gv;
        }
        for (a, x) in avg.iter_mut().zip(&theta) {
            *a += (x - *a) / it as f64;
        }
    }
    if config.subgradient_iter > 0 {
        let fa = table.value(&avg)?;
        if fa < best.1 {
            best = (avg, fa);
        }
    }
    let (mut theta, mut f) = best;

    // Phase 2: steepest descent on the polyhedral structure, then vertex probes.
    let mut iterations = config.subgradient_iter;
    let mut gnorm;
    let mut restarts = 0;
    loop {
        loop {
            iterations += 1;
            table.indices(&theta, &mut u);
            let g = poly.min_norm_subgradient(&u);
            gnorm = max_abs(&g);
            if gnorm <= config.grad_tol || iterations > config.max_iter + config.subgradient_iter {
                break;
            }
            let mut moved = false;
            let mut candidates: Vec<Vec<f64>> = vec![g.iter().map(|v| -v).collect()];
            for a in 0..k {
                for sign in [1.0, -1.0] {
                    let mut e = vec![0.0; k];
                    e[a] = sign;
                    candidates.push(e);
                }
            }
            for d in candidates {
                let v = project(&table, &d);
                let step = if poly.smooth { poly.line_search_smooth(&u, &v, &d)? } else { poly.line_search_piecewise(&u, &v, &d)? };
                if let Some(t) = step {
                    let trial: Vec<f64> = theta.iter().zip(&d).map(|(x, s)| x + t * s).collect();
                    let ft = table.value(&trial)?;
                    if ft < f {
                        let gain = f - ft;
                        theta = trial;
                        f = ft;
                        moved = gain > 0.0;
                        break;
                    }
                }
            }
            if !moved {
                break;
            }
        }
        if poly.smooth || restarts >= 20 {
            break;
        }
        match best_vertex(&poly, &theta, &u) {
            Some((vertex, fv)) if fv < f - 0.5 * slack => {
                theta = vertex;
                f = fv;
                restarts += 1;
            }
            _ => break,
        }
    }
    if iterations > config.max_iter + config.subgradient_iter && gnorm > config.grad_tol && poly.smooth {
        return Err(SolverError::Nonconvergence { iterations, gradient_norm: gnorm });
    }
    Ok(EstimateRecord {
        theta,
        bandwidth: weights.bandwidth(),
        objective: f,
        initial_objective: f_init,
        gradient_norm: gnorm,
        iterations,
        path: SolverPath::Breakpoint,
        condition_number: None,
        usable_pairs: table.len(),
        fell_back: false,
    })
}

/// The best vertex spanned by k of the kink hyperplanes nearest to θ.
fn best_vertex(poly: &Polyhedral<'_>, theta: &[f64], u: &[f64]) -> Option<(Vec<f64>, f64)> {
    let table = poly.table;
    let k = table.k();
    let mut near: Vec<(f64, usize)> = (0..table.len())
        .filter_map(|p| {
            let kink = poly.kinks[p]?;
            let len = table.dx(p).iter().map(|v| v * v).sum::<f64>().sqrt();
            (len > 0.0).then(|| ((u[p] - kink.at).abs() / len, p))
        })
        .collect();
    if near.len() < k {
        return None;
    }
    near.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    near.truncate(k + 3);
    let mut best: Option<(Vec<f64>, f64)> = None;
    let m = near.len();
    let mut subset: Vec<usize> = (0..k).collect();
    loop {
        let rows: Vec<f64> = subset.iter().flat_map(|&s| table.dx(near[s].1).to_vec()).collect();
        let rhs: Vec<f64> = subset.iter().map(|&s| poly.kinks[near[s].1].unwrap().at).collect();
        let a = DMatrix::from_row_slice(k, k, &rows);
        if let Some(lu) = a.clone().lu().try_inverse() {
            let sol = lu * DVector::from_column_slice(&rhs);
            let vertex: Vec<f64> = sol.iter().copied().collect();
            if vertex.iter().all(|v| v.is_finite()) && vertex != theta {
                if let Ok(fv) = table.value(&vertex) {
                    if best.as_ref().is_none_or(|b| fv < b.1) {
                        best = Some((vertex, fv));
                    }
                }
            }
        }
        // next k-subset of 0..m in lexicographic order
        let mut i = k;
        loop {
            if i == 0 {
                return best;
            }
            i -= 1;
            if subset[i] < m - k + i {
                subset[i] += 1;
                for j in i + 1..k {
                    subset[j] = subset[j - 1] + 1;
                }
                break;
            }
        }
    }
}

/// Solves with the strongest strategy the model supports.
pub fn estimate_with_weights(weights: &PairWeights, model: PairwiseModel, data: &Dataset, config: &SolverConfig) -> Result<EstimateRecord, SolverError> {
    if weights.is_degenerate() {
        return Err(SolverError::NoUsablePairs { bandwidth: weights.bandwidth() });
    }
    match model.smoothness() {
        Smoothness::Quadratic => solve_plr_closed_form(weights, data),
        Smoothness::Smooth => solve_smooth(weights, model, data, config),
        Smoothness::PiecewiseLinear => solve_nonsmooth(weights, model, data, config),
    }
}

pub fn estimate(data: &Dataset, model: PairwiseModel, spec: &KernelSpec, h: f64, config: &SolverConfig) -> Result<EstimateRecord, SolverError> {
    model.validate_outcomes(data).map_err(ObjectiveError::from)?;
    let weights = pairwise_weights(data, spec, h)?;
    estimate_with_weights(&weights, model, data, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Observation;
    use crate::dgp::{DgpConfig, GammaShape};
    use crate::kernel::KernelFamily;
    use crate::objective::objective_value;
    use crate::rng;
    use rand::Rng;

    fn data(model: PairwiseModel, n: usize, k: usize, d: usize, seed: u64) -> Dataset {
        let mut c = DgpConfig::new(model, n, k, d);
        c.seed = seed;
        c.generate_seeded().unwrap()
    }

    fn certify(weights: &PairWeights, model: PairwiseModel, ds: &Dataset, rec: &EstimateRecord, slack: f64, seed: u64) {
        let f = objective_value(weights, model, ds, &rec.theta).unwrap();
        let mut r = rng::stream(seed, &[99]);
        for _ in 0..100 {
            let scale = 10f64.powf(r.random_range(-6.0..0.0));
            let probe: Vec<f64> = rec.theta.iter().map(|t| t + scale * r.random_range(-1.0..1.0)).collect();
            let fp = objective_value(weights, model, ds, &probe).unwrap();
            assert!(f - fp <= slack, "{model}: probe improves by {}", f - fp);
        }
    }

    #[test]
    fn one_pair_ratio() {
        let ds = Dataset::from_observations(&[Observation::new(3.0, vec![2.0], vec![0.0]), Observation::new(1.0, vec![0.5], vec![0.1])]).unwrap();
        let w = pairwise_weights(&ds, &KernelSpec::gaussian(1), 1.0).unwrap();
        let rec = solve_plr_closed_form(&w, &ds).unwrap();
        assert!((rec.theta[0] - 2.0 / 1.5).abs() < 1e-15);
    }

    #[test]
    fn no_usable_pairs() {
        let ds = data(PairwiseModel::Plr, 20, 2, 1, 1);
        let spec = KernelSpec::new(KernelFamily::Uniform, 1).unwrap();
        let w = pairwise_weights(&ds, &spec, 1e-12).unwrap();
        assert!(matches!(solve_plr_closed_form(&w, &ds), Err(SolverError::NoUsablePairs { .. })));
        let censored = data(PairwiseModel::Plt, 20, 2, 1, 1);
        assert!(matches!(estimate(&censored, PairwiseModel::Plt, &spec, 1e-12, &SolverConfig::default()), Err(SolverError::NoUsablePairs { .. })));
    }

    #[test]
    fn collinear_regressors_name_direction() {
        let obs: Vec<Observation> = (0..10).map(|i| Observation::new(i as f64, vec![i as f64, 2.0 * i as f64], vec![0.0])).collect();
        let ds = Dataset::from_observations(&obs).unwrap();
        let w = pairwise_weights(&ds, &KernelSpec::gaussian(1), 1.0).unwrap();
        match solve_plr_closed_form(&w, &ds) {
            Err(SolverError::IllConditioned { direction, .. }) => {
                assert!((direction[0] + 2.0 * direction[1]).abs() < 1e-6, "{direction:?}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn noiseless_regression_is_recovered() {
        let mut c = DgpConfig::new(PairwiseModel::Plr, 60, 2, 1);
        c.gamma = GammaShape::Zero;
        c.noise_scale = 1e-12;
        c.theta0 = vec![1.0, -0.5];
        let ds = c.generate_seeded().unwrap();
        let rec = estimate(&ds, PairwiseModel::Plr, &KernelSpec::gaussian(1), 0.5, &SolverConfig::default()).unwrap();
        assert!((rec.theta[0] - 1.0).abs() < 1e-6 && (rec.theta[1] + 0.5).abs() < 1e-6);
    }

    #[test]
    fn closed_form_gradient_vanishes() {
        let ds = data(PairwiseModel::Plr, 100, 3, 2, 4);
        let w = pairwise_weights(&ds, &KernelSpec::gaussian(2), 0.6).unwrap();
        let rec = solve_plr_closed_form(&w, &ds).unwrap();
        let g = objective_subgradient(&w, &ds, &rec.theta);
        assert!(max_abs(&g) < 1e-8);
        assert!(rec.gradient_norm < 1e-12);
        assert!(rec.objective <= rec.initial_objective);
    }

    fn objective_subgradient(w: &PairWeights, ds: &Dataset, theta: &[f64]) -> Vec<f64> {
        crate::objective::objective_subgradient(w, PairwiseModel::Plr, ds, theta).unwrap()
    }

    #[test]
    fn ladder_matches_stored_weights() {
        let ds = data(PairwiseModel::Plr, 120, 2, 1, 8);
        let spec = KernelSpec::gaussian(1);
        let hs = [0.2, 0.45, 1.3];
        let ladder = plr_closed_form_ladder(&ds, &spec, &hs).unwrap();
        for (rec, &h) in ladder.iter().zip(&hs) {
            let direct = solve_plr_closed_form(&pairwise_weights(&ds, &spec, h).unwrap(), &ds).unwrap();
            assert_eq!(rec.as_ref().unwrap().theta, direct.theta);
        }
    }

    #[test]
    fn newton_is_exact_on_quadratics() {
        let ds = data(PairwiseModel::Plr, 80, 2, 1, 3);
        let w = pairwise_weights(&ds, &KernelSpec::gaussian(1), 0.5).unwrap();
        let closed = solve_plr_closed_form(&w, &ds).unwrap();
        let cfg = SolverConfig { init: InitRule::Zero, ..SolverConfig::default() };
        let newton = solve_smooth(&w, PairwiseModel::Plr, &ds, &cfg).unwrap();
        assert!(newton.iterations <= 1);
        for (a, b) in newton.theta.iter().zip(&closed.theta) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn logit_solve_descends_and_certifies() {
        let ds = data(PairwiseModel::Pll, 150, 2, 1, 6);
        let w = pairwise_weights(&ds, &KernelSpec::gaussian(1), 0.5).unwrap();
        let cfg = SolverConfig::default();
        let rec = solve_smooth(&w, PairwiseModel::Pll, &ds, &cfg).unwrap();
        let f0 = objective_value(&w, PairwiseModel::Pll, &ds, &[0.0, 0.0]).unwrap();
        assert!(rec.objective <= f0);
        assert_eq!(rec.path, SolverPath::Newton);
        certify(&w, PairwiseModel::Pll, &ds, &rec, cfg.slack_for(150), 1);
    }

    #[test]
    fn separable_logit_is_reported() {
        let obs: Vec<Observation> = (0..12).map(|i| {
            let x = i as f64 - 5.5;
            Observation::new(if x > 0.0 { 1.0 } else { 0.0 }, vec![x], vec![0.01 * i as f64])
        }).collect();
        let ds = Dataset::from_observations(&obs).unwrap();
        let w = pairwise_weights(&ds, &KernelSpec::gaussian(1), 1.0).unwrap();
        assert!(matches!(solve_smooth(&w, PairwiseModel::Pll, &ds, &SolverConfig::default()), Err(SolverError::Separation { .. })));
    }

    #[test]
    fn strategies_check_capability() {
        let ds = data(PairwiseModel::Plt, 20, 1, 1, 1);
        let w = pairwise_weights(&ds, &KernelSpec::gaussian(1), 1.0).unwrap();
        assert!(matches!(solve_smooth(&w, PairwiseModel::Plt, &ds, &SolverConfig::default()), Err(SolverError::WrongStrategy { .. })));
    }

    #[test]
    fn tobit_solve_certifies() {
        for seed in 0..5 {
            let ds = data(PairwiseModel::Plt, 120, 2, 1, seed);
            let w = pairwise_weights(&ds, &KernelSpec::gaussian(1), 0.5).unwrap();
            let cfg = SolverConfig::default();
            let rec = solve_nonsmooth(&w, PairwiseModel::Plt, &ds, &cfg).unwrap();
            assert!(rec.objective <= rec.initial_objective);
            certify(&w, PairwiseModel::Plt, &ds, &rec, cfg.slack_for(120), seed);
        }
    }

    #[test]
    fn tobit_ignores_level_shift_when_uncensored() {
        let mut c = DgpConfig::new(PairwiseModel::Plt, 80, 2, 1);
        c.intercept = 50.0;
        c.seed = 2;
        let ds = c.generate_seeded().unwrap();
        assert!(ds.outcomes().iter().all(|&y| y > 0.0));
        let shifted: Vec<Observation> = (0..ds.n()).map(|i| Observation::new(ds.y(i) + 7.0, ds.x(i).to_vec(), ds.w(i).to_vec())).collect();
        let ds2 = Dataset::from_observations(&shifted).unwrap();
        let spec = KernelSpec::gaussian(1);
        let a = estimate(&ds, PairwiseModel::Plt, &spec, 0.5, &SolverConfig::default()).unwrap();
        let b = estimate(&ds2, PairwiseModel::Plt, &spec, 0.5, &SolverConfig::default()).unwrap();
        for (s, t) in a.theta.iter().zip(&b.theta) {
            assert!((s - t).abs() < 1e-8, "{s} vs {t}");
        }
    }

    #[test]
    fn plr_through_nonsmooth_path_agrees() {
        let ds = data(PairwiseModel::Plr, 100, 3, 1, 12);
        let w = pairwise_weights(&ds, &KernelSpec::gaussian(1), 0.6).unwrap();
        let closed = solve_plr_closed_form(&w, &ds).unwrap();
        let cfg = SolverConfig { init: InitRule::Zero, ..SolverConfig::default() };
        let generic = solve_nonsmooth(&w, PairwiseModel::Plr, &ds, &cfg).unwrap();
        for (a, b) in generic.theta.iter().zip(&closed.theta) {
            assert!((a - b).abs() <= 1e-5 * b.abs().max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn scale_equivariance() {
        let ds = data(PairwiseModel::Plr, 90, 2, 1, 5);
        let scaled: Vec<Observation> = (0..ds.n()).map(|i| Observation::new(ds.y(i), ds.x(i).iter().map(|v| 4.0 * v).collect(), ds.w(i).to_vec())).collect();
        let ds2 = Dataset::from_observations(&scaled).unwrap();
        let spec = KernelSpec::gaussian(1);
        let a = estimate(&ds, PairwiseModel::Plr, &spec, 0.5, &SolverConfig::default()).unwrap();
        let b = estimate(&ds2, PairwiseModel::Plr, &spec, 0.5, &SolverConfig::default()).unwrap();
        for (s, t) in a.theta.iter().zip(&b.theta) {
            assert!((s / 4.0 - t).abs() < 1e-9);
        }
    }

    #[test]
    fn one_dimensional_tobit_matches_enumeration() {
        let mut r = rng::stream(5, &[1]);
        for _ in 0..50 {
            let n = r.random_range(2..=6);
            let obs: Vec<Observation> = (0..n)
                .map(|_| {
                    let y: f64 = if r.random_bool(0.3) { 0.0 } else { r.random_range(0.0..3.0) };
                    Observation::new(y, vec![r.random_range(-2.0..2.0)], vec![r.random_range(-1.0..1.0)])
                })
                .collect();
            let ds = Dataset::from_observations(&obs).unwrap();
            let w = pairwise_weights(&ds, &KernelSpec::gaussian(1), 0.8).unwrap();
            let mut points = vec![0.0];
            for p in w.pairs() {
                let (i, j) = (p.i as usize, p.j as usize);
                let dx = ds.x(i)[0] - ds.x(j)[0];
                if let Some(kink) = PairwiseModel::Plt.kink(ds.y(i), ds.y(j)) {
                    if dx != 0.0 {
                        points.push(kink.at / dx);
                    }
                }
            }
            let best = points.iter().map(|&t| objective_value(&w, PairwiseModel::Plt, &ds, &[t]).unwrap()).fold(f64::INFINITY, f64::min);
            match solve_nonsmooth(&w, PairwiseModel::Plt, &ds, &SolverConfig::default()) {
                Ok(rec) => assert!(rec.objective - best <= 1e-8, "{} vs {best}", rec.objective),
                Err(SolverError::NoUsablePairs { .. }) => {}
                Err(e) => panic!("{e}"),
            }
        }
    }
}
