//! The kernel-weighted U-statistic objective
//! `M̂(θ; h) = C(n,2)^{-1} Σ_{i<j} m(z_i, z_j; θ) K_h(w_i - w_j)`.
//!
//! Sums run over pairs in lexicographic `(i, j)` order. Each row `i` is
//! accumulated plainly and the row totals are combined with compensated
//! summation, which keeps results reproducible and close to exact.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Dataset;
use crate::kernel::{check_bandwidth, KernelError, KernelSpec};
use crate::models::{ModelError, PairwiseModel};
use crate::sum::{NeumaierSum, NeumaierVec};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ObjectiveError {
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("kernel has dimension {kernel}, covariates w have dimension {data}")]
    KernelDimension { kernel: usize, data: usize },
    #[error("pair weights were built for n={weights}, dataset has n={data}")]
    WeightsMismatch { weights: usize, data: usize },
    #[error("parameter has dimension {got}, expected {expected}")]
    ParameterDimension { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightedPair {
    pub i: u32,
    pub j: u32,
    pub weight: f64,
}

/// Kernel weights for all pairs `i < j`, zeros pruned unless requested.
#[derive(Debug, Clone, PartialEq)]
pub struct PairWeights {
    bandwidth: f64,
    n: usize,
    pairs: Vec<WeightedPair>,
    total_pairs: u64,
    normalization: f64,
}

pub fn pair_count(n: usize) -> u64 {
    let n = n as u64;
    n * n.saturating_sub(1) / 2
}

impl PairWeights {
    pub fn build(data: &Dataset, spec: &KernelSpec, h: f64, keep_zeros: bool) -> Result<Self, ObjectiveError> {
        check_bandwidth(h)?;
        if spec.dim != data.d() {
            return Err(ObjectiveError::KernelDimension { kernel: spec.dim, data: data.d() });
        }
        let n = data.n();
        let scale = spec.pair_scale(h);
        let mut pairs = Vec::new();
        for i in 0..n {
            let wi = data.w(i);
            for j in i + 1..n {
                let weight = spec.scaled_diff_eval(wi, data.w(j), h, scale);
                if keep_zeros || weight != 0.0 {
                    pairs.push(WeightedPair { i: i as u32, j: j as u32, weight });
                }
            }
        }
        let total_pairs = pair_count(n);
        Ok(Self { bandwidth: h, n, pairs, total_pairs, normalization: 1.0 / total_pairs as f64 })
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn pairs(&self) -> &[WeightedPair] {
        &self.pairs
    }

    pub fn nonzero(&self) -> usize {
        self.pairs.iter().filter(|p| p.weight != 0.0).count()
    }

    pub fn total_pairs(&self) -> u64 {
        self.total_pairs
    }

    /// `C(n,2)^{-1}`.
    pub fn normalization(&self) -> f64 {
        self.normalization
    }

    pub fn is_degenerate(&self) -> bool {
        self.nonzero() == 0
    }

    fn check(&self, data: &Dataset) -> Result<(), ObjectiveError> {
        if self.n != data.n() {
            return Err(ObjectiveError::WeightsMismatch { weights: self.n, data: data.n() });
        }
        Ok(())
    }
}

pub fn pairwise_weights(data: &Dataset, spec: &KernelSpec, h: f64) -> Result<PairWeights, ObjectiveError> {
    PairWeights::build(data, spec, h, false)
}

/// Row-blocked compensated accumulation of a scalar.
pub(crate) struct RowSum {
    total: NeumaierSum,
    row: f64,
}

impl RowSum {
    pub(crate) fn new() -> Self {
        Self { total: NeumaierSum::new(), row: 0.0 }
    }

    #[inline]
    pub(crate) fn add(&mut self, v: f64) {
        self.row += v;
    }

    #[inline]
    pub(crate) fn end_row(&mut self) {
        self.total.add(self.row);
        self.row = 0.0;
    }

    pub(crate) fn value(mut self) -> f64 {
        self.end_row();
        self.total.value()
    }
}

/// Row-blocked compensated accumulation of a vector.
pub(crate) struct RowSumVec {
    total: NeumaierVec,
    row: Vec<f64>,
}

impl RowSumVec {
    pub(crate) fn new(len: usize) -> Self {
        Self { total: NeumaierVec::zeros(len), row: vec![0.0; len] }
    }

    #[inline]
    pub(crate) fn row_mut(&mut self) -> &mut [f64] {
        &mut self.row
    }

    #[inline]
    pub(crate) fn end_row(&mut self) {
        self.total.add_slice(&self.row);
        self.row.iter_mut().for_each(|v| *v = 0.0);
    }

    pub(crate) fn values(mut self) -> Vec<f64> {
        self.end_row();
        self.total.values()
    }
}

fn check_theta(data: &Dataset, theta: &[f64]) -> Result<(), ObjectiveError> {
    if theta.len() != data.k() {
        return Err(ObjectiveError::ParameterDimension { expected: data.k(), got: theta.len() });
    }
    Ok(())
}

#[inline]
fn index_of(xi: &[f64], xj: &[f64], theta: &[f64]) -> f64 {
    let mut u = 0.0;
    for a in 0..theta.len() {
        u += (xi[a] - xj[a]) * theta[a];
    }
    u
}

pub fn objective_value(weights: &PairWeights, model: PairwiseModel, data: &Dataset, theta: &[f64]) -> Result<f64, ObjectiveError> {
    weights.check(data)?;
    check_theta(data, theta)?;
    model.validate_outcomes(data)?;
    let mut acc = RowSum::new();
    let mut current = None;
    for p in &weights.pairs {
        if current != Some(p.i) {
            acc.end_row();
            current = Some(p.i);
        }
        let (i, j) = (p.i as usize, p.j as usize);
        let u = index_of(data.x(i), data.x(j), theta);
        acc.add(model.pair_loss(data.y(i), data.y(j), u) * p.weight);
    }
    Ok(weights.normalization * acc.value())
}

pub fn objective_subgradient(weights: &PairWeights, model: PairwiseModel, data: &Dataset, theta: &[f64]) -> Result<Vec<f64>, ObjectiveError> {
    weights.check(data)?;
    check_theta(data, theta)?;
    model.validate_outcomes(data)?;
    let k = data.k();
    let mut acc = RowSumVec::new(k);
    let mut current = None;
    for p in &weights.pairs {
        if current != Some(p.i) {
            acc.end_row();
            current = Some(p.i);
        }
        let (i, j) = (p.i as usize, p.j as usize);
        let (xi, xj) = (data.x(i), data.x(j));
        let u = index_of(xi, xj, theta);
        let c = model.pair_slope(data.y(i), data.y(j), u) * p.weight;
        if c != 0.0 {
            let row = acc.row_mut();
            for a in 0..k {
                row[a] += (xi[a] - xj[a]) * c;
            }
        }
    }
    Ok(acc.values().into_iter().map(|v| v * weights.normalization).collect())
}

/// A pair table for repeated evaluation: differences `x_i - x_j`, outcomes and
/// weights of every pair that can contribute a nonzero loss.
#[derive(Debug, Clone)]
pub struct Objective {
    model: PairwiseModel,
    k: usize,
    normalization: f64,
    dx: Vec<f64>,
    yi: Vec<f64>,
    yj: Vec<f64>,
    weight: Vec<f64>,
    row_start: Vec<usize>,
}

impl Objective {
    pub fn new(weights: &PairWeights, model: PairwiseModel, data: &Dataset) -> Result<Self, ObjectiveError> {
        weights.check(data)?;
        model.validate_outcomes(data)?;
        let k = data.k();
        let mut table = Self {
            model,
            k,
            normalization: weights.normalization,
            dx: Vec::new(),
            yi: Vec::new(),
            yj: Vec::new(),
            weight: Vec::new(),
            row_start: Vec::new(),
        };
        let mut current = None;
        for p in &weights.pairs {
            let (i, j) = (p.i as usize, p.j as usize);
            let (a, b) = (data.y(i), data.y(j));
            let inert = p.weight == 0.0
                || match model {
                    PairwiseModel::Plr => false,
                    PairwiseModel::Pll => a == b,
                    PairwiseModel::Plt => a <= 0.0 && b <= 0.0,
                };
            if inert {
                continue;
            }
            if current != Some(p.i) {
                table.row_start.push(table.weight.len());
                current = Some(p.i);
            }
            let (xi, xj) = (data.x(i), data.x(j));
            table.dx.extend(xi.iter().zip(xj).map(|(s, t)| s - t));
            table.yi.push(a);
            table.yj.push(b);
            table.weight.push(p.weight);
        }
        Ok(table)
    }

    pub fn model(&self) -> PairwiseModel {
        self.model
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Number of pairs that can contribute.
    pub fn len(&self) -> usize {
        self.weight.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weight.is_empty()
    }

    pub fn normalization(&self) -> f64 {
        self.normalization
    }

    #[inline]
    pub fn dx(&self, p: usize) -> &[f64] {
        &self.dx[p * self.k..(p + 1) * self.k]
    }

    #[inline]
    pub fn outcomes(&self, p: usize) -> (f64, f64) {
        (self.yi[p], self.yj[p])
    }

    #[inline]
    pub fn weight(&self, p: usize) -> f64 {
        self.weight[p]
    }

    fn check(&self, theta: &[f64]) -> Result<(), ObjectiveError> {
        if theta.len() != self.k {
            return Err(ObjectiveError::ParameterDimension { expected: self.k, got: theta.len() });
        }
        Ok(())
    }

    /// Pair indices `u_p = dx_p'θ`.
    pub fn indices(&self, theta: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.dx.chunks_exact(self.k).map(|d| {
            let mut u = 0.0;
            for a in 0..self.k {
                u += d[a] * theta[a];
            }
            u
        }));
    }

    /// Row-blocked sum of `f(p)` over the table, normalized.
    #[inline]
    pub(crate) fn sum_by_rows(&self, mut f: impl FnMut(usize) -> f64) -> f64 {
        let mut acc = RowSum::new();
        for (r, &start) in self.row_start.iter().enumerate() {
            let end = self.row_start.get(r + 1).copied().unwrap_or(self.weight.len());
            for p in start..end {
                acc.add(f(p));
            }
            acc.end_row();
        }
        self.normalization * acc.value()
    }

    /// Row-blocked sum of `c(p) · dx_p`, normalized.
    pub(crate) fn weighted_dx_sum(&self, mut c: impl FnMut(usize) -> f64) -> Vec<f64> {
        let k = self.k;
        let mut acc = RowSumVec::new(k);
        for (r, &start) in self.row_start.iter().enumerate() {
            let end = self.row_start.get(r + 1).copied().unwrap_or(self.weight.len());
            let row = acc.row_mut();
            for p in start..end {
                let cp = c(p);
                if cp != 0.0 {
                    let d = &self.dx[p * k..(p + 1) * k];
                    for a in 0..k {
                        row[a] += d[a] * cp;
                    }
                }
            }
            acc.end_row();
        }
        acc.values().into_iter().map(|v| v * self.normalization).collect()
    }

    pub fn value_at_indices(&self, u: &[f64]) -> f64 {
        self.sum_by_rows(|p| self.model.pair_loss(self.yi[p], self.yj[p], u[p]) * self.weight[p])
    }

    pub fn subgradient_at_indices(&self, u: &[f64]) -> Vec<f64> {
        self.weighted_dx_sum(|p| self.model.pair_slope(self.yi[p], self.yj[p], u[p]) * self.weight[p])
    }

    pub fn value(&self, theta: &[f64]) -> Result<f64, ObjectiveError> {
        self.check(theta)?;
        let mut u = Vec::with_capacity(self.len());
        self.indices(theta, &mut u);
        Ok(self.value_at_indices(&u))
    }

    pub fn subgradient(&self, theta: &[f64]) -> Result<Vec<f64>, ObjectiveError> {
        self.check(theta)?;
        let mut u = Vec::with_capacity(self.len());
        self.indices(theta, &mut u);
        Ok(self.subgradient_at_indices(&u))
    }

    /// `C(n,2)^{-1} Σ w_p m''(u_p) dx_p dx_p'` as a row-major k×k matrix.
    pub fn hessian_at_indices(&self, u: &[f64]) -> Vec<f64> {
        let k = self.k;
        let mut acc = RowSumVec::new(k * k);
        for (r, &start) in self.row_start.iter().enumerate() {
            let end = self.row_start.get(r + 1).copied().unwrap_or(self.weight.len());
            let row = acc.row_mut();
            for p in start..end {
                let c = self.model.pair_curvature(self.yi[p], self.yj[p], u[p]) * self.weight[p];
                if c == 0.0 {
                    continue;
                }
                let d = &self.dx[p * k..(p + 1) * k];
                for a in 0..k {
                    let ca = d[a] * c;
                    for b in a..k {
                        row[a * k + b] += ca * d[b];
                    }
                }
            }
            acc.end_row();
        }
        let mut h: Vec<f64> = acc.values().into_iter().map(|v| v * self.normalization).collect();
        for a in 0..k {
            for b in 0..a {
                h[a * k + b] = h[b * k + a];
            }
        }
        h
    }

    pub fn hessian(&self, theta: &[f64]) -> Result<Vec<f64>, ObjectiveError> {
        self.check(theta)?;
        let mut u = Vec::with_capacity(self.len());
        self.indices(theta, &mut u);
        Ok(self.hessian_at_indices(&u))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    Linear,
    Intermediate,
    SmallBandwidth,
}

/// Heuristic regime labels from `n h^d`.
pub const LINEAR_THRESHOLD: f64 = 20.0;
pub const SMALL_BANDWIDTH_THRESHOLD: f64 = 2.0;
/// Below this `n² h^d` the pair count is too thin for the distribution theory.
pub const THIN_PAIRS_THRESHOLD: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeDiagnostics {
    pub n: usize,
    pub bandwidth: f64,
    pub dim: usize,
    pub n_hd: f64,
    pub n2_hd: f64,
    pub nonzero_pair_fraction: Option<f64>,
    pub regime: Regime,
    pub outside_theory: bool,
    /// `sqrt(min(n, C(n,2) h^d))`.
    pub rate: f64,
}

impl RegimeDiagnostics {
    pub fn from_scalars(n: usize, h: f64, d: usize) -> Self {
        let hd = h.powi(d as i32);
        let n_hd = n as f64 * hd;
        let n2_hd = (n as f64) * (n as f64) * hd;
        let regime = if n_hd >= LINEAR_THRESHOLD {
            Regime::Linear
        } else if n_hd <= SMALL_BANDWIDTH_THRESHOLD {
            Regime::SmallBandwidth
        } else {
            Regime::Intermediate
        };
        let rate = (n as f64).min(pair_count(n) as f64 * hd).sqrt();
        Self { n, bandwidth: h, dim: d, n_hd, n2_hd, nonzero_pair_fraction: None, regime, outside_theory: n2_hd < THIN_PAIRS_THRESHOLD, rate }
    }
}

pub fn regime_diagnostics(weights: &PairWeights, n: usize, h: f64, d: usize) -> RegimeDiagnostics {
    let mut diag = RegimeDiagnostics::from_scalars(n, h, d);
    if weights.total_pairs > 0 {
        diag.nonzero_pair_fraction = Some(weights.nonzero() as f64 / weights.total_pairs as f64);
    }
    diag
}
