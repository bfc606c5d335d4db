//! Second-order base kernels, bandwidth scaling, and the signed equivalent
//! kernel induced by combining estimates at several bandwidths.
//!
//! All three families are symmetric, bounded probability densities on
//! `R^d`. The Gaussian is isotropic (and therefore also a product kernel);
//! the Epanechnikov and uniform kernels are product kernels with compact
//! support `[-1, 1]^d` and `[-1/2, 1/2]^d` respectively.
//!
//! Moments are computed by a tensor-product midpoint rule whose per-axis
//! panels are aligned with every support edge of the integrand, so each
//! panel sees a polynomial (compact families) or an analytic (Gaussian)
//! integrand. Three nested grids give a Richardson-extrapolated value and
//! an error estimate.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sum::NeumaierSum;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("kernel dimension must be at least 1")]
    ZeroDimension,
    #[error("argument has dimension {got}, kernel expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("bandwidth must be positive and finite, got {0}")]
    NonPositiveBandwidth(f64),
    #[error("equivalent kernel needs matching nonempty c and lambda vectors (c: {c}, lambda: {lambdas})")]
    LengthMismatch { c: usize, lambdas: usize },
    #[error("bandwidth multipliers must be positive, got {0}")]
    NonPositiveMultiplier(f64),
    #[error("moment order {order} exceeds configured maximum {max}")]
    OrderTooHigh { order: u32, max: u32 },
    #[error("quadrature did not converge: error estimate {estimate:e} above tolerance {tolerance:e}")]
    Nonconvergence { estimate: f64, tolerance: f64 },
    #[error("unknown kernel family `{0}` (expected gaussian, epanechnikov or uniform)")]
    UnknownFamily(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelFamily {
    Gaussian,
    Epanechnikov,
    Uniform,
}

impl KernelFamily {
    pub fn as_str(&self) -> &'static str {
        match self {
            KernelFamily::Gaussian => "gaussian",
            KernelFamily::Epanechnikov => "epanechnikov",
            KernelFamily::Uniform => "uniform",
        }
    }

    /// Half-width of the one-dimensional support, `None` for unbounded support.
    pub fn support_half_width(&self) -> Option<f64> {
        match self {
            KernelFamily::Gaussian => None,
            KernelFamily::Epanechnikov => Some(1.0),
            KernelFamily::Uniform => Some(0.5),
        }
    }

    /// One-dimensional factor `k(t)` of the product form.
    #[inline]
    fn factor(&self, t: f64) -> f64 {
        match self {
            KernelFamily::Gaussian => (-0.5 * t * t).exp() / (2.0 * PI).sqrt(),
            KernelFamily::Epanechnikov => {
                if t.abs() <= 1.0 {
                    0.75 * (1.0 - t * t)
                } else {
                    0.0
                }
            }
            KernelFamily::Uniform => {
                if t.abs() <= 0.5 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// `∫ k_a(t) k_b(t) dt` with `k_a(t) = k(t/a)/a`.
    fn cross_integral(&self, a: f64, b: f64) -> f64 {
        match self {
            KernelFamily::Gaussian => 1.0 / (2.0 * PI * (a * a + b * b)).sqrt(),
            KernelFamily::Uniform => 1.0 / a.max(b),
            KernelFamily::Epanechnikov => {
                let m = a.min(b);
                let inv = 1.0 / (a * a) + 1.0 / (b * b);
                let poly = 2.0 * m - 2.0 * m.powi(3) / 3.0 * inv
                    + 2.0 * m.powi(5) / 5.0 / (a * a * b * b);
                9.0 / (16.0 * a * b) * poly
            }
        }
    }
}

impl fmt::Display for KernelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for KernelFamily {
    type Err = KernelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "gaussian" => Ok(KernelFamily::Gaussian),
            "epanechnikov" | "epanechnikov-product" => Ok(KernelFamily::Epanechnikov),
            "uniform" | "uniform-box" => Ok(KernelFamily::Uniform),
            other => Err(KernelError::UnknownFamily(other.to_string())),
        }
    }
}

/// A base kernel: family plus the dimension of the localizing covariate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub dim: usize,
}

impl KernelSpec {
    pub fn new(family: KernelFamily, dim: usize) -> Result<Self, KernelError> {
        if dim == 0 {
            return Err(KernelError::ZeroDimension);
        }
        Ok(Self { family, dim })
    }

    pub fn gaussian(dim: usize) -> Self {
        Self { family: KernelFamily::Gaussian, dim: dim.max(1) }
    }

    fn check_dim(&self, u: &[f64]) -> Result<(), KernelError> {
        if u.len() != self.dim {
            return Err(KernelError::DimensionMismatch { expected: self.dim, got: u.len() });
        }
        Ok(())
    }

    /// `K(u)`.
    pub fn eval(&self, u: &[f64]) -> Result<f64, KernelError> {
        self.check_dim(u)?;
        Ok(self.eval_unchecked(u))
    }

    #[inline]
    pub fn eval_unchecked(&self, u: &[f64]) -> f64 {
        match self.family {
            KernelFamily::Gaussian => {
                let sq: f64 = u.iter().map(|t| t * t).sum();
                (-0.5 * sq).exp() / (2.0 * PI).powf(0.5 * self.dim as f64)
            }
            family => u.iter().map(|&t| family.factor(t)).product(),
        }
    }

    /// The constant `h^{-d} / K-normalizer` folded into pair weights.
    pub fn pair_scale(&self, h: f64) -> f64 {
        let hd = h.powi(self.dim as i32);
        match self.family {
            KernelFamily::Gaussian => 1.0 / ((2.0 * PI).powf(0.5 * self.dim as f64) * hd),
            _ => 1.0 / hd,
        }
    }

    /// `K_h(a - b)` without allocating, given `scale = pair_scale(h)`.
    #[inline]
    pub fn scaled_diff_eval(&self, a: &[f64], b: &[f64], h: f64, scale: f64) -> f64 {
        match self.family {
            KernelFamily::Gaussian => gaussian_weight(Self::sq_dist(a, b), gaussian_exponent(h), scale),
            family => {
                let mut v = scale;
                for (x, y) in a.iter().zip(b) {
                    v *= family.factor((x - y) / h);
                }
                v
            }
        }
    }

    /// Squared distance of `a` and `b` (the gaussian weight depends on nothing else).
    #[inline]
    pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
        let mut sq = 0.0;
        for (x, y) in a.iter().zip(b) {
            sq += (x - y) * (x - y);
        }
        sq
    }

    /// `K_h(u) = h^{-d} K(u / h)`.
    pub fn scaled_eval(&self, u: &[f64], h: f64) -> Result<f64, KernelError> {
        self.check_dim(u)?;
        check_bandwidth(h)?;
        let zeros = vec![0.0; u.len()];
        Ok(self.scaled_diff_eval(u, &zeros, h, self.pair_scale(h)))
    }

    /// `sup_u K(u)`, attained at the origin for all three families.
    pub fn sup(&self) -> f64 {
        match self.family {
            KernelFamily::Gaussian => (2.0 * PI).powf(-0.5 * self.dim as f64),
            KernelFamily::Epanechnikov => 0.75f64.powi(self.dim as i32),
            KernelFamily::Uniform => 1.0,
        }
    }

    /// `∫ K(u)^2 du` in closed form.
    pub fn squared_integral(&self) -> f64 {
        match self.family {
            KernelFamily::Gaussian => (2.0 * PI.sqrt()).powi(-(self.dim as i32)),
            KernelFamily::Epanechnikov => 0.6f64.powi(self.dim as i32),
            KernelFamily::Uniform => 1.0,
        }
    }

    /// Per-coordinate variance `∫ u_1^2 K(u) du`.
    pub fn second_moment(&self) -> f64 {
        match self.family {
            KernelFamily::Gaussian => 1.0,
            KernelFamily::Epanechnikov => 0.2,
            KernelFamily::Uniform => 1.0 / 12.0,
        }
    }
}

pub fn check_bandwidth(h: f64) -> Result<(), KernelError> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(KernelError::NonPositiveBandwidth(h));
    }
    Ok(())
}

/// `-1 / (2h²)`
#[inline]
pub fn gaussian_exponent(h: f64) -> f64 {
    -0.5 / (h * h)
}

/// Gaussian pair weight from the squared distance; exactly what
/// `scaled_diff_eval` returns.
#[inline]
pub fn gaussian_weight(sq: f64, exponent: f64, scale: f64) -> f64 {
    (sq * exponent).exp() * scale
}

/// `K̄(u) = Σ_l λ_l c_l^{-d} K(u / c_l)`: a signed kernel of order `L + 2`
/// built from a nonnegative second-order base kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivalentKernel {
    pub base: KernelSpec,
    pub c: Vec<f64>,
    pub lambdas: Vec<f64>,
}

impl EquivalentKernel {
    pub fn new(base: KernelSpec, c: Vec<f64>, lambdas: Vec<f64>) -> Result<Self, KernelError> {
        if c.is_empty() || c.len() != lambdas.len() {
            return Err(KernelError::LengthMismatch { c: c.len(), lambdas: lambdas.len() });
        }
        if let Some(&bad) = c.iter().find(|&&v| !(v > 0.0 && v.is_finite())) {
            return Err(KernelError::NonPositiveMultiplier(bad));
        }
        Ok(Self { base, c, lambdas })
    }

    /// The trivial combination `c = (1)`, `λ = (1)`.
    pub fn identity(base: KernelSpec) -> Self {
        Self { base, c: vec![1.0], lambdas: vec![1.0] }
    }

    pub fn eval(&self, u: &[f64]) -> Result<f64, KernelError> {
        self.base.check_dim(u)?;
        Ok(self.eval_unchecked(u))
    }

    fn eval_unchecked(&self, u: &[f64]) -> f64 {
        let d = self.base.dim as i32;
        let mut scratch = vec![0.0; u.len()];
        let mut total = 0.0;
        for (&c, &lambda) in self.c.iter().zip(&self.lambdas) {
            for (s, &t) in scratch.iter_mut().zip(u) {
                *s = t / c;
            }
            total += lambda * self.base.eval_unchecked(&scratch) / c.powi(d);
        }
        total
    }

    fn is_identity(&self) -> bool {
        self.c == [1.0] && self.lambdas == [1.0]
    }

    /// `∫ K̄(u)^2 du` from closed-form pairwise cross integrals.
    pub fn squared_integral(&self) -> f64 {
        if self.is_identity() {
            return self.base.squared_integral();
        }
        let family = self.base.family;
        let mut total = 0.0;
        for (&ca, &la) in self.c.iter().zip(&self.lambdas) {
            for (&cb, &lb) in self.c.iter().zip(&self.lambdas) {
                let per_axis = family.cross_integral(ca, cb);
                total += la * lb * per_axis.powi(self.base.dim as i32);
            }
        }
        total
    }
}

/// Something the moment quadrature can integrate.
pub trait KernelFunction {
    fn dim(&self) -> usize;
    fn value(&self, u: &[f64]) -> f64;
    /// Positive per-axis support edges (compact families) in increasing order.
    fn support_edges(&self) -> Vec<f64>;
    /// Largest bandwidth multiplier in play (1 for a base kernel).
    fn max_scale(&self) -> f64;
    fn family(&self) -> KernelFamily;
}

impl KernelFunction for KernelSpec {
    fn dim(&self) -> usize {
        self.dim
    }
    fn value(&self, u: &[f64]) -> f64 {
        self.eval_unchecked(u)
    }
    fn support_edges(&self) -> Vec<f64> {
        self.family.support_half_width().into_iter().collect()
    }
    fn max_scale(&self) -> f64 {
        1.0
    }
    fn family(&self) -> KernelFamily {
        self.family
    }
}

impl KernelFunction for EquivalentKernel {
    fn dim(&self) -> usize {
        self.base.dim
    }
    fn value(&self, u: &[f64]) -> f64 {
        self.eval_unchecked(u)
    }
    fn support_edges(&self) -> Vec<f64> {
        match self.base.family.support_half_width() {
            None => Vec::new(),
            Some(half) => {
                let mut edges: Vec<f64> = self.c.iter().map(|c| c * half).collect();
                edges.sort_by(f64::total_cmp);
                edges.dedup();
                edges
            }
        }
    }
    fn max_scale(&self) -> f64 {
        self.c.iter().copied().fold(1.0, f64::max)
    }
    fn family(&self) -> KernelFamily {
        self.base.family
    }
}

/// Settings for the tensor-product midpoint rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureConfig {
    /// Points per axis on the finest grid.
    pub points_per_axis: usize,
    /// Truncation radius (in units of the largest bandwidth multiplier) for
    /// unbounded kernels.
    pub gaussian_radius: f64,
    /// Largest admissible `|alpha|`.
    pub max_order: u32,
    pub tolerance: f64,
}

impl QuadratureConfig {
    pub fn for_dim(dim: usize) -> Self {
        let points_per_axis = match dim {
            1 => 2048,
            2 => 512,
            _ => 128,
        };
        Self { points_per_axis, gaussian_radius: 8.0, max_order: 8, tolerance: 1e-7 }
    }
}

/// A quadrature value with its error estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentEstimate {
    pub value: f64,
    pub error_estimate: f64,
}

/// Per-axis midpoint nodes and weights.
struct AxisRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

/// Points per piece between consecutive edges, proportional to length.
fn piece_counts(edges: &[f64], points: usize) -> Vec<usize> {
    let total = edges[edges.len() - 1] - edges[0];
    edges.windows(2).map(|p| (((p[1] - p[0]) / total * points as f64).round() as usize).max(1)).collect()
}

/// Midpoint rule with `counts[i] * refine` cells on piece `i`, so levels
/// built from the same counts have step ratios of exactly `refine`.
fn axis_rule(edges: &[f64], counts: &[usize], refine: usize) -> AxisRule {
    let mut nodes = Vec::new();
    let mut weights = Vec::new();
    for (pair, &c) in edges.windows(2).zip(counts) {
        let (a, b) = (pair[0], pair[1]);
        let m = c * refine;
        let step = (b - a) / m as f64;
        for i in 0..m {
            nodes.push(a + (i as f64 + 0.5) * step);
            weights.push(step);
        }
    }
    AxisRule { nodes, weights }
}

fn tensor_integrate<K: KernelFunction + ?Sized>(target: &K, alpha: &[u32], rule: &AxisRule) -> f64 {
    let d = target.dim();
    let m = rule.nodes.len();
    let mut index = vec![0usize; d];
    let mut point = vec![0.0; d];
    let mut acc = NeumaierSum::new();
    loop {
        let mut weight = 1.0;
        let mut mono = 1.0;
        for axis in 0..d {
            let t = rule.nodes[index[axis]];
            point[axis] = t;
            weight *= rule.weights[index[axis]];
            mono *= t.powi(alpha[axis] as i32);
        }
        acc.add(weight * mono * target.value(&point));

        let mut axis = 0;
        loop {
            index[axis] += 1;
            if index[axis] < m {
                break;
            }
            index[axis] = 0;
            axis += 1;
            if axis == d {
                return acc.value();
            }
        }
    }
}

/// `∫ u^alpha K(u) du` for a base or equivalent kernel.
///
/// The midpoint rule is run on three nested grids and Romberg-extrapolated
/// twice; the error estimate is the size of the last correction.
pub fn kernel_moment<K: KernelFunction + ?Sized>(
    target: &K,
    alpha: &[u32],
    quad: &QuadratureConfig,
) -> Result<MomentEstimate, KernelError> {
    let d = target.dim();
    if alpha.len() != d {
        return Err(KernelError::DimensionMismatch { expected: d, got: alpha.len() });
    }
    let order: u32 = alpha.iter().sum();
    if order > quad.max_order {
        return Err(KernelError::OrderTooHigh { order, max: quad.max_order });
    }

    let positive = target.support_edges();
    let edges: Vec<f64> = if positive.is_empty() {
        let r = quad.gaussian_radius * target.max_scale();
        vec![-r, r]
    } else {
        let mut e: Vec<f64> = positive.iter().rev().map(|v| -v).collect();
        e.extend(positive.iter().copied());
        e
    };

    let counts = piece_counts(&edges, quad.points_per_axis.max(16) / 4);
    let levels: Vec<f64> = [4, 2, 1]
        .iter()
        .map(|&r| tensor_integrate(target, alpha, &axis_rule(&edges, &counts, r)))
        .collect();
    let extrapolated_fine = (4.0 * levels[0] - levels[1]) / 3.0;
    let extrapolated_coarse = (4.0 * levels[1] - levels[2]) / 3.0;
    let romberg = (16.0 * extrapolated_fine - extrapolated_coarse) / 15.0;
    let error_estimate = (romberg - extrapolated_fine).abs();
    if !(error_estimate <= quad.tolerance) {
        return Err(KernelError::Nonconvergence { estimate: error_estimate, tolerance: quad.tolerance });
    }
    Ok(MomentEstimate { value: romberg, error_estimate })
}

/// All multi-indices of dimension `dim` with total order exactly `order`,
/// in lexicographic order.
pub fn multi_indices(dim: usize, order: u32) -> Vec<Vec<u32>> {
    fn rec(dim: usize, remaining: u32, prefix: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if prefix.len() + 1 == dim {
            prefix.push(remaining);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for first in (0..=remaining).rev() {
            prefix.push(first);
            rec(dim, remaining - first, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    if dim > 0 {
        rec(dim, order, &mut Vec::with_capacity(dim), &mut out);
    }
    out
}
