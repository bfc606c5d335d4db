//! Generalized-jackknife weights and the debiased linear combination.
//!
//! With bandwidth multipliers `c = (1, c_1, …, c_{L/2})` the weights solve
//!
//! ```text
//! Σ_l λ_l           = 1
//! Σ_l λ_l c_l^{2m}  = 0,   m = 1, …, L/2
//! ```
//!
//! so that combining estimates whose bias is a polynomial in `h²` of degree
//! `L/2` cancels every bias term up to `h^L`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sum::NeumaierSum;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum JackknifeError {
    #[error("debiasing order L={0} is not supported (expected 0, 2 or 4)")]
    UnsupportedOrder(usize),
    #[error("expected {expected} bandwidth multipliers for this order, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("the first bandwidth multiplier must be 1, got {0}")]
    FirstNotOne(f64),
    #[error("bandwidth multipliers must be positive and finite, got {0}")]
    NonPositive(f64),
    #[error("bandwidth multipliers must be distinct (c[{0}] == c[{1}])")]
    Duplicate(usize, usize),
    #[error("the weight system is numerically singular")]
    Singular,
    #[error("expected {expected} estimates, got {got}")]
    EstimateCount { expected: usize, got: usize },
    #[error("estimates have inconsistent dimensions")]
    EstimateDimension,
}

/// Debiasing order, multipliers and weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DebiasPlan {
    /// `L`, the highest cancelled bias power.
    pub order: usize,
    pub c: Vec<f64>,
    pub lambdas: Vec<f64>,
    /// `‖A‖_∞ ‖A⁻¹‖_∞` of the weight system, reported as a diagnostic only.
    pub condition_number: f64,
}

impl DebiasPlan {
    pub fn new(order: usize, c: Vec<f64>) -> Result<Self, JackknifeError> {
        let (lambdas, condition_number) = solve_lambda_with_condition(order, &c)?;
        Ok(Self { order, c, lambdas, condition_number })
    }

    /// No debiasing: `c = (1)`, `λ = (1)`.
    pub fn undebiased() -> Self {
        Self { order: 0, c: vec![1.0], lambdas: vec![1.0], condition_number: 1.0 }
    }

    /// Geometric multipliers `1, 1.5, 1.5², …`.
    pub fn with_default_multipliers(order: usize) -> Result<Self, JackknifeError> {
        Self::new(order, default_multipliers(order)?)
    }

    pub fn levels(&self) -> usize {
        self.c.len()
    }

    /// Bandwidths `c_l h`.
    pub fn bandwidths(&self, h: f64) -> Vec<f64> {
        self.c.iter().map(|c| c * h).collect()
    }
}

pub fn default_multipliers(order: usize) -> Result<Vec<f64>, JackknifeError> {
    match order {
        0 => Ok(vec![1.0]),
        2 => Ok(vec![1.0, 1.5]),
        4 => Ok(vec![1.0, 1.5, 2.25]),
        other => Err(JackknifeError::UnsupportedOrder(other)),
    }
}

fn validate(order: usize, c: &[f64]) -> Result<(), JackknifeError> {
    if !matches!(order, 0 | 2 | 4) {
        return Err(JackknifeError::UnsupportedOrder(order));
    }
    let expected = order / 2 + 1;
    if c.len() != expected {
        return Err(JackknifeError::LengthMismatch { expected, got: c.len() });
    }
    if let Some(&bad) = c.iter().find(|&&v| !(v > 0.0 && v.is_finite())) {
        return Err(JackknifeError::NonPositive(bad));
    }
    if c[0] != 1.0 {
        return Err(JackknifeError::FirstNotOne(c[0]));
    }
    for i in 0..c.len() {
        for j in (i + 1)..c.len() {
            if c[i] == c[j] {
                return Err(JackknifeError::Duplicate(i, j));
            }
        }
    }
    Ok(())
}

/// Row `m`, column `l`: `c_l^{2m}`.
fn weight_system(c: &[f64]) -> Vec<Vec<f64>> {
    (0..c.len())
        .map(|m| c.iter().map(|cl| cl.powi(2 * m as i32)).collect())
        .collect()
}

/// LU factorization with partial pivoting, stored in place.
struct Lu {
    lu: Vec<Vec<f64>>,
    perm: Vec<usize>,
}

impl Lu {
    fn factor(mut a: Vec<Vec<f64>>) -> Result<Self, JackknifeError> {
        let n = a.len();
        let mut perm: Vec<usize> = (0..n).collect();
        for col in 0..n {
            let pivot = (col..n)
                .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
                .unwrap_or(col);
            if a[pivot][col] == 0.0 || !a[pivot][col].is_finite() {
                return Err(JackknifeError::Singular);
            }
            a.swap(col, pivot);
            perm.swap(col, pivot);
            for row in (col + 1)..n {
                let factor = a[row][col] / a[col][col];
                a[row][col] = factor;
                for k in (col + 1)..n {
                    a[row][k] -= factor * a[col][k];
                }
            }
        }
        Ok(Self { lu: a, perm })
    }

    fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = b.len();
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            for k in 0..i {
                x[i] -= self.lu[i][k] * x[k];
            }
        }
        for i in (0..n).rev() {
            for k in (i + 1)..n {
                x[i] -= self.lu[i][k] * x[k];
            }
            x[i] /= self.lu[i][i];
        }
        x
    }
}

/// `b - A x`, accumulated with compensation.
fn residual(a: &[Vec<f64>], x: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter()
        .zip(b)
        .map(|(row, &bi)| {
            let mut s = NeumaierSum::new();
            s.add(bi);
            for (aij, xj) in row.iter().zip(x) {
                s.add(-aij * xj);
            }
            s.value()
        })
        .collect()
}

fn inf_norm(a: &[Vec<f64>]) -> f64 {
    a.iter().map(|row| row.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
}

fn solve_lambda_with_condition(order: usize, c: &[f64]) -> Result<(Vec<f64>, f64), JackknifeError> {
    validate(order, c)?;
    let n = c.len();
    let a = weight_system(c);
    let lu = Lu::factor(a.clone())?;
    let mut rhs = vec![0.0; n];
    rhs[0] = 1.0;

    let mut lambda = lu.solve(&rhs);
    for _ in 0..3 {
        let r = residual(&a, &lambda, &rhs);
        if r.iter().all(|v| *v == 0.0) {
            break;
        }
        let delta = lu.solve(&r);
        for (l, d) in lambda.iter_mut().zip(&delta) {
            *l += d;
        }
    }
    if lambda.iter().any(|v| !v.is_finite()) {
        return Err(JackknifeError::Singular);
    }

    let mut inverse = vec![vec![0.0; n]; n];
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        let col = lu.solve(&e);
        for i in 0..n {
            inverse[i][j] = col[i];
        }
    }
    Ok((lambda, inf_norm(&a) * inf_norm(&inverse)))
}

/// Jackknife weights `λ(c)` for order `L`.
pub fn solve_lambda(order: usize, c: &[f64]) -> Result<Vec<f64>, JackknifeError> {
    solve_lambda_with_condition(order, c).map(|(l, _)| l)
}

/// Max-norm residual of the weight system at `lambdas`, with compensated sums.
pub fn weight_residual(c: &[f64], lambdas: &[f64]) -> f64 {
    let a = weight_system(c);
    let mut rhs = vec![0.0; c.len()];
    rhs[0] = 1.0;
    residual(&a, lambdas, &rhs).iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// `Σ_l λ_l θ_l`, accumulated in level order.
pub fn debias_combine(estimates: &[Vec<f64>], plan: &DebiasPlan) -> Result<Vec<f64>, JackknifeError> {
    if estimates.len() != plan.lambdas.len() {
        return Err(JackknifeError::EstimateCount { expected: plan.lambdas.len(), got: estimates.len() });
    }
    let k = estimates[0].len();
    if estimates.iter().any(|e| e.len() != k) {
        return Err(JackknifeError::EstimateDimension);
    }
    let mut out: Vec<f64> = estimates[0].iter().map(|v| plan.lambdas[0] * v).collect();
    for (est, lambda) in estimates.iter().zip(&plan.lambdas).skip(1) {
        for (o, v) in out.iter_mut().zip(est) {
            *o += lambda * v;
        }
    }
    Ok(out)
}
