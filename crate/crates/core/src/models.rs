//! Pairwise losses `m(z_i, z_j; θ)` and scores `s(z_i, z_j; θ)` for the
//! partially linear regression (PLR), logit (PLL) and Tobit (PLT) models.
//!
//! Every loss depends on θ only through the pair index `u = (x_i - x_j)'θ`,
//! so the hot paths work with scalar functions of `(y_i, y_j, u)` and the
//! score is `(x_i - x_j) · ∂m/∂u`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Dataset, ObservationRef};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("parameter has dimension {got}, regressors have dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("observation {row}: outcome {value} is not binary (logit model needs y in {{0, 1}})")]
    NonBinaryOutcome { row: usize, value: f64 },
    #[error("observation {row}: outcome {value} is negative (Tobit model needs y >= 0)")]
    NegativeOutcome { row: usize, value: f64 },
    #[error("unknown model `{0}` (expected plr, pll or plt)")]
    UnknownModel(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairwiseModel {
    Plr,
    Pll,
    Plt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Smoothness {
    Quadratic,
    Smooth,
    PiecewiseLinear,
}

/// Location of a piecewise-linear loss's kink in `u` and the one-sided slopes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kink {
    pub at: f64,
    pub left_slope: f64,
    pub right_slope: f64,
}

/// Logistic CDF without overflow.
#[inline]
pub fn logistic(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^t)` without overflow, i.e. `-ln Λ(-t)`.
#[inline]
fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

impl PairwiseModel {
    pub const ALL: [PairwiseModel; 3] = [PairwiseModel::Plr, PairwiseModel::Pll, PairwiseModel::Plt];

    pub fn as_str(&self) -> &'static str {
        match self {
            PairwiseModel::Plr => "plr",
            PairwiseModel::Pll => "pll",
            PairwiseModel::Plt => "plt",
        }
    }

    pub fn smoothness(&self) -> Smoothness {
        match self {
            PairwiseModel::Plr => Smoothness::Quadratic,
            PairwiseModel::Pll => Smoothness::Smooth,
            PairwiseModel::Plt => Smoothness::PiecewiseLinear,
        }
    }

    /// Checks the outcome domain once for the whole sample.
    pub fn validate_outcomes(&self, data: &Dataset) -> Result<(), ModelError> {
        for (row, &value) in data.outcomes().iter().enumerate() {
            self.validate_outcome(row, value)?;
        }
        Ok(())
    }

    fn validate_outcome(&self, row: usize, value: f64) -> Result<(), ModelError> {
        match self {
            PairwiseModel::Plr => Ok(()),
            PairwiseModel::Pll if value != 0.0 && value != 1.0 => Err(ModelError::NonBinaryOutcome { row, value }),
            PairwiseModel::Plt if value < 0.0 => Err(ModelError::NegativeOutcome { row, value }),
            _ => Ok(()),
        }
    }

    /// `m` as a function of the pair index `u`.
    #[inline]
    pub fn pair_loss(&self, yi: f64, yj: f64, u: f64) -> f64 {
        match self {
            PairwiseModel::Plr => {
                let r = (yi - yj) - u;
                0.5 * r * r
            }
            PairwiseModel::Pll => {
                if yi == yj {
                    0.0
                } else {
                    yi * softplus(-u) + yj * softplus(u)
                }
            }
            PairwiseModel::Plt => match (yi > 0.0, yj > 0.0) {
                (true, true) => {
                    let dy = yi - yj;
                    (dy - u).abs() - dy.abs()
                }
                (true, false) => (yi - u).max(0.0) - yi,
                (false, true) => (yj + u).max(0.0) - yj,
                (false, false) => 0.0,
            },
        }
    }

    /// `∂m/∂u`; for PLT the element of the subdifferential selected by the
    /// strict-inequality indicators.
    #[inline]
    pub fn pair_slope(&self, yi: f64, yj: f64, u: f64) -> f64 {
        match self {
            PairwiseModel::Plr => -((yi - yj) - u),
            PairwiseModel::Pll => {
                if yi == yj {
                    0.0
                } else {
                    -(yi - logistic(u))
                }
            }
            PairwiseModel::Plt => {
                let up = (yj > (yi - u).max(0.0)) as i32 as f64;
                let down = (yi > (yj + u).max(0.0)) as i32 as f64;
                up - down
            }
        }
    }

    /// `∂²m/∂u²` where it exists (zero for PLT away from kinks).
    #[inline]
    pub fn pair_curvature(&self, yi: f64, yj: f64, u: f64) -> f64 {
        match self {
            PairwiseModel::Plr => 1.0,
            PairwiseModel::Pll => {
                if yi == yj {
                    0.0
                } else {
                    let p = logistic(u);
                    p * (1.0 - p)
                }
            }
            PairwiseModel::Plt => 0.0,
        }
    }

    /// The single kink of a PLT pair loss, if the pair contributes at all.
    pub fn kink(&self, yi: f64, yj: f64) -> Option<Kink> {
        if *self != PairwiseModel::Plt {
            return None;
        }
        match (yi > 0.0, yj > 0.0) {
            (true, true) => Some(Kink { at: yi - yj, left_slope: -1.0, right_slope: 1.0 }),
            (true, false) => Some(Kink { at: yi, left_slope: -1.0, right_slope: 0.0 }),
            (false, true) => Some(Kink { at: -yj, left_slope: 0.0, right_slope: 1.0 }),
            (false, false) => None,
        }
    }

    pub fn loss(&self, zi: ObservationRef<'_>, zj: ObservationRef<'_>, theta: &[f64]) -> Result<f64, ModelError> {
        let u = pair_index(zi, zj, theta)?;
        self.validate_outcome(0, zi.y)?;
        self.validate_outcome(1, zj.y)?;
        Ok(self.pair_loss(zi.y, zj.y, u))
    }

    pub fn score(&self, zi: ObservationRef<'_>, zj: ObservationRef<'_>, theta: &[f64]) -> Result<Vec<f64>, ModelError> {
        let u = pair_index(zi, zj, theta)?;
        self.validate_outcome(0, zi.y)?;
        self.validate_outcome(1, zj.y)?;
        let slope = self.pair_slope(zi.y, zj.y, u);
        Ok(zi.x.iter().zip(zj.x).map(|(a, b)| (a - b) * slope).collect())
    }
}

impl fmt::Display for PairwiseModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PairwiseModel {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "plr" => Ok(PairwiseModel::Plr),
            "pll" => Ok(PairwiseModel::Pll),
            "plt" => Ok(PairwiseModel::Plt),
            other => Err(ModelError::UnknownModel(other.to_string())),
        }
    }
}

/// `(x_i - x_j)'θ`.
pub fn pair_index(zi: ObservationRef<'_>, zj: ObservationRef<'_>, theta: &[f64]) -> Result<f64, ModelError> {
    if zi.x.len() != theta.len() || zj.x.len() != theta.len() {
        let got = if zi.x.len() != theta.len() { zi.x.len() } else { zj.x.len() };
        return Err(ModelError::DimensionMismatch { expected: theta.len(), got });
    }
    Ok(zi.x.iter().zip(zj.x).zip(theta).map(|((a, b), t)| (a - b) * t).sum())
}

pub fn plr_m(zi: ObservationRef<'_>, zj: ObservationRef<'_>, theta: &[f64]) -> Result<f64, ModelError> {
    PairwiseModel::Plr.loss(zi, zj, theta)
}

pub fn plr_s(zi: ObservationRef<'_>, zj: ObservationRef<'_>, theta: &[f64]) -> Result<Vec<f64>, ModelError> {
    PairwiseModel::Plr.score(zi, zj, theta)
}

pub fn pll_m(zi: ObservationRef<'_>, zj: ObservationRef<'_>, theta: &[f64]) -> Result<f64, ModelError> {
    PairwiseModel::Pll.loss(zi, zj, theta)
}

pub fn pll_s(zi: ObservationRef<'_>, zj: ObservationRef<'_>, theta: &[f64]) -> Result<Vec<f64>, ModelError> {
    PairwiseModel::Pll.score(zi, zj, theta)
}

pub fn plt_m(zi: ObservationRef<'_>, zj: ObservationRef<'_>, theta: &[f64]) -> Result<f64, ModelError> {
    PairwiseModel::Plt.loss(zi, zj, theta)
}

pub fn plt_s(zi: ObservationRef<'_>, zj: ObservationRef<'_>, theta: &[f64]) -> Result<Vec<f64>, ModelError> {
    PairwiseModel::Plt.score(zi, zj, theta)
}
