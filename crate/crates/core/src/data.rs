//! Observations `z_i = (y_i, x_i, w_i)` and datasets.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DataError {
    #[error("a dataset needs at least 2 observations, got {0}")]
    TooFewObservations(usize),
    #[error("regressor and kernel-covariate dimensions must be positive (k={k}, d={d})")]
    ZeroDimension { k: usize, d: usize },
    #[error("observation {row}: {field} has length {got}, expected {expected}")]
    InconsistentDimension { row: usize, field: &'static str, expected: usize, got: usize },
    #[error("observation {row}: non-finite value in {field}")]
    NonFinite { row: usize, field: &'static str },
}

/// A borrowed view of one observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObservationRef<'a> {
    pub y: f64,
    pub x: &'a [f64],
    pub w: &'a [f64],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub y: f64,
    pub x: Vec<f64>,
    pub w: Vec<f64>,
}

impl Observation {
    pub fn new(y: f64, x: Vec<f64>, w: Vec<f64>) -> Self {
        Self { y, x, w }
    }

    pub fn view(&self) -> ObservationRef<'_> {
        ObservationRef { y: self.y, x: &self.x, w: &self.w }
    }
}

/// An immutable sample stored column-major by field (row-major within `x` and `w`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    n: usize,
    k: usize,
    d: usize,
    y: Vec<f64>,
    x: Vec<f64>,
    w: Vec<f64>,
}

impl Dataset {
    pub fn from_observations(obs: &[Observation]) -> Result<Self, DataError> {
        let n = obs.len();
        if n < 2 {
            return Err(DataError::TooFewObservations(n));
        }
        let k = obs[0].x.len();
        let d = obs[0].w.len();
        let mut y = Vec::with_capacity(n);
        let mut x = Vec::with_capacity(n * k);
        let mut w = Vec::with_capacity(n * d);
        for (row, o) in obs.iter().enumerate() {
            if o.x.len() != k {
                return Err(DataError::InconsistentDimension { row, field: "x", expected: k, got: o.x.len() });
            }
            if o.w.len() != d {
                return Err(DataError::InconsistentDimension { row, field: "w", expected: d, got: o.w.len() });
            }
            y.push(o.y);
            x.extend_from_slice(&o.x);
            w.extend_from_slice(&o.w);
        }
        Self::from_parts(n, k, d, y, x, w)
    }

    /// Builds a dataset from flat row-major buffers.
    pub fn from_parts(n: usize, k: usize, d: usize, y: Vec<f64>, x: Vec<f64>, w: Vec<f64>) -> Result<Self, DataError> {
        if n < 2 {
            return Err(DataError::TooFewObservations(n));
        }
        if k == 0 || d == 0 {
            return Err(DataError::ZeroDimension { k, d });
        }
        if y.len() != n {
            return Err(DataError::InconsistentDimension { row: 0, field: "y", expected: n, got: y.len() });
        }
        if x.len() != n * k {
            return Err(DataError::InconsistentDimension { row: 0, field: "x", expected: n * k, got: x.len() });
        }
        if w.len() != n * d {
            return Err(DataError::InconsistentDimension { row: 0, field: "w", expected: n * d, got: w.len() });
        }
        for row in 0..n {
            if !y[row].is_finite() {
                return Err(DataError::NonFinite { row, field: "y" });
            }
            if x[row * k..(row + 1) * k].iter().any(|v| !v.is_finite()) {
                return Err(DataError::NonFinite { row, field: "x" });
            }
            if w[row * d..(row + 1) * d].iter().any(|v| !v.is_finite()) {
                return Err(DataError::NonFinite { row, field: "w" });
            }
        }
        Ok(Self { n, k, d, y, x, w })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn d(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn y(&self, i: usize) -> f64 {
        self.y[i]
    }

    #[inline]
    pub fn x(&self, i: usize) -> &[f64] {
        &self.x[i * self.k..(i + 1) * self.k]
    }

    #[inline]
    pub fn w(&self, i: usize) -> &[f64] {
        &self.w[i * self.d..(i + 1) * self.d]
    }

    pub fn outcomes(&self) -> &[f64] {
        &self.y
    }

    pub fn obs(&self, i: usize) -> ObservationRef<'_> {
        ObservationRef { y: self.y[i], x: self.x(i), w: self.w(i) }
    }

    pub fn observations(&self) -> impl Iterator<Item = ObservationRef<'_>> {
        (0..self.n).map(move |i| self.obs(i))
    }

    /// The dataset made of rows `indices` (repeats allowed).
    pub fn select(&self, indices: &[usize]) -> Result<Self, DataError> {
        let mut y = Vec::with_capacity(indices.len());
        let mut x = Vec::with_capacity(indices.len() * self.k);
        let mut w = Vec::with_capacity(indices.len() * self.d);
        for &i in indices {
            y.push(self.y[i]);
            x.extend_from_slice(self.x(i));
            w.extend_from_slice(self.w(i));
        }
        Self::from_parts(indices.len(), self.k, self.d, y, x, w)
    }
}
