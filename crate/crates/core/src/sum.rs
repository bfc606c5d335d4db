//! Compensated accumulation used wherever long sums must be order-stable.

/// Neumaier's variant of Kahan summation.
#[derive(Debug, Clone, Copy, Default)]
pub struct NeumaierSum {
    sum: f64,
    carry: f64,
}

impl NeumaierSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, value: f64) {
        let t = self.sum + value;
        if self.sum.abs() >= value.abs() {
            self.carry += (self.sum - t) + value;
        } else {
            self.carry += (value - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

/// A vector of compensated accumulators of fixed length.
#[derive(Debug, Clone)]
pub struct NeumaierVec {
    parts: Vec<NeumaierSum>,
}

impl NeumaierVec {
    pub fn zeros(len: usize) -> Self {
        Self { parts: vec![NeumaierSum::new(); len] }
    }

    /// Adds `values` element-wise. Panics if lengths differ.
    #[inline]
    pub fn add_slice(&mut self, values: &[f64]) {
        assert_eq!(values.len(), self.parts.len());
        for (acc, v) in self.parts.iter_mut().zip(values) {
            acc.add(*v);
        }
    }

    pub fn values(&self) -> Vec<f64> {
        self.parts.iter().map(NeumaierSum::value).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_cancelled_terms() {
        let mut s = NeumaierSum::new();
        for v in [1.0, 1e100, 1.0, -1e100] {
            s.add(v);
        }
        assert_eq!(s.value(), 2.0);
    }

    #[test]
    fn vector_accumulates_elementwise() {
        let mut v = NeumaierVec::zeros(2);
        v.add_slice(&[1.0, 2.0]);
        v.add_slice(&[0.5, -2.0]);
        assert_eq!(v.values(), vec![1.5, 0.0]);
    }
}
