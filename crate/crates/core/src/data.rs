//! Observed data `(W, A, Y)` with binary treatment.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// `n` observations of covariates `W ∈ ℝᵈ`, treatment `A ∈ {0, 1}` and outcome `Y`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    w: DMatrix<f64>,
    a: DVector<f64>,
    y: DVector<f64>,
}

impl Dataset {
    /// Validates shapes, finiteness and that every treatment value is 0 or 1.
    pub fn new(w: DMatrix<f64>, a: DVector<f64>, y: DVector<f64>) -> Result<Self> {
        let n = w.nrows();
        if a.len() != n || y.len() != n {
            return Err(Error::Dimension(format!(
                "covariates have {n} rows but A has {} and Y has {}",
                a.len(),
                y.len()
            )));
        }
        if let Some(i) = (0..n).find(|&i| w.row(i).iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite(format!("covariate row {i}")));
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("outcome at row {i}")));
        }
        if let Some(i) = a.iter().position(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::InvalidArgument(format!(
                "treatment at row {i} is {}, expected 0 or 1",
                a[i]
            )));
        }
        Ok(Self { w, a, y })
    }

    pub fn n(&self) -> usize {
        self.w.nrows()
    }

    pub fn dim(&self) -> usize {
        self.w.ncols()
    }

    pub fn w(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn a(&self) -> &DVector<f64> {
        &self.a
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn treated_count(&self) -> usize {
        self.a.iter().filter(|&&v| v == 1.0).count()
    }

    /// Copy with rows reordered so that row `i` of the result is row `order[i]` of `self`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        let w = DMatrix::from_fn(order.len(), self.dim(), |i, j| self.w[(order[i], j)]);
        let a = DVector::from_iterator(order.len(), order.iter().map(|&i| self.a[i]));
        let y = DVector::from_iterator(order.len(), order.iter().map(|&i| self.y[i]));
        Self { w, a, y }
    }
}
