//! Additive dictionary of first-order hinge functions `x ↦ (x − u)·1(x ≥ u)`.
//!
//! A [`BasisSpec`] lists knots per covariate. Expanding it against data gives a
//! [`DesignMatrix`] whose columns are, in order: the optional intercept, then for
//! each covariate its optional linear term followed by its hinges. With the
//! [`Block::TreatmentInteracted`] layout the whole list is repeated with every
//! column multiplied by the treatment indicator.

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};

/// First-order hinge at knot `u`; the indicator is inclusive at the knot.
#[inline]
pub fn hinge(x: f64, u: f64) -> f64 {
    if x >= u {
        x - u
    } else {
        0.0
    }
}

/// Inverse-ECDF quantile of an ascending sample: the smallest `x` with `F(x) ≥ p`.
pub fn empirical_quantile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty sample");
    let n = sorted.len();
    // F(x_(k)) = k/n; take the smallest k with k ≥ n·p, guarding against n·p
    // landing a hair above an integer.
    let target = n as f64 * p;
    let mut k = target.ceil() as usize;
    if k > 0 && (target - (k - 1) as f64).abs() < 1e-9 * n as f64 {
        k -= 1;
    }
    sorted[k.clamp(1, n) - 1]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Block {
    CovariateOnly,
    TreatmentInteracted,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Term {
    Intercept,
    Linear { covariate: usize },
    Hinge { covariate: usize, knot: f64 },
}

/// Identifies one column of an expanded design.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColumnLabel {
    pub term: Term,
    /// Whether the column is multiplied by the treatment indicator.
    pub interacted: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BasisSpec {
    knots: Vec<Vec<f64>>,
    include_intercept: bool,
    include_linear_terms: bool,
    block: Block,
    degenerate: Vec<usize>,
}

impl BasisSpec {
    /// Spec from explicit knot lists, one per covariate. Each list must be
    /// strictly ascending and finite.
    pub fn from_knots(knots: Vec<Vec<f64>>, block: Block) -> Result<Self> {
        for (j, list) in knots.iter().enumerate() {
            if list.iter().any(|u| !u.is_finite()) {
                return Err(Error::NonFinite(format!("knot list of covariate {j}")));
            }
            if list.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidArgument(format!(
                    "knots of covariate {j} are not strictly ascending"
                )));
            }
        }
        Ok(Self {
            knots,
            include_intercept: false,
            include_linear_terms: false,
            block,
            degenerate: Vec::new(),
        })
    }

    /// `per_covariate` equally spaced interior knots on `(lo, hi)` for each of `dim` covariates.
    pub fn uniform(dim: usize, per_covariate: usize, lo: f64, hi: f64, block: Block) -> Self {
        let step = (hi - lo) / (per_covariate + 1) as f64;
        let list: Vec<f64> = (1..=per_covariate).map(|k| lo + step * k as f64).collect();
        Self::from_knots(vec![list; dim], block).expect("uniform knots are ascending")
    }

    /// Intercept-only spec for `dim` covariates.
    pub fn intercept_only(dim: usize) -> Self {
        Self::from_knots(vec![Vec::new(); dim], Block::CovariateOnly)
            .expect("empty knot lists are valid")
            .with_intercept(true)
    }

    pub fn with_intercept(mut self, on: bool) -> Self {
        self.include_intercept = on;
        self
    }

    pub fn with_linear_terms(mut self, on: bool) -> Self {
        self.include_linear_terms = on;
        self
    }

    pub fn with_block(mut self, block: Block) -> Self {
        self.block = block;
        self
    }

    pub fn dim(&self) -> usize {
        self.knots.len()
    }

    pub fn knots(&self) -> &[Vec<f64>] {
        &self.knots
    }

    pub fn block(&self) -> Block {
        self.block
    }

    pub fn include_intercept(&self) -> bool {
        self.include_intercept
    }

    pub fn include_linear_terms(&self) -> bool {
        self.include_linear_terms
    }

    /// Covariates that were constant in the sample used to place knots.
    pub fn degenerate_covariates(&self) -> &[usize] {
        &self.degenerate
    }

    fn has_linear(&self, j: usize) -> bool {
        self.include_linear_terms && !self.degenerate.contains(&j)
    }

    /// Number of hinge columns in one block.
    pub fn hinge_count(&self) -> usize {
        self.knots.iter().map(Vec::len).sum()
    }

    fn block_width(&self) -> usize {
        let linear = (0..self.dim()).filter(|&j| self.has_linear(j)).count();
        usize::from(self.include_intercept) + linear + self.hinge_count()
    }

    pub fn n_columns(&self) -> usize {
        match self.block {
            Block::CovariateOnly => self.block_width(),
            Block::TreatmentInteracted => 2 * self.block_width(),
        }
    }

    fn block_terms(&self) -> Vec<Term> {
        let mut terms = Vec::with_capacity(self.block_width());
        if self.include_intercept {
            terms.push(Term::Intercept);
        }
        for (j, list) in self.knots.iter().enumerate() {
            if self.has_linear(j) {
                terms.push(Term::Linear { covariate: j });
            }
            terms.extend(list.iter().map(|&knot| Term::Hinge { covariate: j, knot }));
        }
        terms
    }

    pub fn labels(&self) -> Vec<ColumnLabel> {
        let terms = self.block_terms();
        let mut labels: Vec<ColumnLabel> =
            terms.iter().map(|&term| ColumnLabel { term, interacted: false }).collect();
        if self.block == Block::TreatmentInteracted {
            labels.extend(terms.iter().map(|&term| ColumnLabel { term, interacted: true }));
        }
        labels
    }

    pub fn expand(&self, data: &Dataset) -> Result<DesignMatrix> {
        self.expand_with(data.w(), data.a().as_slice())
    }

    /// Expansion with every treatment value set to `a` (counterfactual design).
    pub fn expand_at(&self, w: &DMatrix<f64>, a: f64) -> Result<DesignMatrix> {
        self.expand_with(w, &vec![a; w.nrows()])
    }

    /// Expansion for covariate rows `w` and per-row treatment values `a`.
    pub fn expand_with(&self, w: &DMatrix<f64>, a: &[f64]) -> Result<DesignMatrix> {
        if w.ncols() != self.dim() {
            return Err(Error::Dimension(format!(
                "basis expects {} covariates, data has {}",
                self.dim(),
                w.ncols()
            )));
        }
        if a.len() != w.nrows() {
            return Err(Error::Dimension(format!(
                "{} treatment values for {} rows",
                a.len(),
                w.nrows()
            )));
        }
        let n = w.nrows();
        let terms = self.block_terms();
        let width = terms.len();
        let labels = self.labels();
        let mut values = DMatrix::zeros(n, labels.len());
        for (c, term) in terms.iter().enumerate() {
            let mut col = values.column_mut(c);
            match *term {
                Term::Intercept => col.fill(1.0),
                Term::Linear { covariate } => col.copy_from(&w.column(covariate)),
                Term::Hinge { covariate, knot } => {
                    for (dst, &x) in col.iter_mut().zip(w.column(covariate).iter()) {
                        *dst = hinge(x, knot);
                    }
                }
            }
        }
        if self.block == Block::TreatmentInteracted {
            for c in 0..width {
                let (base, mut rest) = values.columns_range_pair_mut(c, width..);
                let mut dst = rest.column_mut(c);
                for i in 0..n {
                    dst[i] = a[i] * base[i];
                }
            }
        }
        Ok(DesignMatrix { values, labels })
    }
}

/// Additive hinge basis with knots at the empirical quantiles `k/(K+1)`,
/// `k = 1..K`, of each covariate. Duplicate knots are collapsed; a constant
/// covariate contributes no columns and is recorded as degenerate.
pub fn build_additive_basis(
    w: &DMatrix<f64>,
    knots_per_covariate: usize,
    block: Block,
) -> Result<BasisSpec> {
    if w.nrows() == 0 {
        return Err(Error::InvalidArgument("empty covariate sample".into()));
    }
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("covariate sample".into()));
    }
    let mut knots = Vec::with_capacity(w.ncols());
    let mut degenerate = Vec::new();
    for j in 0..w.ncols() {
        let mut sorted: Vec<f64> = w.column(j).iter().copied().collect();
        sorted.sort_by(f64::total_cmp);
        if sorted[0] == sorted[sorted.len() - 1] {
            warn!("covariate {j} is constant; it contributes no basis columns");
            degenerate.push(j);
            knots.push(Vec::new());
            continue;
        }
        let k = knots_per_covariate as f64 + 1.0;
        let mut list: Vec<f64> = (1..=knots_per_covariate)
            .map(|i| empirical_quantile(&sorted, i as f64 / k))
            .collect();
        list.dedup();
        knots.push(list);
    }
    let mut spec = BasisSpec::from_knots(knots, block)?;
    spec.degenerate = degenerate;
    Ok(spec)
}

/// Knots per covariate and block so that `blocks` additive blocks over `dim`
/// covariates hold about `dictionary_size` hinge columns in total.
pub fn knots_for_dictionary(dictionary_size: usize, dim: usize, blocks: usize) -> usize {
    let per = dictionary_size as f64 / (blocks * dim) as f64;
    (per.round() as usize).max(1)
}

/// Dense expanded design with column provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    values: DMatrix<f64>,
    labels: Vec<ColumnLabel>,
}

impl DesignMatrix {
    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn into_values(self) -> DMatrix<f64> {
        self.values
    }

    pub fn labels(&self) -> &[ColumnLabel] {
        &self.labels
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    /// Sub-design keeping `columns` in the given order.
    pub fn select(&self, columns: &[usize]) -> DesignMatrix {
        DesignMatrix {
            values: self.values.select_columns(columns),
            labels: columns.iter().map(|&c| self.labels[c]).collect(),
        }
    }

    /// Evaluates `Σ_j coef_j · column_j` row-wise.
    pub fn predict(&self, coef: &DVector<f64>) -> DVector<f64> {
        &self.values * coef
    }
}
