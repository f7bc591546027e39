//! Penalized least squares: coordinate descent, K-fold cross-validation over a
//! penalty grid, and relaxed (unpenalized) refits on a selected support.
//!
//! The objective is
//!
//! ```text
//! (1/2n) Σ wᵢ (yᵢ − b₀ − xᵢᵀβ)² + λ Σ_j pf_j |β̃_j|,     n = Σ wᵢ,
//! ```
//!
//! where `β̃` are the coefficients of the standardized columns (weighted mean
//! zero when an intercept is fitted, unit weighted variance). A zero penalty
//! weight leaves a column unpenalized. Coefficients are always reported on the
//! original scale.

mod cd;
mod cv;

use nalgebra::{DMatrix, DVector};

pub use cd::{soft_threshold, LassoOptions};
pub(crate) use cd::{Moments, PathSolver, Standardized};
pub use cv::{
    cross_validate, fold_assignment, lambda_grid, lambda_max, CvPlan, CvPoint, CvResult, CvWorkspace,
    DEFAULT_FOLDS, DEFAULT_LAMBDA_MIN_RATIO, DEFAULT_N_LAMBDA,
};

use crate::error::{Error, Result};
use crate::linalg::LeastSquares;

/// A fitted linear model with its penalty level and support.
#[derive(Debug, Clone, PartialEq)]
pub struct LassoFit {
    pub coefficients: DVector<f64>,
    pub intercept: f64,
    pub lambda: f64,
    /// Indices `j` with `coefficients[j] != 0`, ascending.
    pub support: Vec<usize>,
    pub objective_value: f64,
    pub sweeps: usize,
    /// Objective after each sweep, when requested through [`LassoOptions::record_objective`].
    pub objective_trace: Vec<f64>,
}

impl LassoFit {
    pub fn predict(&self, x: &DMatrix<f64>) -> DVector<f64> {
        let mut out = DVector::from_element(x.nrows(), self.intercept);
        for &j in &self.support {
            out.axpy(self.coefficients[j], &x.column(j), 1.0);
        }
        out
    }
}

pub(crate) fn support_of(coef: &DVector<f64>) -> Vec<usize> {
    coef.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(j, _)| j).collect()
}

pub(crate) fn check_problem(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    penalty_weights: &[f64],
    obs_weights: Option<&[f64]>,
) -> Result<()> {
    let (n, p) = x.shape();
    if y.len() != n {
        return Err(Error::Dimension(format!("{} responses for {n} rows", y.len())));
    }
    if penalty_weights.len() != p {
        return Err(Error::Dimension(format!("{} penalty weights for {p} columns", penalty_weights.len())));
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("design or response".into()));
    }
    if penalty_weights.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::InvalidArgument("penalty weights must be finite and nonnegative".into()));
    }
    if let Some(w) = obs_weights {
        if w.len() != n {
            return Err(Error::Dimension(format!("{} observation weights for {n} rows", w.len())));
        }
        if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidArgument("observation weights must be finite and nonnegative".into()));
        }
    }
    Ok(())
}

pub(crate) fn finish_fit(
    prob: &Standardized,
    solver: &PathSolver<'_>,
    lambda: f64,
    sweeps: usize,
    trace: Vec<f64>,
) -> LassoFit {
    let (coefficients, intercept) = prob.unstandardize(&solver.beta);
    LassoFit {
        support: support_of(&coefficients),
        coefficients,
        intercept,
        lambda,
        objective_value: solver.objective(lambda),
        sweeps,
        objective_trace: trace,
    }
}

/// Lasso fit at a single penalty level, started from zero.
pub fn coordinate_descent(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    lambda: f64,
    penalty_weights: &[f64],
    obs_weights: Option<&[f64]>,
    opts: &LassoOptions,
) -> Result<LassoFit> {
    check_problem(x, y, penalty_weights, obs_weights)?;
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(Error::InvalidArgument(format!("penalty level {lambda}")));
    }
    let prob = Standardized::new(&Moments::new(x, y, obs_weights), opts.fit_intercept)?;
    let mut solver = PathSolver::new(&prob, penalty_weights);
    let info = solver.solve(lambda, opts, false)?;
    if opts.polish {
        solver.polish(lambda, opts);
    }
    Ok(finish_fit(&prob, &solver, lambda, info.sweeps, info.trace))
}

/// Lasso fits along a decreasing penalty path with warm starts.
pub fn lasso_path(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    lambdas: &[f64],
    penalty_weights: &[f64],
    obs_weights: Option<&[f64]>,
    opts: &LassoOptions,
) -> Result<Vec<LassoFit>> {
    check_problem(x, y, penalty_weights, obs_weights)?;
    let prob = Standardized::new(&Moments::new(x, y, obs_weights), opts.fit_intercept)?;
    let mut solver = PathSolver::new(&prob, penalty_weights);
    lambdas
        .iter()
        .map(|&lambda| {
            let info = solver.solve(lambda, opts, false)?;
            if opts.polish {
                solver.polish(lambda, opts);
            }
            Ok(finish_fit(&prob, &solver, lambda, info.sweeps, info.trace))
        })
        .collect()
}

/// Largest KKT residual of `fit`, measured on the standardized scale used by the solver.
///
/// For `j` off the support this is `max(0, |g_j| − λ pf_j)`; on the support it is
/// `|g_j − λ pf_j sign(β_j)|`, with `g_j = (1/n) Σ wᵢ x̃ᵢⱼ rᵢ`.
pub fn kkt_violation(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    fit: &LassoFit,
    penalty_weights: &[f64],
    obs_weights: Option<&[f64]>,
    fit_intercept: bool,
) -> Result<f64> {
    check_problem(x, y, penalty_weights, obs_weights)?;
    let prob = Standardized::new(&Moments::new(x, y, obs_weights), fit_intercept)?;
    let resid = y - fit.predict(x);
    let n = x.nrows();
    let w: Vec<f64> = obs_weights.map(<[f64]>::to_vec).unwrap_or_else(|| vec![1.0; n]);
    let sw: f64 = w.iter().sum();
    let mut worst: f64 = 0.0;
    for (j, &pf) in penalty_weights.iter().enumerate() {
        let s = prob.scale[j];
        if s == 0.0 {
            continue;
        }
        let col = x.column(j);
        let g: f64 = (0..n).map(|i| w[i] * (col[i] - prob.x_mean[j]) * resid[i]).sum::<f64>() / (sw * s);
        let t = fit.lambda * pf;
        let b = fit.coefficients[j];
        let v = if b != 0.0 { (g - t * b.signum()).abs() } else { (g.abs() - t).max(0.0) };
        worst = worst.max(v);
    }
    Ok(worst)
}

/// Minimum-norm weighted least squares `argmin Σ wᵢ (yᵢ − xᵢᵀβ)²` (no implicit intercept).
pub fn solve_wls(x: &DMatrix<f64>, y: &DVector<f64>, obs_weights: Option<&[f64]>) -> Result<DVector<f64>> {
    if y.len() != x.nrows() {
        return Err(Error::Dimension(format!("{} responses for {} rows", y.len(), x.nrows())));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("response".into()));
    }
    LeastSquares::new(x, obs_weights)?.solve(y)
}

/// Unpenalized (weighted) least squares on the `support` columns, plus an
/// intercept when `fit_intercept`. Coefficients off the support are exactly zero.
pub fn relaxed_refit(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    support: &[usize],
    obs_weights: Option<&[f64]>,
    fit_intercept: bool,
) -> Result<LassoFit> {
    let (n, p) = x.shape();
    if y.len() != n {
        return Err(Error::Dimension(format!("{} responses for {n} rows", y.len())));
    }
    if let Some(&j) = support.iter().find(|&&j| j >= p) {
        return Err(Error::InvalidArgument(format!("support index {j} out of range for {p} columns")));
    }
    let offset = usize::from(fit_intercept);
    let mut design = DMatrix::zeros(n, support.len() + offset);
    if fit_intercept {
        design.column_mut(0).fill(1.0);
    }
    for (k, &j) in support.iter().enumerate() {
        design.column_mut(k + offset).copy_from(&x.column(j));
    }
    let sol = solve_wls(&design, y, obs_weights)?;
    let mut coefficients = DVector::zeros(p);
    for (k, &j) in support.iter().enumerate() {
        coefficients[j] = sol[k + offset];
    }
    let intercept = if fit_intercept { sol[0] } else { 0.0 };
    let resid = y - &design * &sol;
    let rss = match obs_weights {
        Some(w) => resid.iter().zip(w).map(|(r, w)| w * r * r).sum::<f64>() / w.iter().sum::<f64>(),
        None => resid.norm_squared() / n.max(1) as f64,
    };
    let support = support_of(&coefficients);
    Ok(LassoFit {
        coefficients,
        intercept,
        lambda: 0.0,
        support,
        objective_value: 0.5 * rss,
        sweeps: 0,
        objective_trace: Vec::new(),
    })
}

#[cfg(test)]
mod tests;
