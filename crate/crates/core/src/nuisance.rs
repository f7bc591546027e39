//! Nuisance fits shared by every estimator: a truncated propensity score, a
//! joint outcome regression on `[φ(w), a, a·φ(w)]`, the conditional mean
//! `m = π μ(1,·) + (1 − π) μ(0,·)`, and the post-Lasso R-learner for the CATE.
//!
//! All fits are in-sample and deterministic given the data and the config seed.

use nalgebra::{DMatrix, DVector};

use crate::basis::{build_additive_basis, BasisSpec, Block};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::lasso::{
    lambda_grid, relaxed_refit, solve_wls, CvPlan, CvResult, CvWorkspace, LassoOptions, DEFAULT_FOLDS,
    DEFAULT_LAMBDA_MIN_RATIO, DEFAULT_N_LAMBDA,
};
use crate::seed::split_seed;

pub const DEFAULT_CUTOFF_GRID: [f64; 8] = [1e-5, 1e-4, 1e-3, 0.005, 0.01, 0.02, 0.05, 0.1];

pub const DEFAULT_CV_PATIENCE: usize = 10;

/// Candidate penalties of the treatment-interacted block relative to the control block.
pub const DEFAULT_PENALTY_RATIOS: [f64; 3] = [1.0, 0.5, 2.0];

#[derive(Debug, Clone, PartialEq)]
pub struct NuisanceConfig {
    /// Hinge knots per covariate in each additive block.
    pub knots_per_covariate: usize,
    pub include_linear_terms: bool,
    pub folds: usize,
    pub n_lambda: usize,
    pub lambda_min_ratio: f64,
    pub penalty_ratios: Vec<f64>,
    /// Early stop for the CV scan, see [`CvWorkspace::run_with_patience`].
    pub cv_patience: Option<usize>,
    pub cutoff_grid: Vec<f64>,
    /// Use this constant propensity instead of fitting one.
    pub known_propensity: Option<f64>,
    pub seed: u64,
    pub lasso: LassoOptions,
}

impl NuisanceConfig {
    pub fn new(knots_per_covariate: usize, seed: u64) -> Self {
        Self {
            knots_per_covariate,
            include_linear_terms: true,
            folds: DEFAULT_FOLDS,
            n_lambda: DEFAULT_N_LAMBDA,
            lambda_min_ratio: DEFAULT_LAMBDA_MIN_RATIO,
            penalty_ratios: DEFAULT_PENALTY_RATIOS.to_vec(),
            cv_patience: Some(DEFAULT_CV_PATIENCE),
            cutoff_grid: DEFAULT_CUTOFF_GRID.to_vec(),
            known_propensity: None,
            seed,
            lasso: LassoOptions::default(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.penalty_ratios.is_empty() || self.penalty_ratios.iter().any(|&r| !r.is_finite() || r <= 0.0) {
            return Err(Error::InvalidArgument("penalty ratios must be positive and finite".into()));
        }
        if self.n_lambda == 0 || !(self.lambda_min_ratio > 0.0 && self.lambda_min_ratio < 1.0) {
            return Err(Error::InvalidArgument("penalty grid needs n_lambda >= 1 and a ratio in (0, 1)".into()));
        }
        if let Some(p) = self.known_propensity {
            if !(p > 0.0 && p < 1.0) {
                return Err(Error::InvalidArgument(format!("known propensity {p} outside (0, 1)")));
            }
        }
        Ok(())
    }
}

/// Result of choosing a penalty (and penalty-weight candidate) by cross-validation.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    /// Selected columns, always including the unpenalized ones.
    pub support: Vec<usize>,
    pub lambda: f64,
    pub candidate: usize,
    pub cv: Option<CvResult>,
}

/// CV-Lasso over several penalty-weight vectors sharing one fold plan. Returns
/// the support at the best `(candidate, λ)`; ties go to the earlier candidate
/// and the larger penalty.
pub fn cv_select(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    obs_weights: Option<&[f64]>,
    candidates: &[Vec<f64>],
    cfg: &NuisanceConfig,
    fit_intercept: bool,
    seed: u64,
) -> Result<Selection> {
    let p = x.ncols();
    if candidates.is_empty() || candidates.iter().any(|pf| pf.len() != p) {
        return Err(Error::Dimension("penalty weight candidates".into()));
    }
    let unpenalized: Vec<usize> = (0..p).filter(|&j| candidates[0][j] == 0.0).collect();
    if candidates.iter().all(|pf| pf.iter().all(|&v| v == 0.0)) {
        return Ok(Selection { support: unpenalized, lambda: 0.0, candidate: 0, cv: None });
    }
    let opts = LassoOptions { fit_intercept, ..cfg.lasso.clone() };
    let plan = CvPlan::hashed(x, y, cfg.folds, seed, vec![0.0])?;
    let ws = CvWorkspace::new(x, y, obs_weights, &plan, &opts)?;
    let mut best: Option<(f64, usize, Vec<f64>, CvResult)> = None;
    for (k, pf) in candidates.iter().enumerate() {
        let grid = lambda_grid(ws.lambda_max(pf)?, cfg.n_lambda, cfg.lambda_min_ratio);
        let cv = ws.run_with_patience(pf, &grid, cfg.cv_patience)?;
        let err = cv.best_error();
        let better = match &best {
            None => true,
            Some((e, ..)) => err < e - 1e-12 * e.abs(),
        };
        if better {
            best = Some((err, k, grid, cv));
        }
    }
    let (_, candidate, grid, cv) = best.expect("at least one candidate");
    let fit = ws.fit_at(&candidates[candidate], &grid, cv.best_index)?;
    let mut support = fit.support.clone();
    support.extend(unpenalized.iter().copied().filter(|j| !fit.support.contains(j)));
    support.sort_unstable();
    Ok(Selection { support, lambda: cv.best_lambda, candidate, cv: Some(cv) })
}

/// Clips every value into `[c, 1 − c]`.
pub fn truncate(raw: &DVector<f64>, cutoff: f64) -> DVector<f64> {
    raw.map(|p| p.clamp(cutoff, 1.0 - cutoff))
}

/// Empirical Riesz loss of the truncated inverse-propensity weights
/// `(1/n) Σ [α_c(Aᵢ, Wᵢ)² − 2{1/π_c(Wᵢ) + 1/(1 − π_c(Wᵢ))}]`.
pub fn truncation_loss(raw: &DVector<f64>, a: &DVector<f64>, cutoff: f64) -> f64 {
    let n = raw.len() as f64;
    raw.iter()
        .zip(a.iter())
        .map(|(&p, &ai)| {
            let pc = p.clamp(cutoff, 1.0 - cutoff);
            let alpha = ai / pc - (1.0 - ai) / (1.0 - pc);
            alpha * alpha - 2.0 * (1.0 / pc + 1.0 / (1.0 - pc))
        })
        .sum::<f64>()
        / n
}

/// Cutoff in `grid` minimizing [`truncation_loss`], preferring smaller cutoffs on ties.
pub fn select_truncation(raw: &DVector<f64>, a: &DVector<f64>, grid: &[f64]) -> Result<f64> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("empty truncation grid".into()));
    }
    if grid.iter().any(|c| !(*c > 0.0 && *c < 0.5)) || grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument("truncation grid must be ascending inside (0, 0.5)".into()));
    }
    if raw.len() != a.len() || raw.is_empty() {
        return Err(Error::Dimension(format!("{} propensities for {} treatments", raw.len(), a.len())));
    }
    let mut best = (truncation_loss(raw, a, grid[0]), grid[0]);
    for &c in &grid[1..] {
        let loss = truncation_loss(raw, a, c);
        if loss < best.0 - 1e-12 * best.0.abs() {
            best = (loss, c);
        }
    }
    Ok(best.1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropensityFit {
    /// Truncated values `πₙ(Wᵢ)`.
    pub values: DVector<f64>,
    /// Clipped to `[0, 1]` but not truncated.
    pub raw: DVector<f64>,
    /// `None` for a known propensity.
    pub cutoff: Option<f64>,
    pub support_size: usize,
    pub lambda: f64,
    /// Treatment was constant in the sample.
    pub degenerate: bool,
}

/// Least-squares CV-Lasso of `A` on the additive hinge basis of `W`, relaxed
/// refit, clipping to `[0, 1]` and data-adaptive truncation.
pub fn fit_propensity(data: &Dataset, cfg: &NuisanceConfig) -> Result<PropensityFit> {
    cfg.validate()?;
    let n = data.n();
    let degenerate = data.treated_count() == 0 || data.treated_count() == n;
    if let Some(p) = cfg.known_propensity {
        let values = DVector::from_element(n, p);
        return Ok(PropensityFit { raw: values.clone(), values, cutoff: None, support_size: 0, lambda: 0.0, degenerate });
    }
    let spec = build_additive_basis(data.w(), cfg.knots_per_covariate, Block::CovariateOnly)?
        .with_linear_terms(cfg.include_linear_terms);
    let x = spec.expand(data)?.into_values();
    let pf = vec![1.0; x.ncols()];
    let sel = cv_select(&x, data.a(), None, &[pf], cfg, true, split_seed(cfg.seed, 1))?;
    let refit = relaxed_refit(&x, data.a(), &sel.support, None, true)?;
    let raw = refit.predict(&x).map(|p| p.clamp(0.0, 1.0));
    let cutoff = select_truncation(&raw, data.a(), &cfg.cutoff_grid)?;
    Ok(PropensityFit {
        values: truncate(&raw, cutoff),
        raw,
        cutoff: Some(cutoff),
        support_size: sel.support.len(),
        lambda: sel.lambda,
        degenerate,
    })
}

/// Relaxed least-squares fit of `Y` on the two-block basis `[1, φ(w), a, a·φ(w)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct OutcomeFit {
    pub spec: BasisSpec,
    /// One entry per column of `spec`; zero off the support.
    pub coefficients: DVector<f64>,
    /// Columns of the working model Θₙ, always containing the intercept and `a`.
    pub support: Vec<usize>,
    pub lambda: f64,
    /// Selected penalty of the interacted block relative to the control block.
    pub penalty_ratio: f64,
    pub cv: Option<CvResult>,
    /// `μₙ(1, Wᵢ)`, `μₙ(0, Wᵢ)` and `μₙ(Aᵢ, Wᵢ)`.
    pub mu1: DVector<f64>,
    pub mu0: DVector<f64>,
    pub mu_obs: DVector<f64>,
}

impl OutcomeFit {
    /// Width of one block, intercept included.
    pub fn block_width(&self) -> usize {
        self.spec.n_columns() / 2
    }

    /// Index of the `a` column.
    pub fn treatment_column(&self) -> usize {
        self.block_width()
    }

    pub fn predict(&self, w: &DMatrix<f64>, a: &[f64]) -> Result<DVector<f64>> {
        Ok(self.spec.expand_with(w, a)?.select(&self.support).predict(&self.support_coefficients()))
    }

    pub fn support_coefficients(&self) -> DVector<f64> {
        DVector::from_iterator(self.support.len(), self.support.iter().map(|&j| self.coefficients[j]))
    }

    /// Design of the working model Θₙ at covariates `w` and treatments `a`.
    pub fn working_design(&self, w: &DMatrix<f64>, a: &[f64]) -> Result<DMatrix<f64>> {
        Ok(self.spec.expand_with(w, a)?.select(&self.support).into_values())
    }

    /// Selected columns of the interacted block (the learned CATE model), `a` included.
    pub fn cate_support(&self) -> Vec<usize> {
        self.support.iter().copied().filter(|&j| j >= self.block_width()).collect()
    }
}

/// Single Lasso of `Y` on `[φ(w), a, a·φ(w)]` with an unpenalized intercept and
/// `a` column, block penalties coupled by a CV-selected ratio, then a relaxed
/// refit on the joint support.
pub fn fit_outcome_joint(data: &Dataset, spec: &BasisSpec, cfg: &NuisanceConfig) -> Result<OutcomeFit> {
    cfg.validate()?;
    if spec.block() != Block::TreatmentInteracted || !spec.include_intercept() {
        return Err(Error::InvalidArgument("outcome basis must be treatment-interacted with an intercept".into()));
    }
    let full = spec.expand(data)?.into_values();
    let (n, p) = full.shape();
    let width = p / 2;
    // Lasso design drops the intercept column; its column j is basis column j + 1.
    let x = full.columns(1, p - 1).into_owned();
    let candidates: Vec<Vec<f64>> = cfg
        .penalty_ratios
        .iter()
        .map(|&r| {
            (1..p)
                .map(|j| if j < width { 1.0 } else if j == width { 0.0 } else { r })
                .collect()
        })
        .collect();
    let sel = cv_select(&x, data.y(), None, &candidates, cfg, true, split_seed(cfg.seed, 2))?;
    let mut support: Vec<usize> = std::iter::once(0).chain(sel.support.iter().map(|j| j + 1)).collect();
    support.sort_unstable();
    let sol = solve_wls(&full.select_columns(&support), data.y(), None)?;
    let mut coefficients = DVector::zeros(p);
    for (k, &j) in support.iter().enumerate() {
        coefficients[j] = sol[k];
    }
    let fitted = |a: f64| -> Result<DVector<f64>> {
        Ok(spec.expand_at(data.w(), a)?.values() * &coefficients)
    };
    let mu1 = fitted(1.0)?;
    let mu0 = fitted(0.0)?;
    let mu_obs = DVector::from_fn(n, |i, _| if data.a()[i] == 1.0 { mu1[i] } else { mu0[i] });
    Ok(OutcomeFit {
        spec: spec.clone(),
        coefficients,
        support,
        lambda: sel.lambda,
        penalty_ratio: cfg.penalty_ratios[sel.candidate],
        cv: sel.cv,
        mu1,
        mu0,
        mu_obs,
    })
}

/// Two-block outcome basis with knots placed on the sample covariates.
pub fn outcome_basis(data: &Dataset, cfg: &NuisanceConfig) -> Result<BasisSpec> {
    Ok(build_additive_basis(data.w(), cfg.knots_per_covariate, Block::TreatmentInteracted)?
        .with_intercept(true)
        .with_linear_terms(cfg.include_linear_terms))
}

/// `mₙ = πₙ μₙ(1,·) + (1 − πₙ) μₙ(0,·)` per observation.
pub fn compute_m(pi: &DVector<f64>, mu1: &DVector<f64>, mu0: &DVector<f64>) -> Result<DVector<f64>> {
    if pi.len() != mu1.len() || pi.len() != mu0.len() {
        return Err(Error::Dimension("propensity and outcome predictions differ in length".into()));
    }
    Ok(DVector::from_fn(pi.len(), |i, _| pi[i] * mu1[i] + (1.0 - pi[i]) * mu0[i]))
}

/// Post-Lasso R-learner fit `τₙ(w) = φ(w)ᵀc` over the learned CATE model 𝓣ₙ.
#[derive(Debug, Clone, PartialEq)]
pub struct CateFit {
    /// Covariate-only basis with intercept; column 0 is the constant.
    pub basis: BasisSpec,
    pub coefficients: DVector<f64>,
    /// Columns of 𝓣ₙ, always containing the intercept.
    pub support: Vec<usize>,
    pub lambda: f64,
    pub cv: Option<CvResult>,
    /// `τₙ(Wᵢ)`.
    pub tau: DVector<f64>,
}

impl CateFit {
    /// Basis columns of 𝓣ₙ evaluated at `w`.
    pub fn working_design(&self, w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        Ok(self.basis.expand_at(w, 0.0)?.select(&self.support).into_values())
    }

    pub fn predict(&self, w: &DMatrix<f64>) -> Result<DVector<f64>> {
        Ok(self.basis.expand_at(w, 0.0)?.values() * &self.coefficients)
    }
}

/// Lasso of `Y − mₙ` on `(A − πₙ)·φ(W)` without intercept, the `(A − πₙ)·1`
/// column unpenalized, followed by a relaxed refit on the support.
pub fn rlearner_fit(
    data: &Dataset,
    pi: &DVector<f64>,
    m: &DVector<f64>,
    basis: &BasisSpec,
    cfg: &NuisanceConfig,
) -> Result<CateFit> {
    cfg.validate()?;
    let n = data.n();
    if pi.len() != n || m.len() != n {
        return Err(Error::Dimension("nuisance predictions do not match the data".into()));
    }
    if basis.block() != Block::CovariateOnly || !basis.include_intercept() {
        return Err(Error::InvalidArgument("CATE basis must be covariate-only with an intercept".into()));
    }
    let resid_a = data.a() - pi;
    if resid_a.norm_squared() == 0.0 {
        return Err(Error::DegenerateDesign("treatment residuals A − π are all zero".into()));
    }
    let phi = basis.expand(data)?.into_values();
    let mut design = phi.clone();
    for mut col in design.column_iter_mut() {
        col.component_mul_assign(&resid_a);
    }
    let pseudo = data.y() - m;
    let mut pf = vec![1.0; phi.ncols()];
    pf[0] = 0.0;
    let sel = cv_select(&design, &pseudo, None, &[pf], cfg, false, split_seed(cfg.seed, 3))?;
    let refit = relaxed_refit(&design, &pseudo, &sel.support, None, false)?;
    let tau = &phi * &refit.coefficients;
    Ok(CateFit {
        basis: basis.clone(),
        coefficients: refit.coefficients,
        support: sel.support,
        lambda: sel.lambda,
        cv: sel.cv,
        tau,
    })
}

/// Covariate-only CATE basis sharing the knots of the outcome basis.
pub fn cate_basis(outcome: &OutcomeFit) -> BasisSpec {
    outcome.spec.clone().with_block(Block::CovariateOnly)
}

/// Propensity, outcome regression and conditional mean fitted on one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct NuisanceBundle {
    pub propensity: PropensityFit,
    pub outcome: OutcomeFit,
    pub m: DVector<f64>,
}

impl NuisanceBundle {
    pub fn pi(&self) -> &DVector<f64> {
        &self.propensity.values
    }
}

pub fn fit_nuisances(data: &Dataset, cfg: &NuisanceConfig) -> Result<NuisanceBundle> {
    let propensity = fit_propensity(data, cfg)?;
    let spec = outcome_basis(data, cfg)?;
    let outcome = fit_outcome_joint(data, &spec, cfg)?;
    let m = compute_m(&propensity.values, &outcome.mu1, &outcome.mu0)?;
    Ok(NuisanceBundle { propensity, outcome, m })
}
