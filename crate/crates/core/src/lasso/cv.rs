//! K-fold cross-validation along a shared penalty grid.

use nalgebra::{DMatrix, DVector};

use super::cd::{LassoOptions, Moments, PathSolver, Standardized};
use super::{check_problem, finish_fit, LassoFit};
use crate::error::{Error, Result};
use crate::seed::mix64;

pub const DEFAULT_FOLDS: usize = 10;
pub const DEFAULT_N_LAMBDA: usize = 100;
pub const DEFAULT_LAMBDA_MIN_RATIO: f64 = 1e-4;

/// `n_lambda` log-spaced penalties from `lambda_max` down to `min_ratio · lambda_max`.
pub fn lambda_grid(lambda_max: f64, n_lambda: usize, min_ratio: f64) -> Vec<f64> {
    assert!(n_lambda >= 1);
    if n_lambda == 1 || lambda_max <= 0.0 {
        return vec![lambda_max];
    }
    let step = min_ratio.ln() / (n_lambda - 1) as f64;
    (0..n_lambda).map(|k| lambda_max * (step * k as f64).exp()).collect()
}

/// Smallest penalty that zeroes every penalized coefficient.
pub fn lambda_max(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    penalty_weights: &[f64],
    obs_weights: Option<&[f64]>,
    opts: &LassoOptions,
) -> Result<f64> {
    check_problem(x, y, penalty_weights, obs_weights)?;
    let prob = Standardized::new(&Moments::new(x, y, obs_weights), opts.fit_intercept)?;
    PathSolver::new(&prob, penalty_weights).lambda_max(opts)
}

fn row_hash(x: &DMatrix<f64>, y: &DVector<f64>, i: usize, seed: u64) -> u64 {
    let mut h = mix64(seed ^ 0x5851_f42d_4c95_7f2d);
    for v in x.row(i).iter().chain(std::iter::once(&y[i])) {
        h = mix64(h ^ v.to_bits());
    }
    h
}

/// Balanced fold labels in `0..k` that depend only on row contents and `seed`:
/// rows are ranked by a keyed hash of their values and dealt round-robin, so
/// reordering the observations permutes the labels along with them.
pub fn fold_assignment(x: &DMatrix<f64>, y: &DVector<f64>, k: usize, seed: u64) -> Vec<usize> {
    let n = x.nrows();
    let mut keyed: Vec<(u64, usize)> = (0..n).map(|i| (row_hash(x, y, i, seed), i)).collect();
    keyed.sort_unstable();
    let mut folds = vec![0; n];
    // Identical rows share a hash; deal them in the same order regardless of position.
    for (rank, &(_, i)) in keyed.iter().enumerate() {
        folds[i] = rank % k;
    }
    folds
}

/// Fold labels and a strictly decreasing penalty grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CvPlan {
    folds: Vec<usize>,
    k: usize,
    grid: Vec<f64>,
}

impl CvPlan {
    pub fn new(folds: Vec<usize>, k: usize, grid: Vec<f64>) -> Result<Self> {
        if k < 2 {
            return Err(Error::InvalidArgument(format!("need at least 2 folds, got {k}")));
        }
        if folds.len() < k {
            return Err(Error::InvalidArgument(format!("{} observations for {k} folds", folds.len())));
        }
        if let Some(&f) = folds.iter().find(|&&f| f >= k) {
            return Err(Error::InvalidArgument(format!("fold label {f} outside 0..{k}")));
        }
        for f in 0..k {
            if !folds.contains(&f) {
                return Err(Error::EmptyFold { fold: f });
            }
        }
        if grid.is_empty() {
            return Err(Error::InvalidArgument("empty penalty grid".into()));
        }
        if grid.iter().any(|l| !l.is_finite() || *l < 0.0) {
            return Err(Error::InvalidArgument("penalties must be finite and nonnegative".into()));
        }
        if grid.windows(2).any(|w| w[0] <= w[1]) {
            return Err(Error::InvalidArgument("penalty grid must be strictly decreasing".into()));
        }
        Ok(Self { folds, k, grid })
    }

    /// Plan with content-hashed folds.
    pub fn hashed(x: &DMatrix<f64>, y: &DVector<f64>, k: usize, seed: u64, grid: Vec<f64>) -> Result<Self> {
        if x.nrows() < k {
            return Err(Error::InvalidArgument(format!("{} observations for {k} folds", x.nrows())));
        }
        Self::new(fold_assignment(x, y, k, seed), k, grid)
    }

    pub fn folds(&self) -> &[usize] {
        &self.folds
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn with_grid(&self, grid: Vec<f64>) -> Result<Self> {
        Self::new(self.folds.clone(), self.k, grid)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CvPoint {
    pub lambda: f64,
    /// Pooled out-of-fold mean squared error.
    pub error: f64,
    /// Standard error of the per-fold errors.
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvResult {
    pub best_lambda: f64,
    pub best_index: usize,
    pub curve: Vec<CvPoint>,
}

impl CvResult {
    pub fn best_error(&self) -> f64 {
        self.curve[self.best_index].error
    }
}

/// Index of the smallest error, preferring earlier (larger-penalty) entries on ties.
pub(crate) fn argmin_prefer_first(errors: &[f64]) -> usize {
    let min = errors.iter().copied().fold(f64::INFINITY, f64::min);
    let tol = 1e-12 * min.abs();
    errors.iter().position(|&e| e <= min + tol).unwrap_or(0)
}

struct Fold {
    rows: Vec<usize>,
    x: DMatrix<f64>,
    y: DVector<f64>,
    w: Option<Vec<f64>>,
    train: Moments,
}

/// Per-fold sufficient statistics for one design, reusable across penalty-weight vectors.
pub struct CvWorkspace {
    full: Moments,
    folds: Vec<Fold>,
    n_weight: f64,
    opts: LassoOptions,
}

impl CvWorkspace {
    pub fn new(
        x: &DMatrix<f64>,
        y: &DVector<f64>,
        obs_weights: Option<&[f64]>,
        plan: &CvPlan,
        opts: &LassoOptions,
    ) -> Result<Self> {
        if plan.folds().len() != x.nrows() {
            return Err(Error::Dimension(format!(
                "plan covers {} observations, data has {}",
                plan.folds().len(),
                x.nrows()
            )));
        }
        check_problem(x, y, &vec![0.0; x.ncols()], obs_weights)?;
        let full = Moments::new(x, y, obs_weights);
        let mut folds = Vec::with_capacity(plan.k());
        for f in 0..plan.k() {
            let rows: Vec<usize> = (0..x.nrows()).filter(|&i| plan.folds()[i] == f).collect();
            if rows.is_empty() {
                return Err(Error::EmptyFold { fold: f });
            }
            let fx = x.select_rows(&rows);
            let fy = DVector::from_iterator(rows.len(), rows.iter().map(|&i| y[i]));
            let fw = obs_weights.map(|w| rows.iter().map(|&i| w[i]).collect::<Vec<_>>());
            let held = Moments::new(&fx, &fy, fw.as_deref());
            let train = full.minus(&held);
            folds.push(Fold { rows, x: fx, y: fy, w: fw, train });
        }
        Ok(Self { full, folds, n_weight: obs_weights.map_or(x.nrows() as f64, |w| w.iter().sum()), opts: opts.clone() })
    }

    pub fn lambda_max(&self, penalty_weights: &[f64]) -> Result<f64> {
        let prob = Standardized::new(&self.full, self.opts.fit_intercept)?;
        PathSolver::new(&prob, penalty_weights).lambda_max(&self.opts)
    }

    /// Cross-validated error curve over `grid` (strictly decreasing).
    pub fn run(&self, penalty_weights: &[f64], grid: &[f64]) -> Result<CvResult> {
        self.run_with_patience(penalty_weights, grid, None)
    }

    /// As [`run`](Self::run), but with `Some(k)` the scan stops once `k`
    /// consecutive penalties have failed to improve on the best error and the
    /// current error exceeds it by more than its standard error. The returned
    /// curve then covers only the scanned prefix of `grid`.
    pub fn run_with_patience(
        &self,
        penalty_weights: &[f64],
        grid: &[f64],
        patience: Option<usize>,
    ) -> Result<CvResult> {
        if penalty_weights.len() != self.full.sx.len() {
            return Err(Error::Dimension("penalty weights".into()));
        }
        if grid.is_empty() {
            return Err(Error::InvalidArgument("empty penalty grid".into()));
        }
        let probs = self
            .folds
            .iter()
            .map(|f| Standardized::new(&f.train, self.opts.fit_intercept))
            .collect::<Result<Vec<_>>>()?;
        let mut solvers: Vec<PathSolver<'_>> = probs.iter().map(|p| PathSolver::new(p, penalty_weights)).collect();
        let mut curve: Vec<CvPoint> = Vec::with_capacity(grid.len());
        let mut best = 0;
        for (k, &lambda) in grid.iter().enumerate() {
            let mut sse = 0.0;
            let mut fold_mse = Vec::with_capacity(self.folds.len());
            for ((fold, prob), solver) in self.folds.iter().zip(&probs).zip(solvers.iter_mut()) {
                solver.solve(lambda, &self.opts, false)?;
                let (coef, intercept) = prob.unstandardize(&solver.beta);
                let mut pred = DVector::from_element(fold.rows.len(), intercept);
                for (j, &b) in coef.iter().enumerate() {
                    if b != 0.0 {
                        pred.axpy(b, &fold.x.column(j), 1.0);
                    }
                }
                let err: f64 = match &fold.w {
                    Some(w) => (0..pred.len()).map(|i| w[i] * (fold.y[i] - pred[i]).powi(2)).sum(),
                    None => (&fold.y - &pred).norm_squared(),
                };
                let fold_weight: f64 = fold.w.as_ref().map_or(fold.rows.len() as f64, |w| w.iter().sum());
                sse += err;
                fold_mse.push(if fold_weight > 0.0 { err / fold_weight } else { 0.0 });
            }
            let mean = fold_mse.iter().sum::<f64>() / fold_mse.len() as f64;
            let var = fold_mse.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (fold_mse.len().max(2) - 1) as f64;
            curve.push(CvPoint { lambda, error: sse / self.n_weight, se: (var / fold_mse.len() as f64).sqrt() });
            if curve[k].error < curve[best].error - 1e-12 * curve[best].error.abs() {
                best = k;
            }
            if let Some(limit) = patience {
                if k >= best + limit && curve[k].error > curve[best].error + curve[best].se {
                    break;
                }
            }
        }
        let errors: Vec<f64> = curve.iter().map(|p| p.error).collect();
        let best_index = argmin_prefer_first(&errors);
        Ok(CvResult { best_lambda: grid[best_index], best_index, curve })
    }

    /// Full-data fit at `grid[index]`, reached by warm starts along `grid[..=index]`.
    pub fn fit_at(&self, penalty_weights: &[f64], grid: &[f64], index: usize) -> Result<LassoFit> {
        let prob = Standardized::new(&self.full, self.opts.fit_intercept)?;
        let mut solver = PathSolver::new(&prob, penalty_weights);
        let mut sweeps = 0;
        let mut trace = Vec::new();
        for &lambda in &grid[..=index] {
            let info = solver.solve(lambda, &self.opts, false)?;
            sweeps = info.sweeps;
            trace = info.trace;
        }
        if self.opts.polish {
            solver.polish(grid[index], &self.opts);
        }
        Ok(finish_fit(&prob, &solver, grid[index], sweeps, trace))
    }
}

/// Cross-validated penalty choice: minimizes pooled out-of-fold squared error,
/// breaking ties toward the larger penalty.
pub fn cross_validate(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    plan: &CvPlan,
    penalty_weights: &[f64],
    obs_weights: Option<&[f64]>,
    opts: &LassoOptions,
) -> Result<CvResult> {
    check_problem(x, y, penalty_weights, obs_weights)?;
    CvWorkspace::new(x, y, obs_weights, plan, opts)?.run(penalty_weights, plan.grid())
}
