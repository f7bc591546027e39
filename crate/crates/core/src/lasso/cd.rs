//! Covariance-update coordinate descent on weighted sufficient statistics.
//!
//! Every fit works from the moments `Σw, Σwx, Σwy, ΣwxxT, Σwxy, Σwy²`, so a
//! training fold is the full-data moments minus the held-out moments and never
//! requires touching the rows again.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Solver settings shared by single fits, paths and cross-validation.
#[derive(Debug, Clone, PartialEq)]
pub struct LassoOptions {
    pub fit_intercept: bool,
    /// Upper bound on passes over the coordinates.
    pub max_sweeps: usize,
    /// Stop once no standardized coefficient moves by more than this in a sweep.
    pub coef_tol: f64,
    /// KKT tolerance, relative to `max(1, sd(y))`.
    pub kkt_tol: f64,
    /// Finish each returned fit with an exact solve on its active set.
    pub polish: bool,
    pub record_objective: bool,
}

impl Default for LassoOptions {
    fn default() -> Self {
        Self {
            fit_intercept: true,
            max_sweeps: 100_000,
            coef_tol: 1e-9,
            kkt_tol: 1e-8,
            polish: true,
            record_objective: false,
        }
    }
}

/// Weighted first and second moments of `(x, y)`.
#[derive(Debug, Clone)]
pub(crate) struct Moments {
    pub sw: f64,
    pub sx: DVector<f64>,
    pub sy: f64,
    pub sxx: DMatrix<f64>,
    pub sxy: DVector<f64>,
    pub syy: f64,
}

impl Moments {
    pub fn new(x: &DMatrix<f64>, y: &DVector<f64>, weights: Option<&[f64]>) -> Self {
        match weights {
            None => {
                let xt = x.transpose();
                Self {
                    sw: x.nrows() as f64,
                    sx: DVector::from_iterator(x.ncols(), x.column_iter().map(|c| c.sum())),
                    sy: y.sum(),
                    sxx: &xt * x,
                    sxy: xt * y,
                    syy: y.norm_squared(),
                }
            }
            Some(w) => {
                let w = DVector::from_column_slice(w);
                let mut wx = x.clone();
                for mut col in wx.column_iter_mut() {
                    col.component_mul_assign(&w);
                }
                let wxt = wx.transpose();
                let wy = y.component_mul(&w);
                Self {
                    sw: w.sum(),
                    sx: DVector::from_iterator(x.ncols(), wx.column_iter().map(|c| c.sum())),
                    sy: wy.sum(),
                    sxx: &wxt * x,
                    sxy: wxt * y,
                    syy: wy.dot(y),
                }
            }
        }
    }

    pub fn minus(&self, other: &Moments) -> Moments {
        Moments {
            sw: self.sw - other.sw,
            sx: &self.sx - &other.sx,
            sy: self.sy - other.sy,
            sxx: &self.sxx - &other.sxx,
            sxy: &self.sxy - &other.sxy,
            syy: self.syy - other.syy,
        }
    }
}

/// Problem on the standardized scale: minimize
/// `½(v_y − 2βᵀc + βᵀGβ) + λ Σ pf_j |β_j|`.
#[derive(Debug, Clone)]
pub(crate) struct Standardized {
    pub g: DMatrix<f64>,
    pub c: DVector<f64>,
    pub vy: f64,
    pub x_mean: DVector<f64>,
    pub y_mean: f64,
    /// Column standard deviations; zero marks a column that is constant (or
    /// identically zero without intercept) and is excluded from the fit.
    pub scale: DVector<f64>,
}

impl Standardized {
    pub fn new(m: &Moments, fit_intercept: bool) -> Result<Self> {
        if m.sw.is_nan() || m.sw <= 0.0 {
            return Err(Error::InvalidArgument("total observation weight must be positive".into()));
        }
        let p = m.sx.len();
        let (x_mean, y_mean) = if fit_intercept {
            (&m.sx / m.sw, m.sy / m.sw)
        } else {
            (DVector::zeros(p), 0.0)
        };
        let mut cov = &m.sxx / m.sw;
        if fit_intercept {
            cov.ger(-1.0, &x_mean, &x_mean, 1.0);
        }
        let cxy = &m.sxy / m.sw - &x_mean * y_mean;
        let vy = (m.syy / m.sw - y_mean * y_mean).max(0.0);
        let scale = DVector::from_iterator(
            p,
            (0..p).map(|j| {
                let v = cov[(j, j)];
                // relative cutoff against the raw second moment
                let raw = m.sxx[(j, j)] / m.sw;
                if v > 1e-13 * raw.max(f64::MIN_POSITIVE) && v > 0.0 {
                    v.sqrt()
                } else {
                    0.0
                }
            }),
        );
        let inv = scale.map(|s| if s > 0.0 { 1.0 / s } else { 0.0 });
        let g = DMatrix::from_fn(p, p, |i, j| cov[(i, j)] * inv[i] * inv[j]);
        let c = cxy.component_mul(&inv);
        Ok(Self { g, c, vy, x_mean, y_mean, scale })
    }

    pub fn ncols(&self) -> usize {
        self.c.len()
    }

    /// Original-scale coefficients and intercept for standardized `beta`.
    pub fn unstandardize(&self, beta: &DVector<f64>) -> (DVector<f64>, f64) {
        let coef = DVector::from_iterator(
            beta.len(),
            beta.iter().zip(self.scale.iter()).map(|(&b, &s)| if s > 0.0 { b / s } else { 0.0 }),
        );
        let intercept = self.y_mean - self.x_mean.dot(&coef);
        (coef, intercept)
    }

    pub fn kkt_scale(&self) -> f64 {
        self.vy.sqrt().max(1.0)
    }
}

#[inline]
pub fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

/// Outcome of one solve at a fixed penalty.
/// Active-set sweeps between attempted Newton steps.
const NEWTON_EVERY: usize = 2;

#[derive(Debug, Clone)]
pub(crate) struct SolveInfo {
    pub sweeps: usize,
    pub trace: Vec<f64>,
}

/// Coordinate-descent state carried along a penalty path (warm starts).
pub(crate) struct PathSolver<'a> {
    prob: &'a Standardized,
    pf: &'a [f64],
    pub beta: DVector<f64>,
    grad: DVector<f64>,
}

impl<'a> PathSolver<'a> {
    pub fn new(prob: &'a Standardized, pf: &'a [f64]) -> Self {
        Self {
            prob,
            pf,
            beta: DVector::zeros(prob.ncols()),
            grad: prob.c.clone(),
        }
    }

    fn usable(&self, j: usize) -> bool {
        self.prob.scale[j] > 0.0
    }

    pub fn objective(&self, lambda: f64) -> f64 {
        let b = &self.beta;
        let quad = b.dot(&(&self.prob.g * b));
        let l1: f64 = b.iter().zip(self.pf).map(|(v, w)| w * v.abs()).sum();
        0.5 * (self.prob.vy - 2.0 * b.dot(&self.prob.c) + quad) + lambda * l1
    }

    /// Primal minus dual objective for a residual-rescaled dual point.
    pub fn duality_gap(&self, lambda: f64) -> f64 {
        let b = &self.beta;
        let gb = &self.prob.g * b;
        let bc = b.dot(&self.prob.c);
        let rr = (self.prob.vy - 2.0 * bc + b.dot(&gb)).max(0.0);
        let yr = self.prob.vy - bc;
        let grad = &self.prob.c - gb;
        let mut s: f64 = 1.0;
        for j in 0..b.len() {
            if self.usable(j) && self.pf[j] > 0.0 && grad[j].abs() > 0.0 {
                s = s.min(lambda * self.pf[j] / grad[j].abs());
            }
        }
        let dual = s * yr - 0.5 * s * s * rr;
        (self.objective(lambda) - dual).max(0.0)
    }

    fn update(&mut self, j: usize, lambda: f64) -> f64 {
        let gjj = self.prob.g[(j, j)];
        let old = self.beta[j];
        let z = self.grad[j] + gjj * old;
        let new = soft_threshold(z, lambda * self.pf[j]) / gjj;
        let delta = new - old;
        if delta != 0.0 {
            self.beta[j] = new;
            self.grad.axpy(-delta, &self.prob.g.column(j), 1.0);
        }
        delta.abs() * gjj.sqrt()
    }

    fn refresh_gradient(&mut self) {
        self.grad.copy_from(&self.prob.c);
        for (j, &b) in self.beta.iter().enumerate() {
            if b != 0.0 {
                self.grad.axpy(-b, &self.prob.g.column(j), 1.0);
            }
        }
    }

    /// Largest KKT violation using the maintained gradient.
    pub fn kkt_violation(&self, lambda: f64) -> f64 {
        let mut worst: f64 = 0.0;
        for j in 0..self.beta.len() {
            if !self.usable(j) {
                continue;
            }
            let t = lambda * self.pf[j];
            let g = self.grad[j];
            let v = if self.beta[j] != 0.0 {
                (g - t * self.beta[j].signum()).abs()
            } else {
                (g.abs() - t).max(0.0)
            };
            worst = worst.max(v);
        }
        worst
    }

    /// Runs sweeps until coefficient changes and KKT residuals are within tolerance.
    pub fn solve(&mut self, lambda: f64, opts: &LassoOptions, unpenalized_only: bool) -> Result<SolveInfo> {
        let p = self.beta.len();
        let coords: Vec<usize> = (0..p)
            .filter(|&j| self.usable(j) && (!unpenalized_only || self.pf[j] == 0.0))
            .collect();
        let kkt_tol = opts.kkt_tol * self.prob.kkt_scale();
        let mut trace = Vec::new();
        let mut sweeps = 0;
        if opts.record_objective {
            trace.push(self.objective(lambda));
        }
        loop {
            // full pass
            let mut change: f64 = 0.0;
            for &j in &coords {
                change = change.max(self.update(j, lambda));
            }
            sweeps += 1;
            if opts.record_objective {
                trace.push(self.objective(lambda));
            }
            if change <= opts.coef_tol {
                self.refresh_gradient();
                let viol = if unpenalized_only {
                    coords.iter().map(|&j| self.grad[j].abs()).fold(0.0, f64::max)
                } else {
                    self.kkt_violation(lambda)
                };
                if viol <= kkt_tol {
                    return Ok(SolveInfo { sweeps, trace });
                }
            }
            // inner passes over the active set
            let active: Vec<usize> = coords.iter().copied().filter(|&j| self.beta[j] != 0.0).collect();
            let mut inner = 0;
            loop {
                if sweeps >= opts.max_sweeps {
                    return Err(Error::NoConvergence { sweeps, gap: self.duality_gap(lambda) });
                }
                let mut change: f64 = 0.0;
                for &j in &active {
                    change = change.max(self.update(j, lambda));
                }
                sweeps += 1;
                inner += 1;
                if opts.record_objective {
                    trace.push(self.objective(lambda));
                }
                if change <= opts.coef_tol {
                    break;
                }
                // Ill-conditioned active sets converge slowly under coordinate updates.
                if inner % NEWTON_EVERY == 0 && self.newton_on(lambda, &active) {
                    if opts.record_objective {
                        trace.push(self.objective(lambda));
                    }
                    break;
                }
            }
            if sweeps >= opts.max_sweeps {
                return Err(Error::NoConvergence { sweeps, gap: self.duality_gap(lambda) });
            }
        }
    }

    /// Feature-sign step on `active`: moves toward the minimizer of the objective
    /// restricted to `active` with the current signs held fixed, stopping where a
    /// penalized coefficient first reaches zero, dropping it, and repeating. The
    /// objective never increases. Returns false when the restricted Gram matrix is
    /// not positive definite.
    fn newton_on(&mut self, lambda: f64, active: &[usize]) -> bool {
        // grad = c − Gβ, so c_A − G_A,rest β_rest = grad_A + G_AA β_A; dropped
        // coordinates become zero and leave this quantity unchanged.
        let gaa_full = DMatrix::from_fn(active.len(), active.len(), |a, b| self.prob.g[(active[a], active[b])]);
        let beta_full = DVector::from_iterator(active.len(), active.iter().map(|&j| self.beta[j]));
        let base_full = DVector::from_iterator(active.len(), active.iter().map(|&j| self.grad[j])) + &gaa_full * &beta_full;
        let mut keep: Vec<usize> = (0..active.len()).collect();
        let Some(mut chol) = gaa_full.cholesky() else {
            return false;
        };
        while !keep.is_empty() {
            let rhs = DVector::from_iterator(
                keep.len(),
                keep.iter().map(|&k| {
                    let j = active[k];
                    base_full[k] - lambda * self.pf[j] * self.beta[j].signum()
                }),
            );
            let sol = chol.solve(&rhs);
            if sol.iter().any(|v| !v.is_finite()) {
                self.refresh_gradient();
                return false;
            }
            let mut step = 1.0;
            let mut blocking = None;
            for (idx, &k) in keep.iter().enumerate() {
                let j = active[k];
                let (b, v) = (self.beta[j], sol[idx]);
                if self.pf[j] > 0.0 && v.signum() != b.signum() {
                    let t = b / (b - v);
                    if t < step {
                        step = t;
                        blocking = Some(idx);
                    }
                }
            }
            for (idx, &k) in keep.iter().enumerate() {
                let j = active[k];
                self.beta[j] += step * (sol[idx] - self.beta[j]);
            }
            match blocking {
                None => break,
                Some(idx) => {
                    self.beta[active[keep[idx]]] = 0.0;
                    keep.remove(idx);
                    chol = chol.remove_column(idx);
                }
            }
        }
        self.refresh_gradient();
        true
    }

    /// Newton step on the whole active set, kept only when the KKT conditions of
    /// the full problem then hold.
    pub fn polish(&mut self, lambda: f64, opts: &LassoOptions) -> bool {
        let active: Vec<usize> =
            (0..self.beta.len()).filter(|&j| self.usable(j) && self.beta[j] != 0.0).collect();
        let saved = self.beta.clone();
        if self.newton_on(lambda, &active) && self.kkt_violation(lambda) <= opts.kkt_tol * self.prob.kkt_scale() {
            true
        } else {
            self.beta = saved;
            self.refresh_gradient();
            false
        }
    }

    /// Smallest penalty at which all penalized coefficients vanish, given the
    /// unpenalized coefficients fitted first.
    pub fn lambda_max(&mut self, opts: &LassoOptions) -> Result<f64> {
        self.beta.fill(0.0);
        self.refresh_gradient();
        self.solve(0.0, opts, true)?;
        let mut lmax: f64 = 0.0;
        for j in 0..self.beta.len() {
            if self.usable(j) && self.pf[j] > 0.0 {
                lmax = lmax.max(self.grad[j].abs() / self.pf[j]);
            }
        }
        Ok(lmax)
    }
}
