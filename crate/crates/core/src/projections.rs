//! Population quantities under a known data-generating process, by Monte Carlo.
//!
//! A [`PopulationOracle`] approximates expectations over `W` with a fixed set
//! of `N` covariate draws. The treatment is integrated out analytically,
//! `E[f(A, W)] = E[π₀(W) f(1, W) + (1 − π₀(W)) f(0, W)]`, so every quantity is a
//! mean over the same draws and differences of estimands carry no independent
//! noise. Draws are generated in fixed-size chunks from per-chunk seeds and the
//! chunk results are combined by pairwise summation in chunk order, so results
//! do not depend on the number of threads.
//!
//! Two families of projections are provided:
//!
//! * CATE projections over a covariate basis `φ(w)`, weighted by
//!   `w₀ = π₀(1 − π₀)`: `Πₙτ₀`, the overlap Riesz representer `Πₙγ₀` and the
//!   working estimand `E[Πₙτ₀(W)]`;
//! * outcome projections over a basis `φ(a, w)` in `L²(P₀)`: `Πₙμ₀`, the Riesz
//!   representer `αₙ` of `θ ↦ E[θ(1, W) − θ(0, W)]` and the plug-in working
//!   estimand `E[Πₙμ₀(1, W) − Πₙμ₀(0, W)]`.
//!
//! The oracle model is either nonparametric (`τ₀`, `μ₀`, `γ₀ = 1/w₀` and
//! `α₀(a, w) = a/π₀ − (1 − a)/(1 − π₀)` themselves) or the span of an oracle basis.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;

use crate::basis::BasisSpec;
use crate::error::{Error, Result};
use crate::linalg::solve_psd;
use crate::seed::rng_for;
use crate::simulation::{DgpSpec, DIM};

pub const DEFAULT_MC_SIZE: usize = 1_000_000;
const CHUNK: usize = 8192;
/// A single draw carrying more than this share of the integrand's sum of
/// squares marks the estimate as heavy-tailed.
const HEAVY_TAIL_SHARE: f64 = 0.1;

/// A Monte Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub value: f64,
    pub std_error: f64,
    pub heavy_tailed: bool,
}

impl McEstimate {
    /// Whether `other` lies within `k` standard errors of this estimate.
    pub fn agrees_with(&self, other: f64, k: f64) -> bool {
        (self.value - other).abs() <= k * self.std_error
    }
}

/// Coefficients of a population Gram solve.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub coefficients: DVector<f64>,
    /// The population Gram matrix was numerically singular; the minimum-norm solution is returned.
    pub singular: bool,
    /// Largest residual of the normal equations, relative to the right-hand side scale.
    pub normal_equation_residual: f64,
}

/// The model against which a working model's bias is measured.
#[derive(Debug, Clone, PartialEq)]
pub enum OracleModel {
    Nonparametric,
    Span(BasisSpec),
}

/// The second-order bias term `E[(r₀ − Πₙr₀)(Πₙf₀ − f₀)]` of a working model,
/// with the `L²` norms entering its Cauchy–Schwarz bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleBias {
    pub bias: McEstimate,
    /// Norm of the representer residual `r₀ − Πₙr₀`.
    pub representer_residual: f64,
    /// Norm of the regression residual `f₀ − Πₙf₀`.
    pub regression_residual: f64,
}

impl OracleBias {
    pub fn cauchy_schwarz_bound(&self) -> f64 {
        self.representer_residual * self.regression_residual
    }
}

/// Running mean, centered sum of squares, and largest squared value.
#[derive(Debug, Clone, Copy, Default)]
struct Stats {
    count: f64,
    mean: f64,
    m2: f64,
    max_sq: f64,
    sum_sq: f64,
}

impl Stats {
    fn push(&mut self, x: f64) {
        self.count += 1.0;
        let d = x - self.mean;
        self.mean += d / self.count;
        self.m2 += d * (x - self.mean);
        self.max_sq = self.max_sq.max(x * x);
        self.sum_sq += x * x;
    }

    fn merge(self, other: Self) -> Self {
        if self.count == 0.0 {
            return other;
        }
        if other.count == 0.0 {
            return self;
        }
        let count = self.count + other.count;
        let d = other.mean - self.mean;
        Self {
            count,
            mean: self.mean + d * other.count / count,
            m2: self.m2 + other.m2 + d * d * self.count * other.count / count,
            max_sq: self.max_sq.max(other.max_sq),
            sum_sq: self.sum_sq + other.sum_sq,
        }
    }

    fn estimate(&self) -> McEstimate {
        let var = if self.count > 1.0 { self.m2 / (self.count - 1.0) } else { 0.0 };
        McEstimate {
            value: self.mean,
            std_error: (var / self.count).sqrt(),
            heavy_tailed: self.sum_sq > 0.0 && self.max_sq > HEAVY_TAIL_SHARE * self.sum_sq,
        }
    }
}

/// Sums of Gram matrices and moment vectors accumulated over draws.
#[derive(Debug, Clone)]
struct GramSums {
    gram: DMatrix<f64>,
    rhs: Vec<DVector<f64>>,
}

impl GramSums {
    /// `Xᵀ X` and `Xᵀ tₖ` for a (row-weighted) design `X`.
    fn of(x: &DMatrix<f64>, targets: &[DVector<f64>]) -> Self {
        Self { gram: x.tr_mul(x), rhs: targets.iter().map(|t| x.tr_mul(t)).collect() }
    }

    fn merge(mut self, other: Self) -> Self {
        self.gram += other.gram;
        for (a, b) in self.rhs.iter_mut().zip(other.rhs) {
            *a += b;
        }
        self
    }
}

fn pairwise<T: Clone>(items: &[T], merge: &impl Fn(T, T) -> T) -> T {
    match items.len() {
        0 => unreachable!("pairwise reduction of an empty list"),
        1 => items[0].clone(),
        k => {
            let (l, r) = items.split_at(k / 2);
            merge(pairwise(l, merge), pairwise(r, merge))
        }
    }
}

/// Per-chunk view: covariate rows plus the DGP quantities evaluated on them.
struct Draws {
    w: DMatrix<f64>,
    pi: Vec<f64>,
    overlap: Vec<f64>,
    tau: Vec<f64>,
    mu0: Vec<f64>,
}

impl Draws {
    fn len(&self) -> usize {
        self.pi.len()
    }

    fn mu1(&self, i: usize) -> f64 {
        self.mu0[i] + self.tau[i]
    }
}

fn solve_projection(gram: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<Projection> {
    let (coefficients, singular) = solve_psd(gram, rhs)?;
    let resid = gram * &coefficients - rhs;
    let scale = rhs.amax().max(gram.amax() * coefficients.amax()).max(f64::MIN_POSITIVE);
    Ok(Projection { normal_equation_residual: resid.amax() / scale, coefficients, singular })
}

#[derive(Debug, Clone)]
pub struct PopulationOracle {
    dgp: DgpSpec,
    mc_size: usize,
    seed: u64,
}

impl PopulationOracle {
    pub fn new(dgp: DgpSpec, mc_size: usize, seed: u64) -> Result<Self> {
        if mc_size < 2 {
            return Err(Error::InvalidArgument(format!("Monte Carlo size {mc_size} is below 2")));
        }
        Ok(Self { dgp, mc_size, seed })
    }

    pub fn dgp(&self) -> &DgpSpec {
        &self.dgp
    }

    pub fn mc_size(&self) -> usize {
        self.mc_size
    }

    fn chunk_count(&self) -> usize {
        self.mc_size.div_ceil(CHUNK)
    }

    fn draws(&self, chunk: usize) -> Draws {
        let rows = CHUNK.min(self.mc_size - chunk * CHUNK);
        let mut rng = rng_for(self.seed, chunk as u64);
        let mut w = DMatrix::zeros(rows, DIM);
        let (mut pi, mut overlap, mut tau, mut mu0) =
            (Vec::with_capacity(rows), Vec::with_capacity(rows), Vec::with_capacity(rows), Vec::with_capacity(rows));
        let mut row = [0.0; DIM];
        for i in 0..rows {
            for (j, v) in row.iter_mut().enumerate() {
                *v = rng.random_range(-1.0..1.0);
                w[(i, j)] = *v;
            }
            pi.push(self.dgp.propensity(&row));
            overlap.push(self.dgp.overlap_weight(&row));
            tau.push(self.dgp.cate(&row));
            mu0.push(self.dgp.control_mean(&row));
        }
        Draws { w, pi, overlap, tau, mu0 }
    }

    /// Evaluates `f` on every chunk in parallel and returns the results in chunk order.
    fn map_chunks<T: Send>(&self, f: impl Fn(&Draws) -> Result<T> + Sync) -> Result<Vec<T>> {
        (0..self.chunk_count()).into_par_iter().map(|c| f(&self.draws(c))).collect()
    }

    /// Mean of a per-draw integrand.
    fn mean_of(&self, f: impl Fn(&Draws) -> Result<Vec<f64>> + Sync) -> Result<McEstimate> {
        let parts = self.map_chunks(|d| {
            let mut s = Stats::default();
            for v in f(d)? {
                s.push(v);
            }
            Ok(s)
        })?;
        let stats = pairwise(&parts, &Stats::merge);
        let est = stats.estimate();
        if !est.value.is_finite() {
            return Err(Error::NonFinite("Monte Carlo integrand".into()));
        }
        Ok(est)
    }

    /// Population Gram and moment vectors from per-chunk sums.
    fn gram(&self, width: usize, chunk_sums: impl Fn(&Draws) -> Result<GramSums> + Sync) -> Result<GramSums> {
        let parts = self.map_chunks(chunk_sums)?;
        let mut sums = pairwise(&parts, &GramSums::merge);
        if sums.gram.nrows() != width {
            return Err(Error::Dimension("basis width changed between chunks".into()));
        }
        let n = self.mc_size as f64;
        sums.gram /= n;
        for r in &mut sums.rhs {
            *r /= n;
        }
        Ok(sums)
    }

    fn scaled(x: DMatrix<f64>, weights: impl Fn(usize) -> f64) -> DMatrix<f64> {
        let mut x = x;
        for i in 0..x.nrows() {
            let s = weights(i).sqrt();
            x.row_mut(i).scale_mut(s);
        }
        x
    }

    fn check_covariate_basis(basis: &BasisSpec) -> Result<()> {
        if basis.dim() != DIM {
            return Err(Error::Dimension(format!("basis has {} covariates, the process has {DIM}", basis.dim())));
        }
        if basis.n_columns() == 0 {
            return Err(Error::InvalidArgument("empty basis".into()));
        }
        Ok(())
    }

    // ---- ATE -----------------------------------------------------------------

    /// Monte Carlo mean of `τ₀(W)`.
    pub fn true_ate(&self) -> Result<McEstimate> {
        self.mean_of(|d| Ok(d.tau.clone()))
    }

    // ---- CATE projections (overlap-weighted) ---------------------------------

    /// `w₀`-weighted projection of a covariate function onto `basis`:
    /// solves `E[w₀ φφᵀ] c = E[w₀ φ f]`.
    pub fn weighted_projection(&self, basis: &BasisSpec, f: impl Fn(&[f64]) -> f64 + Sync) -> Result<Projection> {
        Self::check_covariate_basis(basis)?;
        let sums = self.gram(basis.n_columns(), |d| {
            let x = basis.expand_at(&d.w, 0.0)?.into_values();
            let target = DVector::from_fn(d.len(), |i, _| {
                let row: Vec<f64> = d.w.row(i).iter().copied().collect();
                f(&row) * d.overlap[i].sqrt()
            });
            Ok(GramSums::of(&Self::scaled(x, |i| d.overlap[i]), &[target]))
        })?;
        solve_projection(&sums.gram, &sums.rhs[0])
    }

    /// Coefficients of `Πₙτ₀` over the covariate basis.
    pub fn cate_projection(&self, basis: &BasisSpec) -> Result<Projection> {
        self.weighted_projection(basis, |w| self.dgp.cate(w))
    }

    /// Coefficients of `Πₙγ₀`: solves `E[w₀ φφᵀ] c = E[φ]`.
    pub fn overlap_riesz(&self, basis: &BasisSpec) -> Result<Projection> {
        Self::check_covariate_basis(basis)?;
        let sums = self.gram(basis.n_columns(), |d| {
            let x = basis.expand_at(&d.w, 0.0)?.into_values();
            // E[φ] = E[(√w₀ φ)(1/√w₀)]
            let target = DVector::from_fn(d.len(), |i, _| 1.0 / d.overlap[i].sqrt());
            Ok(GramSums::of(&Self::scaled(x, |i| d.overlap[i]), &[target]))
        })?;
        solve_projection(&sums.gram, &sums.rhs[0])
    }

    /// Mean of `φ(W)ᵀc`.
    pub fn basis_mean(&self, basis: &BasisSpec, coefficients: &DVector<f64>) -> Result<McEstimate> {
        Self::check_covariate_basis(basis)?;
        if coefficients.len() != basis.n_columns() {
            return Err(Error::Dimension("coefficient count differs from basis width".into()));
        }
        self.mean_of(|d| Ok((basis.expand_at(&d.w, 0.0)?.into_values() * coefficients).data.into()))
    }

    /// Partially linear working estimand `Ψₙ(P₀) = E[Πₙτ₀(W)]`.
    pub fn working_estimand(&self, basis: &BasisSpec) -> Result<McEstimate> {
        let proj = self.cate_projection(basis)?;
        self.basis_mean(basis, &proj.coefficients)
    }

    /// Partially linear oracle estimand `E[Π₀τ₀(W)]` (`E[τ₀(W)]` when nonparametric).
    pub fn oracle_estimand(&self, oracle: &OracleModel) -> Result<McEstimate> {
        match oracle {
            OracleModel::Nonparametric => self.true_ate(),
            OracleModel::Span(basis) => self.working_estimand(basis),
        }
    }

    /// `E[(γ₀ − Πₙγ₀) w₀ (Πₙτ₀ − τ₀)]` for the covariate basis against the oracle model.
    ///
    /// With a nonparametric oracle `γ₀ = 1/w₀`, so `w₀γ₀ = 1` is used in place of
    /// the product. With an oracle basis, `γ₀` is the overlap Riesz representer
    /// over that basis and `Πₙγ₀` its `w₀`-weighted projection onto `basis`.
    pub fn oracle_bias_partially_linear(&self, basis: &BasisSpec, oracle: &OracleModel) -> Result<OracleBias> {
        let tau_n = self.cate_projection(basis)?.coefficients;
        let (gamma_0, gamma_n) = match oracle {
            OracleModel::Nonparametric => (None, self.overlap_riesz(basis)?.coefficients),
            OracleModel::Span(ob) => {
                let g0 = self.overlap_riesz(ob)?.coefficients;
                let eval = |w: &[f64]| -> f64 {
                    let m = DMatrix::from_row_slice(1, DIM, w);
                    (ob.expand_at(&m, 0.0).expect("checked basis").into_values() * &g0)[0]
                };
                let gn = self.weighted_projection(basis, eval)?.coefficients;
                (Some((ob, g0)), gn)
            }
        };
        let per_draw = |d: &Draws| -> Result<Vec<(f64, f64, f64)>> {
            let x = basis.expand_at(&d.w, 0.0)?.into_values();
            let tn = &x * &tau_n;
            let gn = &x * &gamma_n;
            let g0 = match &gamma_0 {
                Some((ob, c)) => Some(ob.expand_at(&d.w, 0.0)?.into_values() * c),
                None => None,
            };
            Ok((0..d.len())
                .map(|i| {
                    let w0 = d.overlap[i];
                    // w₀(γ₀ − Πₙγ₀)
                    let wr = match &g0 {
                        Some(g) => w0 * (g[i] - gn[i]),
                        None => 1.0 - w0 * gn[i],
                    };
                    let tr = tn[i] - d.tau[i];
                    (wr * tr, wr * wr / w0, w0 * tr * tr)
                })
                .collect())
        };
        let bias = self.mean_of(|d| Ok(per_draw(d)?.into_iter().map(|t| t.0).collect()))?;
        let rep = self.mean_of(|d| Ok(per_draw(d)?.into_iter().map(|t| t.1).collect()))?;
        let reg = self.mean_of(|d| Ok(per_draw(d)?.into_iter().map(|t| t.2).collect()))?;
        Ok(OracleBias { bias, representer_residual: rep.value.sqrt(), regression_residual: reg.value.sqrt() })
    }

    // ---- outcome projections (L²(P₀), treatment integrated out) --------------

    fn treatment_designs(basis: &BasisSpec, d: &Draws) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        Ok((basis.expand_at(&d.w, 1.0)?.into_values(), basis.expand_at(&d.w, 0.0)?.into_values()))
    }

    /// Coefficients of `Πₙμ₀` over a basis `φ(a, w)`: solves `E[φφᵀ] c = E[φ μ₀]`.
    pub fn outcome_projection(&self, basis: &BasisSpec) -> Result<Projection> {
        Ok(self.outcome_system(basis, None)?.0)
    }

    /// Coefficients of the Riesz representer `αₙ` of the ATE functional over
    /// `basis`: solves `E[φφᵀ] c = E[φ(1, W) − φ(0, W)]`.
    pub fn plug_in_riesz(&self, basis: &BasisSpec) -> Result<Projection> {
        Ok(self.outcome_system(basis, None)?.1)
    }

    /// Gram solves over `basis` for `μ₀`, the ATE functional and, when given,
    /// a second representer `(oracle basis, coefficients)` to be projected.
    fn outcome_system(
        &self,
        basis: &BasisSpec,
        project: Option<(&BasisSpec, &DVector<f64>)>,
    ) -> Result<(Projection, Projection, Option<Projection>)> {
        if basis.dim() != DIM || basis.n_columns() == 0 {
            return Err(Error::Dimension("outcome basis must be a nonempty basis over the process covariates".into()));
        }
        let sums = self.gram(basis.n_columns(), |d| {
            let (x1, x0) = Self::treatment_designs(basis, d)?;
            let n = d.len();
            // E[φ(1, W) − φ(0, W)]
            let contrast = (&x1 - &x0).row_sum().transpose();
            let other = match project {
                Some((ob, c)) => {
                    let (o1, o0) = Self::treatment_designs(ob, d)?;
                    Some((o1 * c, o0 * c))
                }
                None => None,
            };
            let mut acc: Option<GramSums> = None;
            for (treated, x) in [(true, x1), (false, x0)] {
                let p = |i: usize| if treated { d.pi[i] } else { 1.0 - d.pi[i] };
                let mu = DVector::from_fn(n, |i, _| p(i).sqrt() * if treated { d.mu1(i) } else { d.mu0[i] });
                let mut targets = vec![mu];
                if let Some((o1, o0)) = &other {
                    let o = if treated { o1 } else { o0 };
                    targets.push(DVector::from_fn(n, |i, _| p(i).sqrt() * o[i]));
                }
                let part = GramSums::of(&Self::scaled(x, p), &targets);
                acc = Some(match acc {
                    Some(a) => a.merge(part),
                    None => part,
                });
            }
            let mut sums = acc.expect("two treatment arms");
            sums.rhs.push(contrast);
            Ok(sums)
        })?;
        let gram = &sums.gram;
        let last = sums.rhs.len() - 1;
        let mu = solve_projection(gram, &sums.rhs[0])?;
        let riesz = solve_projection(gram, &sums.rhs[last])?;
        let proj = match project {
            Some(_) => Some(solve_projection(gram, &sums.rhs[1])?),
            None => None,
        };
        Ok((mu, riesz, proj))
    }

    /// Mean of `φ(1, W)ᵀc − φ(0, W)ᵀc`.
    pub fn contrast_mean(&self, basis: &BasisSpec, coefficients: &DVector<f64>) -> Result<McEstimate> {
        if coefficients.len() != basis.n_columns() {
            return Err(Error::Dimension("coefficient count differs from basis width".into()));
        }
        self.mean_of(|d| {
            let (x1, x0) = Self::treatment_designs(basis, d)?;
            Ok(((x1 - x0) * coefficients).data.into())
        })
    }

    /// Plug-in working estimand `E[Πₙμ₀(1, W) − Πₙμ₀(0, W)]`.
    pub fn plug_in_working_estimand(&self, basis: &BasisSpec) -> Result<McEstimate> {
        let proj = self.outcome_projection(basis)?;
        self.contrast_mean(basis, &proj.coefficients)
    }

    /// Plug-in oracle estimand `E[Π₀μ₀(1, W) − Π₀μ₀(0, W)]` (`E[τ₀(W)]` when nonparametric).
    pub fn plug_in_oracle_estimand(&self, oracle: &OracleModel) -> Result<McEstimate> {
        match oracle {
            OracleModel::Nonparametric => self.true_ate(),
            OracleModel::Span(basis) => self.plug_in_working_estimand(basis),
        }
    }

    /// `E[(α₀ − Πₙα₀)(Πₙμ₀ − μ₀)]` for the working basis against the oracle model.
    ///
    /// `α₀` is the Riesz representer of the ATE functional over the oracle model
    /// and `Πₙ` the `L²(P₀)` projection onto the working basis. With a
    /// nonparametric oracle `π₀α₀(1, ·) = 1` and `(1 − π₀)α₀(0, ·) = −1` are used
    /// in place of the products.
    pub fn oracle_bias_plug_in(&self, working: &BasisSpec, oracle: &OracleModel) -> Result<OracleBias> {
        let (alpha_0, mu_n, alpha_n) = match oracle {
            OracleModel::Nonparametric => {
                let (mu, riesz, _) = self.outcome_system(working, None)?;
                (None, mu.coefficients, riesz.coefficients)
            }
            OracleModel::Span(ob) => {
                let a0 = self.plug_in_riesz(ob)?.coefficients;
                let (mu, _, proj) = self.outcome_system(working, Some((ob, &a0)))?;
                let an = proj.expect("projection requested").coefficients;
                (Some((ob, a0)), mu.coefficients, an)
            }
        };
        let per_draw = |d: &Draws| -> Result<Vec<(f64, f64, f64)>> {
            let (x1, x0) = Self::treatment_designs(working, d)?;
            let (m1, m0) = (&x1 * &mu_n, &x0 * &mu_n);
            let (a1, a0) = (&x1 * &alpha_n, &x0 * &alpha_n);
            let oracle_vals = match &alpha_0 {
                Some((ob, c)) => {
                    let (o1, o0) = Self::treatment_designs(ob, d)?;
                    Some((o1 * c, o0 * c))
                }
                None => None,
            };
            Ok((0..d.len())
                .map(|i| {
                    let p = d.pi[i];
                    let (r1, r0) = (m1[i] - d.mu1(i), m0[i] - d.mu0[i]);
                    // p(α₀ − Πₙα₀) at a = 1 and (1 − p)(α₀ − Πₙα₀) at a = 0
                    let (s1, s0) = match &oracle_vals {
                        Some((o1, o0)) => (p * (o1[i] - a1[i]), (1.0 - p) * (o0[i] - a0[i])),
                        None => (1.0 - p * a1[i], -1.0 - (1.0 - p) * a0[i]),
                    };
                    let rep = s1 * s1 / p + s0 * s0 / (1.0 - p);
                    let reg = p * r1 * r1 + (1.0 - p) * r0 * r0;
                    (s1 * r1 + s0 * r0, rep, reg)
                })
                .collect())
        };
        let bias = self.mean_of(|d| Ok(per_draw(d)?.into_iter().map(|t| t.0).collect()))?;
        let rep = self.mean_of(|d| Ok(per_draw(d)?.into_iter().map(|t| t.1).collect()))?;
        let reg = self.mean_of(|d| Ok(per_draw(d)?.into_iter().map(|t| t.2).collect()))?;
        Ok(OracleBias { bias, representer_residual: rep.value.sqrt(), regression_residual: reg.value.sqrt() })
    }
}
