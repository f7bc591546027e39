//! ATE estimators with influence-function inference.
//!
//! Every estimator returns its point estimate `ψ̂`, the estimated influence
//! function `Dᵢ` at each observation, `σₙ² = (1/n) Σ Dᵢ²` and the Wald interval
//! `ψ̂ ∓ q σₙ/√n` with `q` the `1 − α/2` standard-normal quantile.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::LeastSquares;
use crate::nuisance::{cate_basis, rlearner_fit, CateFit, NuisanceBundle, NuisanceConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    PlugInAdmle,
    PartiallyLinearAdmle,
    SemiparametricIntercept,
    Aipw,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 4] = [
        EstimatorKind::PlugInAdmle,
        EstimatorKind::PartiallyLinearAdmle,
        EstimatorKind::SemiparametricIntercept,
        EstimatorKind::Aipw,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EstimatorKind::PlugInAdmle => "plug_in_admle",
            EstimatorKind::PartiallyLinearAdmle => "partially_linear_admle",
            EstimatorKind::SemiparametricIntercept => "semiparametric_intercept",
            EstimatorKind::Aipw => "aipw",
        }
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EstimatorKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| {
                format!(
                    "unknown estimator '{s}' (expected one of {})",
                    Self::ALL.map(|k| k.as_str()).join(", ")
                )
            })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AteEstimate {
    pub kind: EstimatorKind,
    pub psi: f64,
    pub if_values: DVector<f64>,
    pub sigma: f64,
    pub ci: (f64, f64),
    pub alpha: f64,
    pub n: usize,
    /// `|Θₙ|` for the plug-in estimator, `|𝓣ₙ|` for the partially linear one,
    /// 1 for the intercept model, and the outcome model size for AIPW.
    pub model_size: usize,
}

impl AteEstimate {
    fn new(kind: EstimatorKind, psi: f64, if_values: DVector<f64>, alpha: f64, model_size: usize) -> Result<Self> {
        let (sigma, ci) = confidence_interval(psi, &if_values, alpha)?;
        Ok(Self { kind, psi, n: if_values.len(), if_values, sigma, ci, alpha, model_size })
    }

    pub fn covers(&self, value: f64) -> bool {
        self.ci.0 <= value && value <= self.ci.1
    }

    pub fn width(&self) -> f64 {
        self.ci.1 - self.ci.0
    }
}

/// Inverse standard-normal CDF (Wichura's AS241, about 16 significant digits).
#[allow(clippy::excessive_precision)]
pub fn normal_quantile(p: f64) -> f64 {
    if !(p > 0.0 && p < 1.0) {
        return if p == 0.0 {
            f64::NEG_INFINITY
        } else if p == 1.0 {
            f64::INFINITY
        } else {
            f64::NAN
        };
    }
    fn poly(c: &[f64], x: f64) -> f64 {
        c.iter().rev().fold(0.0, |acc, &v| acc * x + v)
    }
    const A: [f64; 8] = [
        3.387_132_872_796_366_608,
        133.141_667_891_784_377_45,
        1_971.590_950_306_551_442_7,
        13_731.693_765_509_461_125,
        45_921.953_931_549_871_457,
        67_265.770_927_008_700_853,
        33_430.575_583_588_128_105,
        2_509.080_928_730_122_672_7,
    ];
    const B: [f64; 8] = [
        1.0,
        42.313_330_701_600_911_252,
        687.187_007_492_057_908_3,
        5_394.196_021_424_751_107_7,
        21_213.794_301_586_595_867,
        39_307.895_800_092_710_61,
        28_729.085_735_721_942_674,
        5_226.495_278_852_854_561,
    ];
    const C: [f64; 8] = [
        1.423_437_110_749_683_577_34,
        4.630_337_846_156_545_295_9,
        5.769_497_221_460_691_405_5,
        3.647_848_324_763_204_605_04,
        1.270_458_252_452_368_382_58,
        0.241_780_725_177_450_611_77,
        0.022_723_844_989_269_184_583_3,
        7.745_450_142_783_414_076_4e-4,
    ];
    const D: [f64; 8] = [
        1.0,
        2.053_191_626_637_758_821_87,
        1.676_384_830_183_803_849_4,
        0.689_767_334_985_100_004_55,
        0.148_103_976_427_480_074_59,
        0.015_198_666_563_616_457_196_6,
        5.475_938_084_995_344_946e-4,
        1.050_750_071_644_416_843_24e-9,
    ];
    const E: [f64; 8] = [
        6.657_904_643_501_103_777_2,
        5.463_784_911_164_114_369_9,
        1.784_826_539_917_291_335_8,
        0.296_560_571_828_504_891_23,
        0.026_532_189_526_576_123_093,
        0.001_242_660_947_388_078_438_6,
        2.711_555_568_743_487_578_15e-5,
        2.010_334_399_292_288_132_65e-7,
    ];
    const F: [f64; 8] = [
        1.0,
        0.599_832_206_555_887_937_69,
        0.136_929_880_922_735_805_31,
        0.014_875_361_290_850_614_852_5,
        7.868_691_311_456_132_591e-4,
        1.846_318_317_510_054_681_8e-5,
        1.421_511_758_316_445_888_7e-7,
        2.044_263_103_389_939_785_64e-15,
    ];
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180_625 - q * q;
        return q * poly(&A, r) / poly(&B, r);
    }
    let tail = if q < 0.0 { p } else { 1.0 - p };
    let mut r = (-tail.ln()).sqrt();
    let v = if r <= 5.0 {
        r -= 1.6;
        poly(&C, r) / poly(&D, r)
    } else {
        r -= 5.0;
        poly(&E, r) / poly(&F, r)
    };
    if q < 0.0 {
        -v
    } else {
        v
    }
}

/// `σₙ = √((1/n) Σ Dᵢ²)` and the interval `psi ∓ q_{1−α/2} σₙ/√n`.
pub fn confidence_interval(psi: f64, if_values: &DVector<f64>, alpha: f64) -> Result<(f64, (f64, f64))> {
    if if_values.is_empty() {
        return Err(Error::InvalidArgument("no influence-function values".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha {alpha} outside (0, 1)")));
    }
    if !psi.is_finite() || if_values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("estimate or influence function".into()));
    }
    let n = if_values.len() as f64;
    let sigma = (if_values.norm_squared() / n).sqrt();
    let half = normal_quantile(1.0 - alpha / 2.0) * sigma / n.sqrt();
    Ok((sigma, (psi - half, psi + half)))
}

/// A representer `φᵀc` fitted by its normal equations.
#[derive(Debug, Clone, PartialEq)]
pub struct RieszFit {
    pub coefficients: DVector<f64>,
    /// Representer at each observation: `αₙ(Aᵢ, Wᵢ)` or `γₙ(Wᵢ)`.
    pub values: DVector<f64>,
    /// The Gram matrix was singular; `coefficients` is the minimum-norm solution.
    pub singular: bool,
}

/// Empirical Riesz representer of `θ ↦ E[θ(1, W) − θ(0, W)]` over the working
/// basis: solves `Ĝ c = b̂` with `Ĝ = (1/n) Σ φ(Aᵢ,Wᵢ)φ(Aᵢ,Wᵢ)ᵀ` and
/// `b̂ = (1/n) Σ [φ(1,Wᵢ) − φ(0,Wᵢ)]`.
pub fn empirical_riesz(
    observed: &DMatrix<f64>,
    treated: &DMatrix<f64>,
    control: &DMatrix<f64>,
) -> Result<RieszFit> {
    let (n, k) = observed.shape();
    if treated.shape() != (n, k) || control.shape() != (n, k) {
        return Err(Error::Dimension("counterfactual designs differ from the observed design".into()));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("empty design".into()));
    }
    // n·b̂ = Σ [φ(1,Wᵢ) − φ(0,Wᵢ)], and Σ φφᵀ = n Ĝ.
    let target = DVector::from_iterator(k, (0..k).map(|j| (treated.column(j) - control.column(j)).sum()));
    let ls = LeastSquares::new(observed, None)?;
    let coefficients = ls.solve_gram(&target)?;
    let values = observed * &coefficients;
    Ok(RieszFit { coefficients, values, singular: ls.is_rank_deficient() })
}

/// Overlap-weighted Riesz representer: solves `Σ wᵢ φ(Wᵢ)φ(Wᵢ)ᵀ c = Σ φ(Wᵢ)`.
pub fn overlap_riesz(basis: &DMatrix<f64>, weights: &[f64]) -> Result<RieszFit> {
    let (n, k) = basis.shape();
    if weights.len() != n {
        return Err(Error::Dimension(format!("{} weights for {n} rows", weights.len())));
    }
    if weights.iter().sum::<f64>() <= 0.0 {
        return Err(Error::DegenerateDesign("overlap weights sum to zero".into()));
    }
    let target = DVector::from_iterator(k, basis.column_iter().map(|c| c.sum()));
    let ls = LeastSquares::new(basis, Some(weights))?;
    let coefficients = ls.solve_gram(&target)?;
    let values = basis * &coefficients;
    Ok(RieszFit { coefficients, values, singular: ls.is_rank_deficient() })
}

fn check_len(n: usize, parts: &[(&str, usize)]) -> Result<()> {
    for (name, len) in parts {
        if *len != n {
            return Err(Error::Dimension(format!("{name} has {len} entries for {n} observations")));
        }
    }
    Ok(())
}

/// Plug-in estimator `(1/n) Σ [μₙ(1,Wᵢ) − μₙ(0,Wᵢ)]` with influence function
/// `αₙ(Aᵢ,Wᵢ)(Yᵢ − μₙ(Aᵢ,Wᵢ)) + μₙ(1,Wᵢ) − μₙ(0,Wᵢ) − ψ̂`.
pub fn plug_in_from_parts(
    y: &DVector<f64>,
    mu1: &DVector<f64>,
    mu0: &DVector<f64>,
    mu_obs: &DVector<f64>,
    riesz: &RieszFit,
    alpha: f64,
    model_size: usize,
) -> Result<AteEstimate> {
    let n = y.len();
    check_len(n, &[("mu1", mu1.len()), ("mu0", mu0.len()), ("mu_obs", mu_obs.len()), ("riesz", riesz.values.len())])?;
    let effect = mu1 - mu0;
    let psi = effect.mean();
    let d = riesz.values.component_mul(&(y - mu_obs)) + effect.add_scalar(-psi);
    AteEstimate::new(EstimatorKind::PlugInAdmle, psi, d, alpha, model_size)
}

/// Partially linear estimator `(1/n) Σ τₙ(Wᵢ)` with influence function
/// `τₙ(Wᵢ) − ψ̂ + γₙ(Wᵢ)(Aᵢ − πₙ(Wᵢ))(Yᵢ − mₙ(Wᵢ) − (Aᵢ − πₙ(Wᵢ))τₙ(Wᵢ))`.
#[allow(clippy::too_many_arguments)]
pub fn partially_linear_from_parts(
    a: &DVector<f64>,
    y: &DVector<f64>,
    pi: &DVector<f64>,
    m: &DVector<f64>,
    tau: &DVector<f64>,
    gamma: &DVector<f64>,
    alpha: f64,
    model_size: usize,
) -> Result<AteEstimate> {
    let n = y.len();
    check_len(n, &[("a", a.len()), ("pi", pi.len()), ("m", m.len()), ("tau", tau.len()), ("gamma", gamma.len())])?;
    let ra = a - pi;
    let resid = y - m - ra.component_mul(tau);
    let psi = tau.mean();
    let d = tau.add_scalar(-psi) + gamma.component_mul(&ra).component_mul(&resid);
    AteEstimate::new(EstimatorKind::PartiallyLinearAdmle, psi, d, alpha, model_size)
}

/// Partially linear intercept model: `τ̂ = Σ(Aᵢ−πᵢ)(Yᵢ−mᵢ) / Σ(Aᵢ−πᵢ)²`.
pub fn semiparametric_intercept_from_parts(
    a: &DVector<f64>,
    y: &DVector<f64>,
    pi: &DVector<f64>,
    m: &DVector<f64>,
    alpha: f64,
) -> Result<AteEstimate> {
    let n = y.len();
    check_len(n, &[("a", a.len()), ("pi", pi.len()), ("m", m.len())])?;
    let ra = a - pi;
    let denom = ra.norm_squared();
    if denom == 0.0 {
        return Err(Error::DegenerateDesign("treatment residuals A − π are all zero".into()));
    }
    let tau = ra.dot(&(y - m)) / denom;
    let gamma = n as f64 / denom;
    let d = (y - m - &ra * tau).component_mul(&ra) * gamma;
    AteEstimate::new(EstimatorKind::SemiparametricIntercept, tau, d, alpha, 1)
}

/// AIPW: `(1/n) Σ [μₙ(1,Wᵢ) − μₙ(0,Wᵢ) + (Aᵢ/πᵢ − (1−Aᵢ)/(1−πᵢ))(Yᵢ − μₙ(Aᵢ,Wᵢ))]`.
#[allow(clippy::too_many_arguments)]
pub fn aipw_from_parts(
    a: &DVector<f64>,
    y: &DVector<f64>,
    pi: &DVector<f64>,
    mu1: &DVector<f64>,
    mu0: &DVector<f64>,
    mu_obs: &DVector<f64>,
    alpha: f64,
    model_size: usize,
) -> Result<AteEstimate> {
    let n = y.len();
    check_len(n, &[("a", a.len()), ("pi", pi.len()), ("mu1", mu1.len()), ("mu0", mu0.len()), ("mu_obs", mu_obs.len())])?;
    if pi.iter().any(|p| !(*p > 0.0 && *p < 1.0)) {
        return Err(Error::InvalidArgument("propensity values must lie strictly inside (0, 1)".into()));
    }
    let summand = DVector::from_fn(n, |i, _| {
        let w = a[i] / pi[i] - (1.0 - a[i]) / (1.0 - pi[i]);
        mu1[i] - mu0[i] + w * (y[i] - mu_obs[i])
    });
    let psi = summand.mean();
    AteEstimate::new(EstimatorKind::Aipw, psi, summand.add_scalar(-psi), alpha, model_size)
}

fn check_arms(bundle: &NuisanceBundle) -> Result<()> {
    if bundle.propensity.degenerate {
        return Err(Error::DegenerateDesign("treatment is constant in the sample".into()));
    }
    Ok(())
}

/// Plug-in ADMLE on the outcome working model Θₙ of `bundle`.
pub fn plug_in_admle(data: &Dataset, bundle: &NuisanceBundle, alpha: f64) -> Result<(AteEstimate, RieszFit)> {
    check_arms(bundle)?;
    let out = &bundle.outcome;
    let n = data.n();
    let observed = out.working_design(data.w(), data.a().as_slice())?;
    let treated = out.working_design(data.w(), &vec![1.0; n])?;
    let control = out.working_design(data.w(), &vec![0.0; n])?;
    let riesz = empirical_riesz(&observed, &treated, &control)?;
    let est = plug_in_from_parts(data.y(), &out.mu1, &out.mu0, &out.mu_obs, &riesz, alpha, out.support.len())?;
    Ok((est, riesz))
}

/// Partially linear ADMLE from an R-learner fit over 𝓣ₙ.
pub fn partially_linear_admle(
    data: &Dataset,
    bundle: &NuisanceBundle,
    cate: &CateFit,
    alpha: f64,
) -> Result<(AteEstimate, RieszFit)> {
    check_arms(bundle)?;
    let ra = data.a() - bundle.pi();
    let weights: Vec<f64> = ra.iter().map(|r| r * r).collect();
    let phi = cate.working_design(data.w())?;
    let riesz = overlap_riesz(&phi, &weights)?;
    let est = partially_linear_from_parts(
        data.a(),
        data.y(),
        bundle.pi(),
        &bundle.m,
        &cate.tau,
        &riesz.values,
        alpha,
        cate.support.len(),
    )?;
    Ok((est, riesz))
}

pub fn semiparametric_intercept(data: &Dataset, bundle: &NuisanceBundle, alpha: f64) -> Result<AteEstimate> {
    check_arms(bundle)?;
    semiparametric_intercept_from_parts(data.a(), data.y(), bundle.pi(), &bundle.m, alpha)
}

pub fn aipw(data: &Dataset, bundle: &NuisanceBundle, alpha: f64) -> Result<AteEstimate> {
    check_arms(bundle)?;
    let out = &bundle.outcome;
    aipw_from_parts(data.a(), data.y(), bundle.pi(), &out.mu1, &out.mu0, &out.mu_obs, alpha, out.support.len())
}

/// Computes each requested estimator on shared nuisances; the R-learner is fitted
/// once, and only when the partially linear estimator is requested.
pub fn estimate_all(
    kinds: &[EstimatorKind],
    data: &Dataset,
    bundle: &NuisanceBundle,
    cfg: &NuisanceConfig,
    alpha: f64,
) -> Vec<Result<AteEstimate>> {
    let mut cate: Option<Result<CateFit>> = None;
    kinds
        .iter()
        .map(|&kind| match kind {
            EstimatorKind::PlugInAdmle => plug_in_admle(data, bundle, alpha).map(|(e, _)| e),
            EstimatorKind::PartiallyLinearAdmle => {
                let fit = cate.get_or_insert_with(|| {
                    rlearner_fit(data, bundle.pi(), &bundle.m, &cate_basis(&bundle.outcome), cfg)
                });
                match fit {
                    Ok(fit) => partially_linear_admle(data, bundle, fit, alpha).map(|(e, _)| e),
                    Err(e) => Err(e.clone()),
                }
            }
            EstimatorKind::SemiparametricIntercept => semiparametric_intercept(data, bundle, alpha),
            EstimatorKind::Aipw => aipw(data, bundle, alpha),
        })
        .collect()
}

#[cfg(test)]
mod tests;
