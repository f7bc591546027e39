//! Benchmark data-generating processes.
//!
//! Covariates `W ~ U(−1, 1)⁴`, treatment `A | W ~ Bernoulli(π₀(W))` with
//! `logit π₀(w) = γ Σ_j (w_j + sin 4w_j)`, outcome
//! `Y | A, W ~ N(μ₀(0, W) + A τ₀(W), σ²)` with `τ₀(w) = 1 + w₁ + |w₂| + cos 4w₃ + w₄`.
//!
//! The locally perturbed variant replaces the control mean by
//! `μ₀(0, w) − n^{-1/2}/(1 − π₀(w))` and the CATE by `1 + n^{-1/2}/(π₀(w)(1 − π₀(w)))`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::seed::rng_for;

pub const DIM: usize = 4;
pub const DEFAULT_NOISE_VARIANCE: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeForm {
    /// `μ₀(0, w) = w₁ + |w₂| + w₃ + |w₄|`
    Linear,
    /// `μ₀(0, w) = cos 4w₂ + Σ_j sin 4w_j`
    Nonlinear,
}

impl OutcomeForm {
    pub fn as_str(self) -> &'static str {
        match self {
            OutcomeForm::Linear => "linear",
            OutcomeForm::Nonlinear => "nonlinear",
        }
    }
}

impl std::str::FromStr for OutcomeForm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "linear" => Ok(Self::Linear),
            "nonlinear" => Ok(Self::Nonlinear),
            other => Err(format!("unknown outcome form '{other}' (expected linear or nonlinear)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    pub gamma: f64,
    pub outcome_form: OutcomeForm,
    pub perturbed: bool,
    /// Sample size entering the `n^{-1/2}` perturbation scale.
    pub n_for_perturbation: usize,
    pub noise_variance: f64,
}

#[inline]
pub fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl DgpSpec {
    pub fn new(gamma: f64, outcome_form: OutcomeForm) -> Self {
        Self {
            gamma,
            outcome_form,
            perturbed: false,
            n_for_perturbation: 0,
            noise_variance: DEFAULT_NOISE_VARIANCE,
        }
    }

    pub fn dim(&self) -> usize {
        DIM
    }

    fn perturbation_scale(&self) -> f64 {
        if self.perturbed {
            1.0 / (self.n_for_perturbation as f64).sqrt()
        } else {
            0.0
        }
    }

    pub fn logit(&self, w: &[f64]) -> f64 {
        self.gamma * w.iter().map(|&x| x + (4.0 * x).sin()).sum::<f64>()
    }

    pub fn propensity(&self, w: &[f64]) -> f64 {
        expit(self.logit(w))
    }

    /// `π₀(w)(1 − π₀(w))`, computed from the logit without cancellation.
    pub fn overlap_weight(&self, w: &[f64]) -> f64 {
        let eta = self.logit(w);
        let e = (-eta.abs()).exp();
        e / ((1.0 + e) * (1.0 + e))
    }

    fn base_control_mean(&self, w: &[f64]) -> f64 {
        match self.outcome_form {
            OutcomeForm::Linear => w[0] + w[1].abs() + w[2] + w[3].abs(),
            OutcomeForm::Nonlinear => (4.0 * w[1]).cos() + w.iter().map(|x| (4.0 * x).sin()).sum::<f64>(),
        }
    }

    pub fn control_mean(&self, w: &[f64]) -> f64 {
        let base = self.base_control_mean(w);
        if self.perturbed {
            // 1/(1 − π) = 1 + e^η
            base - self.perturbation_scale() * (1.0 + self.logit(w).exp())
        } else {
            base
        }
    }

    pub fn cate(&self, w: &[f64]) -> f64 {
        if self.perturbed {
            1.0 + self.perturbation_scale() * self.inverse_overlap_weight(w)
        } else {
            1.0 + w[0] + w[1].abs() + (4.0 * w[2]).cos() + w[3]
        }
    }

    /// `1/(π₀(1 − π₀)) = 2 + e^η + e^{−η}`.
    pub fn inverse_overlap_weight(&self, w: &[f64]) -> f64 {
        let eta = self.logit(w);
        2.0 + eta.exp() + (-eta).exp()
    }

    pub fn outcome_mean(&self, a: f64, w: &[f64]) -> f64 {
        self.control_mean(w) + a * self.cate(w)
    }

    /// Average treatment effect by one-dimensional quadrature.
    pub fn ate(&self) -> f64 {
        if self.perturbed {
            // E[e^{±η}] factorizes over covariates and is symmetric in the sign.
            let g = self.gamma;
            let one_dim = 0.5 * simpson(|x| (g * (x + (4.0 * x).sin())).exp(), -1.0, 1.0, 20_000);
            let inv_overlap = 2.0 + 2.0 * one_dim.powi(DIM as i32);
            1.0 + self.perturbation_scale() * inv_overlap
        } else {
            1.5 + 4f64.sin() / 4.0
        }
    }

    /// Draws `n` observations; identical `(spec, n, seed)` give identical data.
    pub fn sample(&self, n: usize, seed: u64) -> Dataset {
        let mut rng = rng_for(seed, 0);
        let sd = self.noise_variance.sqrt();
        let mut w = DMatrix::zeros(n, DIM);
        let mut a = DVector::zeros(n);
        let mut y = DVector::zeros(n);
        let mut row = [0.0; DIM];
        for i in 0..n {
            for (j, v) in row.iter_mut().enumerate() {
                *v = rng.random_range(-1.0..1.0);
                w[(i, j)] = *v;
            }
            let u: f64 = rng.random();
            a[i] = if u < self.propensity(&row) { 1.0 } else { 0.0 };
            let z: f64 = rng.sample(StandardNormal);
            y[i] = self.outcome_mean(a[i], &row) + sd * z;
        }
        Dataset::new(w, a, y).expect("simulated data are valid")
    }
}

/// Composite Simpson rule with `intervals` (even) subintervals.
pub(crate) fn simpson(f: impl Fn(f64) -> f64, lo: f64, hi: f64, intervals: usize) -> f64 {
    let m = intervals + intervals % 2;
    let h = (hi - lo) / m as f64;
    let mut acc = f(lo) + f(hi);
    for k in 1..m {
        let x = lo + h * k as f64;
        acc += if k % 2 == 1 { 4.0 * f(x) } else { 2.0 * f(x) };
    }
    acc * h / 3.0
}

/// Draws `n` observations from `spec`.
pub fn sample_dgp(spec: &DgpSpec, n: usize, seed: u64) -> Dataset {
    spec.sample(n, seed)
}

/// The least-favorable local perturbation of `spec` at sample size `n`
/// (baseline CATE set to the constant 1).
pub fn apply_local_perturbation(spec: &DgpSpec, n: usize) -> DgpSpec {
    assert!(n >= 1, "perturbation needs n >= 1");
    DgpSpec { perturbed: true, n_for_perturbation: n, ..*spec }
}

/// `max_{w ∈ [−1, 1]} (w + sin 4w)` and its maximizer, by grid search refined with golden sections.
pub fn max_logit_component() -> (f64, f64) {
    let f = |x: f64| x + (4.0 * x).sin();
    let m = 4000;
    let (mut best, mut arg) = (f64::NEG_INFINITY, 0.0);
    for k in 0..=m {
        let x = -1.0 + 2.0 * k as f64 / m as f64;
        if f(x) > best {
            best = f(x);
            arg = x;
        }
    }
    let step = 2.0 / m as f64;
    let (mut lo, mut hi) = ((arg - step).max(-1.0), (arg + step).min(1.0));
    let r = (5f64.sqrt() - 1.0) / 2.0;
    while hi - lo > 1e-12 {
        let x1 = hi - r * (hi - lo);
        let x2 = lo + r * (hi - lo);
        if f(x1) < f(x2) {
            lo = x1;
        } else {
            hi = x2;
        }
    }
    let mut x = 0.5 * (lo + hi);
    // Golden sections stall near sqrt(eps) on a flat maximum; finish with Newton on f'.
    for _ in 0..3 {
        let d2 = -16.0 * (4.0 * x).sin();
        if d2 < 0.0 {
            let next = x - (1.0 + 4.0 * (4.0 * x).cos()) / d2;
            if (-1.0..=1.0).contains(&next) {
                x = next;
            }
        }
    }
    (x, f(x))
}

/// Overlap constant `c₀ = inf_w min{π₀(w), 1 − π₀(w)} = expit(−|γ| L)` with
/// `L = 4 max_w (w + sin 4w)`.
pub fn overlap_constant(spec: &DgpSpec) -> f64 {
    let (_, v) = max_logit_component();
    expit(-spec.gamma.abs() * DIM as f64 * v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn maximizer_of_logit_component() {
        let (x, v) = max_logit_component();
        // stationary point: 1 + 4 cos 4w = 0
        let root = (-0.25f64).acos() / 4.0;
        assert!((x - root).abs() < 1e-9);
        assert!((v - (root + (4.0 * root).sin())).abs() < 1e-12);
        assert!((4.0 * v - 5.696459928144392).abs() < 1e-9);
    }

    #[test]
    fn overlap_constants() {
        let c = |g| overlap_constant(&DgpSpec::new(g, OutcomeForm::Linear));
        assert_eq!(c(0.0), 0.5);
        assert!((c(1.0) - 0.0033465941075820306).abs() < 1e-12);
        assert!((c(0.5) - 0.05477288477474205).abs() < 1e-12);
        assert!((c(2.0) - 1.127490462877008e-05).abs() < 1e-15);
    }

    #[test]
    fn analytic_ate() {
        let spec = DgpSpec::new(0.5, OutcomeForm::Linear);
        assert!((spec.ate() - 1.310799376173018).abs() < 1e-14);
        assert!((1.5 + 4f64.sin() / 4.0 - 1.31080).abs() < 1e-5);
    }

    #[test]
    fn perturbed_ate_uses_inverse_overlap_moment() {
        // E[1/(π(1−π))] = 5.254311751120079 for γ = 0.5 (independent quadrature)
        let spec = apply_local_perturbation(&DgpSpec::new(0.5, OutcomeForm::Linear), 100);
        assert!((spec.ate() - (1.0 + 0.1 * 5.254311751120079)).abs() < 1e-10);
        let flat = apply_local_perturbation(&DgpSpec::new(0.0, OutcomeForm::Linear), 100);
        assert!((flat.ate() - 1.4).abs() < 1e-12);
    }

    #[test]
    fn perturbation_at_balanced_point() {
        let base = DgpSpec::new(0.5, OutcomeForm::Linear);
        let pert = apply_local_perturbation(&base, 100);
        let w = [0.0; 4];
        assert!((pert.control_mean(&w) - (base.control_mean(&w) - 0.2)).abs() < 1e-14);
        assert!((pert.cate(&w) - 1.4).abs() < 1e-14);
    }

    #[test]
    fn perturbation_vanishes_for_large_n() {
        let base = DgpSpec::new(1.0, OutcomeForm::Nonlinear);
        let pert = apply_local_perturbation(&base, 1 << 40);
        let w = [0.3, -0.7, 0.1, 0.9];
        assert!((pert.control_mean(&w) - base.control_mean(&w)).abs() < 1e-4);
        assert!((pert.cate(&w) - 1.0).abs() < 1e-4);
    }

    #[test]
    fn perturbation_bounded_by_overlap_constant() {
        let base = DgpSpec::new(0.5, OutcomeForm::Linear);
        let n = 1000;
        let pert = apply_local_perturbation(&base, n);
        let bound = 1.0 / (n as f64).sqrt() / overlap_constant(&base);
        let mut rng = crate::seed::rng_for(3, 3);
        for _ in 0..20_000 {
            let w: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let shift = (pert.control_mean(&w) - base.control_mean(&w)).abs();
            assert!(shift <= bound * (1.0 + 1e-12));
        }
        let (x, _) = max_logit_component();
        let worst = [x; 4];
        let shift = (pert.control_mean(&worst) - base.control_mean(&worst)).abs();
        assert!(shift <= bound * (1.0 + 1e-12) && shift > 0.99 * bound);
    }

    #[test]
    fn sampling_is_deterministic() {
        let spec = DgpSpec::new(0.5, OutcomeForm::Nonlinear);
        assert_eq!(spec.sample(50, 7), spec.sample(50, 7));
        assert_ne!(spec.sample(50, 7), spec.sample(50, 8));
    }

    #[test]
    fn balanced_assignment_without_confounding() {
        let spec = DgpSpec::new(0.0, OutcomeForm::Linear);
        let n = 20_000;
        let d = spec.sample(n, 11);
        let frac = d.treated_count() as f64 / n as f64;
        assert!((frac - 0.5).abs() < 3.0 * (0.25 / n as f64).sqrt());
    }

    #[test]
    fn mean_cate_approaches_analytic_value() {
        let spec = DgpSpec::new(1.0, OutcomeForm::Linear);
        let d = spec.sample(200_000, 5);
        let mean: f64 = (0..d.n()).map(|i| {
            let w: Vec<f64> = d.w().row(i).iter().copied().collect();
            spec.cate(&w)
        }).sum::<f64>() / d.n() as f64;
        // sd(τ₀) < 1, so 4 standard errors < 0.01
        assert!((mean - 1.31080).abs() < 0.01);
    }

    #[test]
    fn overlap_weight_matches_direct_formula() {
        let spec = DgpSpec::new(2.0, OutcomeForm::Linear);
        let w = [0.2, -0.4, 0.9, 0.1];
        let p = spec.propensity(&w);
        assert!((spec.overlap_weight(&w) - p * (1.0 - p)).abs() < 1e-15);
        assert!((spec.inverse_overlap_weight(&w) * spec.overlap_weight(&w) - 1.0).abs() < 1e-12);
    }
}
