use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;

use super::*;
use crate::nuisance::{fit_nuisances, NuisanceConfig};
use crate::seed::rng_for;

/// Standard-normal upper tail `∫_x^∞ φ` by composite Simpson on a truncated range.
fn upper_tail(x: f64) -> f64 {
    let (lo, hi) = (x, x.max(0.0) + 40.0);
    let m = 400_000;
    let h = (hi - lo) / m as f64;
    let f = |t: f64| (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let mut acc = f(lo) + f(hi);
    for k in 1..m {
        let t = lo + h * k as f64;
        acc += if k % 2 == 1 { 4.0 * f(t) } else { 2.0 * f(t) };
    }
    acc * h / 3.0
}

#[test]
fn quantile_against_numerical_integration() {
    for &p in &[0.975, 0.95, 0.9, 0.6, 0.995, 0.999_999, 1.0 - 1e-10] {
        let q = normal_quantile(p);
        let tail = upper_tail(q);
        assert!((tail - (1.0 - p)).abs() <= 1e-9 * (1.0 - p), "p = {p}: tail {tail}");
        assert!((normal_quantile(1.0 - p) + q).abs() < 1e-12 * q.abs().max(1.0));
    }
    assert_eq!(normal_quantile(0.5), 0.0);
    assert!((normal_quantile(0.975) - 1.959964).abs() < 1e-5);
    assert!(normal_quantile(0.0).is_infinite() && normal_quantile(1.5).is_nan());
}

#[test]
fn interval_examples() {
    let (sigma, ci) = confidence_interval(0.7, &DVector::zeros(5), 0.05).unwrap();
    assert_eq!(sigma, 0.0);
    assert_eq!(ci, (0.7, 0.7));
    let (sigma, ci) = confidence_interval(0.0, &DVector::from_vec(vec![-1.0, 1.0]), 0.05).unwrap();
    assert_eq!(sigma, 1.0);
    let half = normal_quantile(0.975) / 2f64.sqrt();
    assert!((ci.1 - half).abs() < 1e-15 && (ci.0 + half).abs() < 1e-15);
    assert!(confidence_interval(0.0, &DVector::zeros(0), 0.05).is_err());
    assert!(confidence_interval(0.0, &DVector::zeros(2), 1.0).is_err());
}

fn random_binary(n: usize, seed: u64, p: f64) -> (DMatrix<f64>, DVector<f64>, DVector<f64>) {
    let mut rng = rng_for(seed, 0);
    let w = DMatrix::from_fn(n, 2, |_, _| rng.random_range(-1.0..1.0));
    let a = DVector::from_fn(n, |_, _| if rng.random::<f64>() < p { 1.0 } else { 0.0 });
    let y = DVector::from_fn(n, |i, _| w[(i, 0)] + a[i] * (1.0 + w[(i, 1)]) + rng.random::<f64>());
    (w, a, y)
}

/// Columns `[1, a]` of the saturated treatment-only basis.
fn one_a(a: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.len(), 2, |i, j| if j == 0 { 1.0 } else { a[i] })
}

#[test]
fn riesz_on_intercept_and_treatment() {
    let a = DVector::from_vec(vec![1.0, 0.0, 1.0, 0.0, 0.0, 1.0]);
    let n = a.len();
    let fit = empirical_riesz(&one_a(&a), &one_a(&DVector::from_element(n, 1.0)), &one_a(&DVector::zeros(n))).unwrap();
    assert!((fit.coefficients[0] + 2.0).abs() < 1e-10);
    assert!((fit.coefficients[1] - 4.0).abs() < 1e-10);
    for i in 0..n {
        let expect = if a[i] == 1.0 { 2.0 } else { -2.0 };
        assert!((fit.values[i] - expect).abs() < 1e-10);
    }
    assert!(!fit.singular);
}

#[test]
fn riesz_normal_equations_and_zero_target() {
    let (w, a, _) = random_binary(80, 3, 0.4);
    let design = |av: &DVector<f64>| {
        DMatrix::from_fn(80, 4, |i, j| match j {
            0 => 1.0,
            1 => w[(i, 0)],
            2 => av[i],
            _ => av[i] * w[(i, 1)],
        })
    };
    let obs = design(&a);
    let t = design(&DVector::from_element(80, 1.0));
    let c = design(&DVector::zeros(80));
    let fit = empirical_riesz(&obs, &t, &c).unwrap();
    for j in 0..4 {
        let lhs = fit.values.dot(&obs.column(j)) / 80.0;
        let rhs = (t.column(j) - c.column(j)).mean();
        assert!((lhs - rhs).abs() < 1e-8, "column {j}");
    }
    let covariate_only = obs.columns(0, 2).into_owned();
    let fit = empirical_riesz(&covariate_only, &covariate_only, &covariate_only).unwrap();
    assert!(fit.values.amax() < 1e-14);
}

#[test]
fn overlap_riesz_constant_basis() {
    let ones = DMatrix::from_element(7, 1, 1.0);
    let fit = overlap_riesz(&ones, &[0.25; 7]).unwrap();
    assert!(fit.values.iter().all(|g| (g - 4.0).abs() < 1e-10));
    let w = [0.1, 0.3, 0.2, 0.25, 0.05, 0.4, 0.2];
    let fit = overlap_riesz(&ones, &w).unwrap();
    let expect = 7.0 / w.iter().sum::<f64>();
    assert!(fit.values.iter().all(|g| (g - expect).abs() < 1e-10));
    assert!(overlap_riesz(&ones, &[0.0; 7]).is_err());
}

#[test]
fn overlap_riesz_with_known_half_propensity() {
    let (_, a, _) = random_binary(40, 9, 0.5);
    let weights: Vec<f64> = a.iter().map(|ai| (ai - 0.5).powi(2)).collect();
    let fit = overlap_riesz(&DMatrix::from_element(40, 1, 1.0), &weights).unwrap();
    assert!(fit.values.iter().all(|g| (g - 4.0).abs() < 1e-10));
}

#[test]
fn overlap_riesz_saturated_indicators() {
    let cells = [0usize, 1, 2, 0, 1, 2, 2, 0, 1, 1];
    let weights = [0.2, 0.1, 0.25, 0.05, 0.3, 0.15, 0.2, 0.25, 0.1, 0.2];
    let basis = DMatrix::from_fn(cells.len(), 3, |i, j| f64::from(u8::from(cells[i] == j)));
    let fit = overlap_riesz(&basis, &weights).unwrap();
    for i in 0..cells.len() {
        let (count, total) = cells
            .iter()
            .zip(&weights)
            .filter(|(c, _)| **c == cells[i])
            .fold((0.0, 0.0), |(k, s), (_, w)| (k + 1.0, s + w));
        assert!((fit.values[i] - count / total).abs() < 1e-10);
    }
}

/// OLS fit on `[1, a]` and its counterfactual predictions.
fn ols_one_a(a: &DVector<f64>, y: &DVector<f64>) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
    let coef = crate::lasso::solve_wls(&one_a(a), y, None).unwrap();
    let n = a.len();
    let mu1 = DVector::from_element(n, coef[0] + coef[1]);
    let mu0 = DVector::from_element(n, coef[0]);
    let obs = DVector::from_fn(n, |i, _| coef[0] + coef[1] * a[i]);
    (mu1, mu0, obs)
}

fn plug_in_one_a(a: &DVector<f64>, y: &DVector<f64>) -> AteEstimate {
    let n = a.len();
    let (mu1, mu0, obs) = ols_one_a(a, y);
    let riesz = empirical_riesz(&one_a(a), &one_a(&DVector::from_element(n, 1.0)), &one_a(&DVector::zeros(n))).unwrap();
    plug_in_from_parts(y, &mu1, &mu0, &obs, &riesz, 0.05, 2).unwrap()
}

#[test]
fn plug_in_difference_in_means() {
    let (_, a, y) = random_binary(60, 4, 0.5);
    let est = plug_in_one_a(&a, &y);
    let (mut s1, mut n1, mut s0, mut n0) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..60 {
        if a[i] == 1.0 {
            s1 += y[i];
            n1 += 1.0;
        } else {
            s0 += y[i];
            n0 += 1.0;
        }
    }
    assert!((est.psi - (s1 / n1 - s0 / n0)).abs() < 1e-12);
    assert!(est.if_values.mean().abs() < 1e-12);
    let constant = plug_in_one_a(&a, &DVector::from_element(60, 3.0));
    assert!(constant.psi.abs() < 1e-12 && constant.sigma < 1e-10);
}

#[test]
fn aipw_equals_plug_in_on_saturated_basis() {
    for seed in 0..20 {
        let (_, a, y) = random_binary(50, 100 + seed, 0.3 + 0.02 * seed as f64);
        if a.sum() == 0.0 || a.sum() == 50.0 {
            continue;
        }
        let pi = DVector::from_element(50, a.mean());
        let (mu1, mu0, obs) = ols_one_a(&a, &y);
        let ai = aipw_from_parts(&a, &y, &pi, &mu1, &mu0, &obs, 0.05, 2).unwrap();
        let pl = plug_in_one_a(&a, &y);
        assert!((ai.psi - pl.psi).abs() < 1e-8);
        assert!((&ai.if_values - &pl.if_values).amax() < 1e-8);
    }
}

#[test]
fn aipw_examples() {
    let (w, a, y) = random_binary(30, 5, 0.5);
    let half = DVector::from_element(30, 0.5);
    let zero = DVector::zeros(30);
    let est = aipw_from_parts(&a, &y, &half, &zero, &zero, &zero, 0.05, 0).unwrap();
    let expect = 2.0 * a.component_mul(&y).mean() - 2.0 * a.map(|v| 1.0 - v).component_mul(&y).mean();
    assert!((est.psi - expect).abs() < 1e-12);
    let est = aipw_from_parts(&a, &zero, &half, &zero, &zero, &zero, 0.05, 0).unwrap();
    assert_eq!(est.psi, 0.0);
    // true regression, noiseless outcome
    let mu0 = w.column(0).into_owned();
    let mu1 = mu0.map(|v| v + 1.0) + w.column(1);
    let obs = DVector::from_fn(30, |i, _| if a[i] == 1.0 { mu1[i] } else { mu0[i] });
    let pi = DVector::from_fn(30, |i, _| 0.3 + 0.4 * (w[(i, 1)] + 1.0) / 2.0);
    let est = aipw_from_parts(&a, &obs, &pi, &mu1, &mu0, &obs, 0.05, 0).unwrap();
    assert!((est.psi - (&mu1 - &mu0).mean()).abs() < 1e-14);
}

#[test]
fn intercept_model_examples() {
    let (w, a, _) = random_binary(40, 6, 0.5);
    let pi = DVector::from_fn(40, |i, _| 0.4 + 0.2 * w[(i, 0)].abs());
    let m = w.column(1).into_owned();
    let y = &m + (&a - &pi) * 1.7;
    let est = semiparametric_intercept_from_parts(&a, &y, &pi, &m, 0.05).unwrap();
    assert!((est.psi - 1.7).abs() < 1e-12);
    assert!(est.sigma < 1e-12);
    let err = semiparametric_intercept_from_parts(&a, &y, &a, &m, 0.05).unwrap_err();
    assert!(matches!(err, Error::DegenerateDesign(_)));
}

#[test]
fn partially_linear_with_constant_basis_is_intercept_model() {
    let (w, a, y) = random_binary(70, 8, 0.45);
    let pi = DVector::from_fn(70, |i, _| 0.35 + 0.2 * (w[(i, 0)] + 1.0) / 2.0);
    let m = w.column(0) * 0.8;
    let ra = &a - &pi;
    let tau_hat = ra.dot(&(&y - &m)) / ra.norm_squared();
    let tau = DVector::from_element(70, tau_hat);
    let weights: Vec<f64> = ra.iter().map(|r| r * r).collect();
    let gamma = overlap_riesz(&DMatrix::from_element(70, 1, 1.0), &weights).unwrap();
    let pl = partially_linear_from_parts(&a, &y, &pi, &m, &tau, &gamma.values, 0.05, 1).unwrap();
    let sp = semiparametric_intercept_from_parts(&a, &y, &pi, &m, 0.05).unwrap();
    assert!((pl.psi - sp.psi).abs() < 1e-10);
    assert!((&pl.if_values - &sp.if_values).amax() < 1e-10);
    assert!(pl.if_values.mean().abs() < 1e-10);
}

#[test]
fn partially_linear_noiseless_recovery() {
    let (w, a, _) = random_binary(90, 12, 0.5);
    let pi = DVector::from_fn(90, |i, _| 0.5 + 0.1 * w[(i, 1)]);
    let m = w.column(0).map(f64::sin);
    let tau = DVector::from_fn(90, |i, _| 1.0 + w[(i, 0)] - 0.5 * w[(i, 1)]);
    let y = &m + (&a - &pi).component_mul(&tau);
    let gamma = DVector::from_element(90, 4.0);
    let est = partially_linear_from_parts(&a, &y, &pi, &m, &tau, &gamma, 0.05, 3).unwrap();
    assert!((est.psi - tau.mean()).abs() < 1e-14);
}

#[test]
fn interval_narrows_with_alpha() {
    let (_, a, y) = random_binary(60, 14, 0.5);
    let (mu1, mu0, obs) = ols_one_a(&a, &y);
    let pi = DVector::from_element(60, 0.5);
    let wide = aipw_from_parts(&a, &y, &pi, &mu1, &mu0, &obs, 0.05, 2).unwrap();
    let narrow = aipw_from_parts(&a, &y, &pi, &mu1, &mu0, &obs, 0.1, 2).unwrap();
    assert!(narrow.width() < wide.width());
    assert_eq!(narrow.psi, wide.psi);
}

/// Sandwich variance of the plug-in estimator treating the working model as
/// fixed: stacked estimating equations `Xᵢ(Yᵢ − Xᵢβ) = 0` and
/// `(X₁ᵢ − X₀ᵢ)β − ψ = 0`, variance `B⁻¹ M B⁻ᵀ`.
#[test]
fn plug_in_variance_matches_stacked_sandwich() {
    let (w, a, y) = random_binary(120, 21, 0.5);
    let n = 120;
    let design = |av: &DVector<f64>| {
        DMatrix::from_fn(n, 4, |i, j| match j {
            0 => 1.0,
            1 => w[(i, 0)],
            2 => av[i],
            _ => av[i] * w[(i, 1)],
        })
    };
    let x = design(&a);
    let x1 = design(&DVector::from_element(n, 1.0));
    let x0 = design(&DVector::zeros(n));
    let beta = (x.transpose() * &x).lu().solve(&(x.transpose() * &y)).unwrap();
    let mu_obs = &x * &beta;
    let mu1 = &x1 * &beta;
    let mu0 = &x0 * &beta;
    let riesz = empirical_riesz(&x, &x1, &x0).unwrap();
    let est = plug_in_from_parts(&y, &mu1, &mu0, &mu_obs, &riesz, 0.05, 4).unwrap();

    let p = 5;
    let dx = &x1 - &x0;
    let mut bread = DMatrix::zeros(p, p);
    bread.view_mut((0, 0), (4, 4)).copy_from(&(-(x.transpose() * &x) / n as f64));
    for j in 0..4 {
        bread[(4, j)] = dx.column(j).mean();
    }
    bread[(4, 4)] = -1.0;
    let mut meat = DMatrix::zeros(p, p);
    for i in 0..n {
        let r = y[i] - mu_obs[i];
        let mut g = DVector::zeros(p);
        for j in 0..4 {
            g[j] = x[(i, j)] * r;
        }
        g[4] = dx.row(i).dot(&beta.transpose()) - est.psi;
        meat += &g * g.transpose() / n as f64;
    }
    let binv = bread.try_inverse().unwrap();
    let cov = &binv * meat * binv.transpose();
    assert!((cov[(4, 4)] - est.sigma * est.sigma).abs() < 1e-10 * cov[(4, 4)]);
}

#[test]
fn estimator_names_round_trip() {
    for kind in EstimatorKind::ALL {
        assert_eq!(kind.as_str().parse::<EstimatorKind>().unwrap(), kind);
    }
    assert!("tmle".parse::<EstimatorKind>().is_err());
}

fn simulated(n: usize, seed: u64) -> Dataset {
    let (w, a, y) = {
        let mut rng = rng_for(seed, 1);
        let w = DMatrix::from_fn(n, 3, |_, _| rng.random_range(-1.0..1.0));
        let a = DVector::from_fn(n, |i, _| {
            let p = 0.5 + 0.3 * w[(i, 0)];
            if rng.random::<f64>() < p { 1.0 } else { 0.0 }
        });
        let y = DVector::from_fn(n, |i, _| {
            w[(i, 1)].abs() + a[i] * (1.0 + w[(i, 0)]) + (rng.random::<f64>() - 0.5)
        });
        (w, a, y)
    };
    Dataset::new(w, a, y).unwrap()
}

#[test]
fn fitted_admles_are_self_debiasing() {
    let data = simulated(300, 2);
    let cfg = NuisanceConfig { folds: 5, n_lambda: 40, ..NuisanceConfig::new(6, 3) };
    let bundle = fit_nuisances(&data, &cfg).unwrap();
    let all = estimate_all(&EstimatorKind::ALL, &data, &bundle, &cfg, 0.05);
    for est in &all {
        let est = est.as_ref().unwrap();
        assert!((est.sigma.powi(2) - est.if_values.norm_squared() / 300.0).abs() <= 1e-12 * est.sigma.powi(2));
        let half = normal_quantile(0.975) * est.sigma / 300f64.sqrt();
        assert!((est.ci.0 - (est.psi - half)).abs() < 1e-12 && (est.ci.1 - (est.psi + half)).abs() < 1e-12);
    }
    let plug = all[0].as_ref().unwrap();
    let pl = all[1].as_ref().unwrap();
    assert!(plug.if_values.mean().abs() < 1e-8);
    assert!(pl.if_values.mean().abs() < 1e-8);
    assert!(pl.model_size >= 1 && plug.model_size >= 2);
}

#[test]
fn constant_treatment_is_a_degenerate_design() {
    let base = simulated(120, 5);
    let data = Dataset::new(base.w().clone(), DVector::from_element(120, 1.0), base.y().clone()).unwrap();
    let cfg = NuisanceConfig { folds: 5, n_lambda: 20, ..NuisanceConfig::new(3, 1) };
    let bundle = fit_nuisances(&data, &cfg).unwrap();
    assert!(bundle.propensity.degenerate);
    for est in estimate_all(&EstimatorKind::ALL, &data, &bundle, &cfg, 0.05) {
        assert!(matches!(est, Err(Error::DegenerateDesign(_))), "{est:?}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn riesz_normal_equations_hold(seed in 0u64..1_000, n in 12usize..60) {
        let (w, a, _) = random_binary(n, seed, 0.5);
        prop_assume!(a.sum() > 1.0 && a.sum() < n as f64 - 1.0);
        let design = |av: &DVector<f64>| {
            DMatrix::from_fn(n, 3, |i, j| match j {
                0 => 1.0,
                1 => av[i],
                _ => av[i] * crate::basis::hinge(w[(i, 0)], 0.0),
            })
        };
        let obs = design(&a);
        let t = design(&DVector::from_element(n, 1.0));
        let c = design(&DVector::zeros(n));
        let fit = empirical_riesz(&obs, &t, &c).unwrap();
        prop_assume!(!fit.singular);
        for j in 0..3 {
            let lhs = fit.values.dot(&obs.column(j)) / n as f64;
            let rhs = (t.column(j) - c.column(j)).mean();
            prop_assert!((lhs - rhs).abs() < 1e-8);
        }
        let weights: Vec<f64> = a.iter().map(|ai| (ai - 0.45).powi(2)).collect();
        let phi = DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { w[(i, 1)] });
        let g = overlap_riesz(&phi, &weights).unwrap();
        for j in 0..2 {
            let lhs: f64 = (0..n).map(|i| weights[i] * g.values[i] * phi[(i, j)]).sum();
            let rhs: f64 = phi.column(j).sum();
            prop_assert!((lhs - rhs).abs() < 1e-8 * rhs.abs().max(1.0));
        }
    }
}
