use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::*;

fn gaussian(rng: &mut ChaCha8Rng, n: usize, p: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, p, |_, _| rng.sample(StandardNormal))
}

/// Centered columns with `XᵀX/n = I`.
fn orthonormal_design(rng: &mut ChaCha8Rng, n: usize, p: usize) -> DMatrix<f64> {
    let mut a = gaussian(rng, n, p);
    for mut col in a.column_iter_mut() {
        let m = col.mean();
        col.add_scalar_mut(-m);
    }
    a.qr().q() * (n as f64).sqrt()
}

/// Intercept-augmented normal equations solved by LU.
fn ols_oracle(x: &DMatrix<f64>, y: &DVector<f64>) -> (f64, DVector<f64>) {
    let (n, p) = x.shape();
    let mut z = DMatrix::from_element(n, p + 1, 1.0);
    z.columns_mut(1, p).copy_from(x);
    let b = (z.transpose() * &z).lu().solve(&(z.transpose() * y)).unwrap();
    (b[0], b.rows(1, p).into_owned())
}

#[test]
fn orthonormal_design_matches_soft_threshold() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let n = 60;
    let x = orthonormal_design(&mut rng, n, 6);
    let y = gaussian(&mut rng, n, 1).column(0).into_owned() + x.column(0) * 1.5;
    let lambda = 0.2;
    let fit = coordinate_descent(&x, &y, lambda, &[1.0; 6], None, &LassoOptions::default()).unwrap();
    for j in 0..6 {
        let z = x.column(j).dot(&y) / n as f64;
        assert!((fit.coefficients[j] - soft_threshold(z, lambda)).abs() < 1e-9);
    }
}

#[test]
fn zero_penalty_is_ols() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = gaussian(&mut rng, 40, 4);
    let y = gaussian(&mut rng, 40, 1).column(0).into_owned();
    let fit = coordinate_descent(&x, &y, 0.0, &[1.0; 4], None, &LassoOptions::default()).unwrap();
    let (b0, b) = ols_oracle(&x, &y);
    assert!((fit.intercept - b0).abs() < 1e-7);
    assert!((&fit.coefficients - b).amax() < 1e-7);
}

#[test]
fn full_shrinkage_above_lambda_max() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = gaussian(&mut rng, 30, 5);
    let y = gaussian(&mut rng, 30, 1).column(0).into_owned();
    let lmax = lambda_max(&x, &y, &[1.0; 5], None, &LassoOptions::default()).unwrap();
    let fit = coordinate_descent(&x, &y, lmax * 1.000001, &[1.0; 5], None, &LassoOptions::default()).unwrap();
    assert!(fit.support.is_empty());
    assert!((fit.intercept - y.mean()).abs() < 1e-12);
    let below = coordinate_descent(&x, &y, lmax * 0.99, &[1.0; 5], None, &LassoOptions::default()).unwrap();
    assert_eq!(below.support.len(), 1);
}

#[test]
fn weighted_full_shrinkage_uses_weighted_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = gaussian(&mut rng, 20, 3);
    let y = gaussian(&mut rng, 20, 1).column(0).into_owned();
    let w: Vec<f64> = (0..20).map(|i| 0.5 + (i % 4) as f64).collect();
    let fit = coordinate_descent(&x, &y, 1e6, &[1.0; 3], Some(&w), &LassoOptions::default()).unwrap();
    let wm = y.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / w.iter().sum::<f64>();
    assert!((fit.intercept - wm).abs() < 1e-12);
}

#[test]
fn non_finite_input_is_rejected() {
    let mut x = DMatrix::from_element(5, 2, 1.0);
    x[(2, 1)] = f64::NAN;
    let y = DVector::zeros(5);
    assert!(matches!(
        coordinate_descent(&x, &y, 0.1, &[1.0; 2], None, &LassoOptions::default()),
        Err(crate::Error::NonFinite(_))
    ));
}

#[test]
fn exhausting_sweeps_reports_gap() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let base = gaussian(&mut rng, 50, 1);
    // nearly collinear columns converge slowly
    let x = DMatrix::from_fn(50, 3, |i, j| base[(i, 0)] + 1e-3 * (j as f64) * ((i * 7 % 5) as f64));
    let y = base.column(0) * 2.0;
    let opts = LassoOptions { max_sweeps: 1, ..Default::default() };
    match coordinate_descent(&x, &y, 1e-4, &[1.0; 3], None, &opts) {
        Err(crate::Error::NoConvergence { sweeps, gap }) => {
            assert_eq!(sweeps, 1);
            assert!(gap >= 0.0 && gap.is_finite());
        }
        other => panic!("expected non-convergence, got {other:?}"),
    }
}

#[test]
fn kkt_objective_and_warm_starts_on_hinge_like_design() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let n = 120;
    let u: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let knots: Vec<f64> = (1..=15).map(|k| -1.0 + 2.0 * k as f64 / 16.0).collect();
    let x = DMatrix::from_fn(n, knots.len(), |i, j| (u[i] - knots[j]).max(0.0));
    let y = DVector::from_iterator(n, u.iter().map(|&v| v.abs() + 0.1 * rng.sample::<f64, _>(StandardNormal)));
    let pf = vec![1.0; knots.len()];
    let opts = LassoOptions { record_objective: true, ..Default::default() };
    let lmax = lambda_max(&x, &y, &pf, None, &opts).unwrap();
    let grid = lambda_grid(lmax, 30, 1e-3);
    let path = lasso_path(&x, &y, &grid, &pf, None, &opts).unwrap();
    for fit in &path {
        assert!(kkt_violation(&x, &y, fit, &pf, None, true).unwrap() <= 1e-8);
        assert!(fit.objective_trace.windows(2).all(|w| w[1] <= w[0] + 1e-15));
    }
    for (k, warm) in path.iter().enumerate().step_by(7) {
        let cold = coordinate_descent(&x, &y, grid[k], &pf, None, &opts).unwrap();
        let diff = (&cold.coefficients - &warm.coefficients).amax();
        assert!(diff < 1e-7, "lambda index {k}: {diff:e}");
    }
}

#[test]
fn unpenalized_column_is_always_kept() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = gaussian(&mut rng, 50, 4);
    let y = x.column(0) * 0.3 + gaussian(&mut rng, 50, 1).column(0);
    let pf = [0.0, 1.0, 1.0, 1.0];
    let fit = coordinate_descent(&x, &y, 1e3, &pf, None, &LassoOptions::default()).unwrap();
    assert_eq!(fit.support, vec![0]);
    assert!(kkt_violation(&x, &y, &fit, &pf, None, true).unwrap() <= 1e-8);
}

#[test]
fn relaxed_refit_full_support_is_ols() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = gaussian(&mut rng, 30, 3);
    let y = gaussian(&mut rng, 30, 1).column(0).into_owned();
    let fit = relaxed_refit(&x, &y, &[0, 1, 2], None, true).unwrap();
    let (b0, b) = ols_oracle(&x, &y);
    assert!((fit.intercept - b0).abs() < 1e-10);
    assert!((&fit.coefficients - b).amax() < 1e-10);
}

#[test]
fn relaxed_refit_empty_support_is_mean() {
    let y = DVector::from_vec(vec![1.0, 2.0, 6.0]);
    let fit = relaxed_refit(&DMatrix::zeros(3, 2), &y, &[], None, true).unwrap();
    assert!((fit.intercept - 3.0).abs() < 1e-14);
    assert!(fit.support.is_empty());
}

#[test]
fn relaxed_refit_single_column_is_simple_regression() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = gaussian(&mut rng, 25, 3);
    let y = gaussian(&mut rng, 25, 1).column(0) + x.column(1) * 0.7;
    let fit = relaxed_refit(&x, &y, &[1], None, true).unwrap();
    let xj = x.column(1);
    let (mx, my) = (xj.mean(), y.mean());
    let cov: f64 = xj.iter().zip(y.iter()).map(|(a, b)| (a - mx) * (b - my)).sum();
    let var: f64 = xj.iter().map(|a| (a - mx).powi(2)).sum();
    assert!((fit.coefficients[1] - cov / var).abs() < 1e-12);
    assert_eq!(fit.coefficients[0], 0.0);
    assert_eq!(fit.coefficients[2], 0.0);
}

#[test]
fn relaxed_residuals_orthogonal_to_support() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let x = gaussian(&mut rng, 80, 10);
    let y = gaussian(&mut rng, 80, 1).column(0).into_owned();
    let w: Vec<f64> = (0..80).map(|_| rng.random_range(0.1..2.0)).collect();
    let support = [1, 4, 7, 8];
    let fit = relaxed_refit(&x, &y, &support, Some(&w), true).unwrap();
    let r = &y - fit.predict(&x);
    let wr: DVector<f64> = DVector::from_iterator(80, r.iter().zip(&w).map(|(a, b)| a * b));
    assert!(wr.sum().abs() / 80.0 < 1e-8);
    for &j in &support {
        assert!(x.column(j).dot(&wr).abs() / 80.0 < 1e-8);
    }
}

#[test]
fn zero_weight_row_has_no_influence() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = gaussian(&mut rng, 12, 3);
    let y = gaussian(&mut rng, 12, 1).column(0).into_owned();
    let mut w = vec![1.0; 12];
    w[5] = 0.0;
    let with_zero = solve_wls(&x, &y, Some(&w)).unwrap();
    let keep: Vec<usize> = (0..12).filter(|&i| i != 5).collect();
    let dropped = solve_wls(&x.select_rows(&keep), &DVector::from_iterator(11, keep.iter().map(|&i| y[i])), None).unwrap();
    assert!((with_zero - dropped).amax() < 1e-12);
}

#[test]
fn identity_system_solves_exactly() {
    let x = DMatrix::<f64>::identity(2, 2);
    let y = DVector::from_vec(vec![0.25, -3.0]);
    assert_eq!(solve_wls(&x, &y, None).unwrap(), y);
}

#[test]
fn singleton_grid_is_returned() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let x = gaussian(&mut rng, 30, 3);
    let y = gaussian(&mut rng, 30, 1).column(0).into_owned();
    let plan = CvPlan::hashed(&x, &y, 5, 1, vec![0.05]).unwrap();
    let cv = cross_validate(&x, &y, &plan, &[1.0; 3], None, &LassoOptions::default()).unwrap();
    assert_eq!(cv.best_lambda, 0.05);
}

#[test]
fn noiseless_linear_response_selects_small_penalty() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let x = gaussian(&mut rng, 40, 4);
    let y = x.column(0) * 2.0 - x.column(2) + DVector::from_element(40, 0.5);
    let lmax = lambda_max(&x, &y, &[1.0; 4], None, &LassoOptions::default()).unwrap();
    let plan = CvPlan::hashed(&x, &y, 5, 3, vec![lmax, 1e-8]).unwrap();
    let cv = cross_validate(&x, &y, &plan, &[1.0; 4], None, &LassoOptions::default()).unwrap();
    assert_eq!(cv.best_lambda, 1e-8);
    assert!(cv.curve[1].error < 1e-12);
    let plan = CvPlan::hashed(&x, &y, 5, 3, vec![1e3, 1e-8]).unwrap();
    let cv = cross_validate(&x, &y, &plan, &[1.0; 4], None, &LassoOptions::default()).unwrap();
    // intercept-only out-of-fold error equals the leave-fold-out mean prediction error
    let folds = plan.folds();
    let mut sse = 0.0;
    for f in 0..5 {
        let train: Vec<f64> = (0..40).filter(|&i| folds[i] != f).map(|i| y[i]).collect();
        let m = train.iter().sum::<f64>() / train.len() as f64;
        sse += (0..40).filter(|&i| folds[i] == f).map(|i| (y[i] - m).powi(2)).sum::<f64>();
    }
    assert!((cv.curve[0].error - sse / 40.0).abs() < 1e-10);
}

#[test]
fn folds_follow_rows_under_permutation() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let n = 57;
    let x = gaussian(&mut rng, n, 5);
    let y = x.column(1) * 0.8 + gaussian(&mut rng, n, 1).column(0);
    let folds = fold_assignment(&x, &y, 10, 99);
    let mut order: Vec<usize> = (0..n).collect();
    order.reverse();
    order.swap(3, 40);
    let px = x.select_rows(&order);
    let py = DVector::from_iterator(n, order.iter().map(|&i| y[i]));
    let pfolds = fold_assignment(&px, &py, 10, 99);
    for (k, &i) in order.iter().enumerate() {
        assert_eq!(pfolds[k], folds[i]);
    }
    // balanced
    for f in 0..10 {
        let c = folds.iter().filter(|&&v| v == f).count();
        assert!((5..=6).contains(&c));
    }
    let lmax = lambda_max(&x, &y, &[1.0; 5], None, &LassoOptions::default()).unwrap();
    let grid = lambda_grid(lmax, 20, 1e-3);
    let a = cross_validate(&x, &y, &CvPlan::hashed(&x, &y, 10, 99, grid.clone()).unwrap(), &[1.0; 5], None, &LassoOptions::default()).unwrap();
    let b = cross_validate(&px, &py, &CvPlan::hashed(&px, &py, 10, 99, grid).unwrap(), &[1.0; 5], None, &LassoOptions::default()).unwrap();
    assert_eq!(a.best_lambda, b.best_lambda);
}

#[test]
fn plan_validation() {
    assert!(matches!(CvPlan::new(vec![0, 0, 2, 2], 3, vec![1.0]), Err(crate::Error::EmptyFold { fold: 1 })));
    assert!(CvPlan::new(vec![0, 1, 0, 1], 2, vec![1.0, 1.0]).is_err());
    assert!(CvPlan::new(vec![0, 1, 0, 1], 1, vec![1.0]).is_err());
    assert!(CvPlan::new(vec![0, 1, 0, 1], 2, vec![]).is_err());
}

#[test]
fn grid_shape() {
    let g = lambda_grid(2.0, 100, 1e-4);
    assert_eq!(g.len(), 100);
    assert_eq!(g[0], 2.0);
    assert!((g[99] - 2e-4).abs() < 1e-15);
    assert!(g.windows(2).all(|w| w[0] > w[1]));
}
