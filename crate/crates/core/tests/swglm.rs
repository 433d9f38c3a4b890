mod common;

use approx::assert_abs_diff_eq;
use nalgebra::DMatrix;
use proptest::prelude::*;

use common::*;
use riskd_core::dataset::generate_synthetic;
use riskd_core::preprocess::{build_design, FactorSelection};
use riskd_core::swglm::{ewas_scan, fit_logistic, Direction, GlmError, IrlsOptions};

fn fit(x: &DMatrix<f64>, y: &[f64], w: &[f64]) -> Vec<f64> {
    fit_logistic(x, y, w, IrlsOptions::default()).unwrap().coefficients
}

#[test]
fn equal_weights_match_newton_reference() {
    for seed in 0..5 {
        let (x, y) = logistic_data(seed, 500, &[-0.4, 0.9, -0.6, 0.3]);
        let ones = vec![1.0; 500];
        let reference = newton_logistic(&x, &y, &ones);
        for (a, b) in fit(&x, &y, &ones).iter().zip(&reference) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-6);
        }
        // a common weight scale leaves the estimate unchanged
        let scaled = vec![37.5; 500];
        for (a, b) in fit(&x, &y, &scaled).iter().zip(&reference) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-6);
        }
    }
}

#[test]
fn unequal_weights_match_weighted_newton_reference() {
    let (x, y) = logistic_data(8, 400, &[0.1, -0.7, 0.5]);
    let w: Vec<f64> = (0..400).map(|i| 0.5 + (i % 7) as f64).collect();
    for (a, b) in fit(&x, &y, &w).iter().zip(newton_logistic(&x, &y, &w)) {
        assert_abs_diff_eq!(*a, b, epsilon = 1e-6);
    }
}

#[test]
fn duplicating_a_row_at_half_weight_is_invisible() {
    let (x, y) = logistic_data(9, 300, &[0.3, 1.1, -0.4]);
    let w = vec![2.0; 300];
    let base = fit(&x, &y, &w);
    let mut rows: Vec<Vec<f64>> = (0..300).map(|i| x.row(i).iter().copied().collect()).collect();
    rows.push(rows[17].clone());
    let x2 = DMatrix::from_fn(301, 3, |i, j| rows[i][j]);
    let mut y2 = y.clone();
    y2.push(y[17]);
    let mut w2 = w.clone();
    w2[17] = 1.0;
    w2.push(1.0);
    for (a, b) in fit(&x2, &y2, &w2).iter().zip(&base) {
        assert_abs_diff_eq!(a, b, epsilon = 1e-8);
    }
}

#[test]
fn intercept_only_fit_is_the_weighted_logit() {
    let y: Vec<f64> = (0..50).map(|i| f64::from(u8::from(i % 3 == 0))).collect();
    let w: Vec<f64> = (0..50).map(|i| 1.0 + (i % 5) as f64 * 0.75).collect();
    let x = DMatrix::from_element(50, 1, 1.0);
    let p = y.iter().zip(&w).map(|(y, w)| y * w).sum::<f64>() / w.iter().sum::<f64>();
    assert_abs_diff_eq!(fit(&x, &y, &w)[0], (p / (1.0 - p)).ln(), epsilon = 1e-12);
}

#[test]
fn sandwich_errors_match_direct_computation() {
    let (x, y) = logistic_data(10, 250, &[0.2, 0.8]);
    let w: Vec<f64> = (0..250).map(|i| 1.0 + (i % 3) as f64).collect();
    let f = fit_logistic(&x, &y, &w, IrlsOptions::default()).unwrap();
    let (b0, b1) = (f.coefficients[0], f.coefficients[1]);
    let (mut a, mut m) = ([[0.0; 2]; 2], [[0.0; 2]; 2]);
    for i in 0..250 {
        let xi = [1.0, x[(i, 1)]];
        let mu = 1.0 / (1.0 + (-(b0 + b1 * xi[1])).exp());
        for r in 0..2 {
            for c in 0..2 {
                a[r][c] += w[i] * mu * (1.0 - mu) * xi[r] * xi[c];
                m[r][c] += (w[i] * (y[i] - mu)).powi(2) * xi[r] * xi[c];
            }
        }
    }
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    let inv = [[a[1][1] / det, -a[0][1] / det], [-a[1][0] / det, a[0][0] / det]];
    let mut cov = [[0.0; 2]; 2];
    for r in 0..2 {
        for c in 0..2 {
            for s in 0..2 {
                for t in 0..2 {
                    cov[r][c] += inv[r][s] * m[s][t] * inv[t][c];
                }
            }
        }
    }
    assert_abs_diff_eq!(f.robust_se[0], cov[0][0].sqrt(), epsilon = 1e-10);
    assert_abs_diff_eq!(f.robust_se[1], cov[1][1].sqrt(), epsilon = 1e-10);
}

#[test]
fn log_likelihood_never_decreases() {
    let (x, y) = logistic_data(12, 300, &[1.5, -2.0, 0.7]);
    let f = fit_logistic(&x, &y, &vec![1.0; 300], IrlsOptions::default()).unwrap();
    for pair in f.log_likelihood_trace.windows(2) {
        // up to rounding at the optimum
        assert!(pair[1] >= pair[0] - 1e-9 * (1.0 + pair[0].abs()));
    }
}

#[test]
fn perfectly_separated_data_is_reported() {
    let x = DMatrix::from_fn(40, 2, |i, j| if j == 0 { 1.0 } else { i as f64 - 19.5 });
    let y: Vec<f64> = (0..40).map(|i| f64::from(u8::from(i >= 20))).collect();
    let err = fit_logistic(&x, &y, &vec![1.0; 40], IrlsOptions::default()).unwrap_err();
    assert!(matches!(err, GlmError::Separation { .. }));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn weight_scaling_invariance(seed in 0u64..1000, scale in 0.01f64..100.0) {
        let (x, y) = logistic_data(seed, 200, &[0.1, 0.5]);
        let w: Vec<f64> = (0..200).map(|i| 1.0 + (i % 4) as f64).collect();
        let scaled: Vec<f64> = w.iter().map(|v| v * scale).collect();
        let a = fit(&x, &y, &w);
        let b = fit(&x, &y, &scaled);
        for (u, v) in a.iter().zip(&b) {
            prop_assert!((u - v).abs() < 1e-8);
        }
    }
}

#[test]
fn ewas_reports_the_planted_factor_first() {
    let data = generate_synthetic(&planted_factor_spec(1500, 20, 0.8), 3).unwrap();
    let plan = outcome_study(&data.dataset, &exposure_names(20), ewas_analysis(0.05));
    let report = ewas_scan(&plan, &data.dataset, 0.05).unwrap();
    assert_eq!(report.results.len(), 20);
    let top = &report.results[0];
    assert_eq!(top.factor, "exposure_1");
    assert!(top.significant && top.direction == Direction::Risk);
    assert!(report.results.windows(2).all(|w| w[0].adjusted_p <= w[1].adjusted_p));
    assert!(report.results.iter().all(|r| r.n_used == 1500));
}

#[test]
fn ewas_is_deterministic_under_parallelism() {
    let data = generate_synthetic(&planted_factor_spec(600, 12, 0.5), 4).unwrap();
    let plan = outcome_study(&data.dataset, &exposure_names(12), ewas_analysis(0.05));
    let a = ewas_scan(&plan, &data.dataset, 0.05).unwrap();
    let b = ewas_scan(&plan, &data.dataset, 0.05).unwrap();
    assert_eq!(a, b);
}

#[test]
fn survey_weights_remove_oversampling_bias() {
    let census = generate_synthetic(&survey_spec(100_000, false), 99).unwrap();
    let names = exposure_names(1);
    let cd = build_design(&raw_study(&census.dataset, &names), &census.dataset, &FactorSelection::All).unwrap();
    let truth = newton_logistic(&cd.values, &cd.response, &vec![1.0; cd.n_rows()])[1];

    let sample = generate_synthetic(&survey_spec(3000, true), 1).unwrap();
    let d = build_design(&raw_study(&sample.dataset, &names), &sample.dataset, &FactorSelection::All).unwrap();
    let weighted = fit(&d.values, &d.response, &d.weights)[1];
    let unweighted = fit(&d.values, &d.response, &vec![1.0; d.n_rows()])[1];
    assert!((weighted - truth).abs() < (unweighted - truth).abs());
}
