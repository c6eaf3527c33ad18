//! Cross-checks of derived quantities against independent evaluation routes:
//! Monte Carlo versus quadrature for the ground-truth odds ratio, simulated
//! joint draws versus the Bayes-rule posterior, and brute-force enumeration
//! versus the mixture fitted values of the outcome estimating equation.

use causalmex::glm::{expit, SolveOptions};
use causalmex::models::{
    bayes_imputation, fit_imputation, fit_missingness, fit_outcome_ee, Dataset, ModelSpec,
};
use causalmex::simulation::{generate_dataset, true_tau, DgpConfig, TRUE_TAU_ORDER};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

#[test]
fn quadrature_matches_frozen_high_precision_value() {
    let cfg = DgpConfig::default();
    let tau = true_tau(&cfg.coef_outcome, TRUE_TAU_ORDER).unwrap();
    // frozen from 50-digit adaptive quadrature of the same integrals
    assert!((tau - 2.201_090_630_093_660_8).abs() <= 1e-9, "tau = {tau}");
    assert!((tau - 2.201).abs() <= 0.002);
}

#[test]
fn quadrature_matches_monte_carlo_over_the_full_covariate_vector() {
    // The quadrature route collapses the three covariates to one normal
    // through the coefficient norm; the Monte Carlo route deliberately does
    // not, so agreement also validates that reduction.
    let cfg = DgpConfig::default();
    let b = &cfg.coef_outcome.values; // intercept, x1..x3, exposure
    let tau = true_tau(&cfg.coef_outcome, TRUE_TAU_ORDER).unwrap();

    let n = 2_000_000usize;
    let mut rng = ChaCha8Rng::seed_from_u64(0xBEEF);
    let (mut m1, mut m0) = (0.0, 0.0);
    let (mut q11, mut q00, mut q10) = (0.0, 0.0, 0.0);
    for _ in 0..n {
        let mut eta = b[0];
        for j in 1..=3 {
            let x: f64 = rng.sample(StandardNormal);
            eta += b[j] * x;
        }
        let t1 = expit(eta + b[4]);
        let t0 = expit(eta);
        m1 += t1;
        m0 += t0;
        q11 += t1 * t1;
        q00 += t0 * t0;
        q10 += t1 * t0;
    }
    let nf = n as f64;
    let (m1, m0) = (m1 / nf, m0 / nf);
    let v1 = q11 / nf - m1 * m1;
    let v0 = q00 / nf - m0 * m0;
    let c10 = q10 / nf - m1 * m0;
    let tau_mc = (m1 / (1.0 - m1)) / (m0 / (1.0 - m0));
    // delta method on the log odds ratio
    let d1 = 1.0 / (m1 * (1.0 - m1));
    let d0 = 1.0 / (m0 * (1.0 - m0));
    let var_log = (d1 * d1 * v1 + d0 * d0 * v0 - 2.0 * d1 * d0 * c10) / nf;
    let se_tau = tau_mc * var_log.sqrt();
    assert!(
        (tau - tau_mc).abs() <= 3.0 * se_tau,
        "quadrature {tau} vs Monte Carlo {tau_mc} (3 SE = {})",
        3.0 * se_tau
    );
}

#[test]
fn bayes_posterior_matches_joint_simulation() {
    // A three-point covariate with known exposure and outcome models; the
    // posterior P(A=1 | X, Y) is estimated by brute-force conditional
    // frequencies and compared against the Bayes-rule reconstruction.
    let xs = [-1.0, 0.5, 1.5];
    let ps_true = |x: f64| expit(0.2 + 0.8 * x);
    let outcome_true = |a: f64, x: f64| expit(-0.3 + 0.9 * a + 0.6 * x);

    let mut rng = ChaCha8Rng::seed_from_u64(0xACE);
    let draws = 2_000_000usize;
    // cells[xi][y] = (count a=1, count total)
    let mut cells = [[(0u64, 0u64); 2]; 3];
    for (xi, &x) in xs.iter().enumerate() {
        for _ in 0..draws {
            let a = f64::from((rng.gen::<f64>() < ps_true(x)) as u8);
            let y = usize::from(rng.gen::<f64>() < outcome_true(a, x));
            cells[xi][y].1 += 1;
            cells[xi][y].0 += (a == 1.0) as u64;
        }
    }

    // one dataset row per (x, y) cell; exposures all missing (irrelevant here)
    let mut covs = Vec::new();
    let mut outcome = Vec::new();
    for &x in &xs {
        for y in 0..2 {
            covs.push(x);
            outcome.push(y as f64);
        }
    }
    let n = covs.len();
    let data = Dataset::new(covs.clone(), 1, vec![None; n], outcome.clone()).unwrap();
    let ps: Vec<f64> = covs.iter().map(|&x| ps_true(x)).collect();
    let y1: Vec<f64> = covs.iter().map(|&x| outcome_true(1.0, x)).collect();
    let y0: Vec<f64> = covs.iter().map(|&x| outcome_true(0.0, x)).collect();
    let (posterior, _) = bayes_imputation(&ps, &y1, &y0, data.outcome()).unwrap();

    for (xi, _) in xs.iter().enumerate() {
        for y in 0..2 {
            let (a1, tot) = cells[xi][y];
            let empirical = a1 as f64 / tot as f64;
            let reconstructed = posterior[xi * 2 + y];
            assert!(
                (empirical - reconstructed).abs() <= 0.01,
                "cell x={} y={y}: simulated {empirical} vs Bayes {reconstructed}",
                xs[xi]
            );
        }
    }
}

#[test]
fn ee_outcome_fitted_values_on_missing_rows_match_exposure_simulation() {
    let data = generate_dataset(&DgpConfig {
        n: 400,
        seed: 5,
        ..DgpConfig::default()
    })
    .unwrap();
    let o = SolveOptions::default();
    let miss = fit_missingness(&data, &ModelSpec::missingness(vec![1, 2, 3]), &o).unwrap();
    let imp = fit_imputation(&data, &ModelSpec::imputation(vec![1, 2, 3]), &o).unwrap();
    let out = fit_outcome_ee(&data, Some(&miss), &imp.fitted, &ModelSpec::outcome(vec![1, 2, 3]), &o).unwrap();

    let beta = &out.coef.values;
    let eta_at = |i: usize, arm: f64| {
        let mut eta = beta[0];
        for j in 0..3 {
            eta += beta[j + 1] * data.covariate(i, j);
        }
        eta + beta[4] * arm
    };
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut checked = 0;
    for i in 0..data.n() {
        if !data.is_missing(i) {
            continue;
        }
        // simulate the unobserved exposure and average the model probability
        let m = 200_000usize;
        let (mut acc, mut acc2) = (0.0, 0.0);
        for _ in 0..m {
            let arm = f64::from((rng.gen::<f64>() < imp.fitted[i]) as u8);
            let p = expit(eta_at(i, arm));
            acc += p;
            acc2 += p * p;
        }
        let mean = acc / m as f64;
        let se = ((acc2 / m as f64 - mean * mean) / m as f64).sqrt();
        assert!(
            (out.fitted[i] - mean).abs() <= 3.0 * se.max(1e-8),
            "row {i}: fitted {} vs simulated {mean} (3 SE = {})",
            out.fitted[i],
            3.0 * se
        );
        checked += 1;
        if checked == 5 {
            break;
        }
    }
    assert_eq!(checked, 5);
}
