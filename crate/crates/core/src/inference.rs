//! Nonparametric bootstrap for the odds-ratio estimators and the delta-method
//! variance that maps per-arm variances onto the ratio scale.
//!
//! Replicates resample rows with replacement; each replicate gets its own
//! deterministic sub-stream of the master seed, so results are reproducible
//! and independent of evaluation order. Replicates where the estimator fails
//! (separation, empty arms, …) are dropped and counted; if fewer than half
//! survive the whole bootstrap is declared unusable.

use crate::error::{Error, Result};
use crate::estimators::{estimate_all, Method, SpecBundle};
use crate::glm::SolveOptions;
use crate::models::Dataset;
use crate::seed;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Percentile-bootstrap summary for one estimator on one dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapResult {
    /// Usable replicate estimates, in replicate order.
    pub replicates: Vec<f64>,
    /// 2.5% percentile (linear interpolation between order statistics).
    pub ci_lower: f64,
    /// 97.5% percentile.
    pub ci_upper: f64,
    /// Bootstrap standard error: sample SD of the usable replicates.
    pub bse: f64,
    /// Replicates dropped because the estimator failed on the resample.
    pub n_failed: usize,
}

/// Linearly interpolated quantile of pre-sorted values (the "type 7" rule
/// used by most statistics software).
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let h = (n - 1) as f64 * q;
    let lo = h.floor() as usize;
    if lo + 1 >= n {
        return sorted[n - 1];
    }
    let frac = h - lo as f64;
    sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
}

fn summarize_replicates(replicates: Vec<f64>, n_failed: usize, total: usize) -> Result<BootstrapResult> {
    let usable = replicates.len();
    if usable < 2 || usable * 2 < total {
        return Err(Error::InsufficientReplicates { usable, total });
    }
    let mut sorted = replicates.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mean = replicates.iter().sum::<f64>() / usable as f64;
    let bse = (replicates.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (usable as f64 - 1.0))
        .sqrt();
    Ok(BootstrapResult {
        ci_lower: quantile_sorted(&sorted, 0.025),
        ci_upper: quantile_sorted(&sorted, 0.975),
        bse,
        n_failed,
        replicates,
    })
}

/// Generic bootstrap driver: resamples `data` `b` times and applies `f` to
/// each resample with a replicate-specific seed. `f` failures (and non-finite
/// outputs) are dropped and counted.
pub fn bootstrap_with<F>(data: &Dataset, b: usize, master_seed: u64, mut f: F) -> Result<BootstrapResult>
where
    F: FnMut(&Dataset, u64) -> Result<f64>,
{
    if b < 2 {
        return Err(Error::Invalid("bootstrap needs at least 2 replicates".into()));
    }
    let n = data.n();
    let mut replicates = Vec::with_capacity(b);
    let mut n_failed = 0;
    for k in 0..b {
        let rep_seed = seed::derive(master_seed, k as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(rep_seed);
        let rows: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
        let resampled = data.select_rows(&rows);
        match f(&resampled, seed::derive(rep_seed, 1)) {
            Ok(t) if t.is_finite() => replicates.push(t),
            _ => n_failed += 1,
        }
    }
    summarize_replicates(replicates, n_failed, b)
}

/// Percentile bootstrap of one estimator's odds ratio. Needs at least 100
/// replicates for the tail quantiles to mean anything.
pub fn bootstrap(
    data: &Dataset,
    bundle: &SpecBundle,
    method: Method,
    b: usize,
    seed: u64,
    opts: &SolveOptions,
) -> Result<BootstrapResult> {
    bundle.validate(data.p())?;
    if b < 100 {
        return Err(Error::Invalid(format!(
            "bootstrap needs at least 100 replicates, got {b}"
        )));
    }
    let results = bootstrap_all(data, bundle, &[method], b, seed, opts);
    results.into_iter().next().unwrap().1
}

/// Bootstraps several estimators over one shared stream of resamples, fitting
/// shared nuisance models once per resample. Replicate `k` of method `m` here
/// is identical to replicate `k` of `bootstrap(.., m, ..)`: the per-replicate
/// seeds depend only on the master seed and `k`.
pub fn bootstrap_all(
    data: &Dataset,
    bundle: &SpecBundle,
    methods: &[Method],
    b: usize,
    master_seed: u64,
    opts: &SolveOptions,
) -> Vec<(Method, Result<BootstrapResult>)> {
    let n = data.n();
    let mut replicates: Vec<Vec<f64>> = vec![Vec::with_capacity(b); methods.len()];
    let mut failed = vec![0usize; methods.len()];
    for k in 0..b {
        let rep_seed = seed::derive(master_seed, k as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(rep_seed);
        let rows: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
        let resampled = data.select_rows(&rows);
        for (slot, (_, est)) in
            estimate_all(&resampled, bundle, methods, opts, seed::derive(rep_seed, 1))
                .into_iter()
                .enumerate()
        {
            match est {
                Ok(e) if e.tau.is_finite() => replicates[slot].push(e.tau),
                _ => failed[slot] += 1,
            }
        }
    }
    methods
        .iter()
        .zip(replicates.into_iter().zip(failed))
        .map(|(m, (reps, nf))| (*m, summarize_replicates(reps, nf, b)))
        .collect()
}

/// Delta-method variance of the odds ratio given per-arm estimates and their
/// 2×2 covariance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeltaVariance {
    /// Variance of the odds ratio itself.
    pub var_tau: f64,
    /// Variance of log τ̂ (the scale the delta method works on).
    pub var_log_tau: f64,
}

/// Maps Cov(τ̂₁, τ̂₀) onto Var(τ̂) for the odds ratio via
/// g(t) = logit(t): Var(log τ̂) = g′(τ₁)²·V₁₁ + g′(τ₀)²·V₀₀ + c·g′(τ₁)g′(τ₀)·V₁₀.
///
/// The default cross-term coefficient is c = +1, matching the variance
/// formula this estimator family was published with; `textbook_covariance`
/// switches to the usual first-order expansion c = −2. With a diagonal
/// covariance both agree.
pub fn delta_variance(
    tau1: f64,
    tau0: f64,
    cov: &[[f64; 2]; 2],
    textbook_covariance: bool,
) -> Result<DeltaVariance> {
    for t in [tau1, tau0] {
        if !(t > 0.0 && t < 1.0) {
            return Err(Error::Domain(format!(
                "arm probabilities must lie strictly inside (0, 1), got ({tau1}, {tau0})"
            )));
        }
    }
    let flat = [cov[0][0], cov[0][1], cov[1][0], cov[1][1]];
    if flat.iter().any(|v| !v.is_finite()) {
        return Err(Error::Invalid("covariance entries must be finite".into()));
    }
    if cov[0][0] < 0.0 || cov[1][1] < 0.0 {
        return Err(Error::Invalid("covariance diagonal must be nonnegative".into()));
    }
    let scale = flat.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    if (cov[0][1] - cov[1][0]).abs() > 1e-8 * scale {
        return Err(Error::Invalid("covariance matrix must be symmetric".into()));
    }
    let g1 = 1.0 / (tau1 * (1.0 - tau1));
    let g0 = 1.0 / (tau0 * (1.0 - tau0));
    let cross = if textbook_covariance { -2.0 } else { 1.0 };
    let var_log_tau = g1 * g1 * cov[0][0] + g0 * g0 * cov[1][1] + cross * g1 * g0 * cov[0][1];
    let tau = (tau1 / (1.0 - tau1)) / (tau0 / (1.0 - tau0));
    Ok(DeltaVariance {
        var_tau: tau * tau * var_log_tau,
        var_log_tau,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn flat_data(n: usize) -> Dataset {
        // covariate-free dataset; only row count matters for these tests
        let exposure: Vec<Option<bool>> = (0..n).map(|i| Some(i % 2 == 0)).collect();
        let outcome: Vec<f64> = (0..n).map(|i| f64::from((i % 3 == 0) as u8)).collect();
        Dataset::new(vec![], 0, exposure, outcome).unwrap()
    }

    #[test]
    fn constant_stub_estimator_gives_zero_width_interval() {
        let d = flat_data(40);
        let res = bootstrap_with(&d, 200, 7, |_, _| Ok(2.5)).unwrap();
        assert_eq!(res.replicates.len(), 200);
        assert_eq!(res.n_failed, 0);
        assert_abs_diff_eq!(res.ci_lower, 2.5, epsilon = 0.0);
        assert_abs_diff_eq!(res.ci_upper, 2.5, epsilon = 0.0);
        assert_abs_diff_eq!(res.bse, 0.0, epsilon = 0.0);
    }

    #[test]
    fn quantiles_interpolate_between_order_statistics() {
        let d = flat_data(10);
        let mut counter = 0.0;
        let res = bootstrap_with(&d, 100, 3, |_, _| {
            counter += 1.0;
            Ok(counter)
        })
        .unwrap();
        // replicates are 1..=100: h = 0.025·99 = 2.475 ⇒ 3 + 0.475, and
        // h = 0.975·99 = 96.525 ⇒ 97 + 0.525
        assert_abs_diff_eq!(res.ci_lower, 3.475, epsilon = 1e-12);
        assert_abs_diff_eq!(res.ci_upper, 97.525, epsilon = 1e-12);
        let mean = 50.5;
        let var = (1..=100).map(|i| (i as f64 - mean).powi(2)).sum::<f64>() / 99.0;
        assert_abs_diff_eq!(res.bse, var.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn failed_replicates_are_dropped_and_counted() {
        let d = flat_data(12);
        let mut k = 0;
        let res = bootstrap_with(&d, 100, 5, |_, _| {
            k += 1;
            if k % 4 == 0 {
                Err(Error::Invalid("boom".into()))
            } else {
                Ok(1.0 + (k as f64) / 100.0)
            }
        })
        .unwrap();
        assert_eq!(res.n_failed, 25);
        assert_eq!(res.replicates.len(), 75);
    }

    #[test]
    fn mostly_failing_estimator_is_insufficient() {
        let d = flat_data(12);
        let mut k = 0;
        let err = bootstrap_with(&d, 100, 5, |_, _| {
            k += 1;
            if k <= 60 {
                Err(Error::Invalid("boom".into()))
            } else {
                Ok(1.0)
            }
        })
        .unwrap_err();
        assert!(matches!(
            err,
            Error::InsufficientReplicates { usable: 40, total: 100 }
        ));
    }

    #[test]
    fn bootstrap_streams_are_seed_deterministic() {
        let d = flat_data(30);
        // estimator sensitive to both the resample and the replicate seed
        let f = |data: &Dataset, s: u64| {
            Ok(data.outcome().iter().sum::<f64>() + (s % 97) as f64 * 1e-3)
        };
        let a = bootstrap_with(&d, 120, 11, f).unwrap();
        let b = bootstrap_with(&d, 120, 11, f).unwrap();
        let c = bootstrap_with(&d, 120, 12, f).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.replicates, c.replicates);
    }

    #[test]
    fn delta_variance_symmetric_example() {
        // τ₁ = τ₀ = 1/2 with Var v each and no covariance: each logit slope is
        // 4, so Var(log τ̂) = 16v + 16v = 32v, and τ = 1 leaves Var(τ̂) equal.
        let v = 0.003;
        let res = delta_variance(0.5, 0.5, &[[v, 0.0], [0.0, v]], false).unwrap();
        assert_abs_diff_eq!(res.var_log_tau, 32.0 * v, epsilon = 1e-12);
        assert_abs_diff_eq!(res.var_tau, 32.0 * v, epsilon = 1e-12);
        // the cross-term convention is irrelevant under zero covariance
        let text = delta_variance(0.5, 0.5, &[[v, 0.0], [0.0, v]], true).unwrap();
        assert_abs_diff_eq!(res.var_log_tau, text.var_log_tau, epsilon = 0.0);
    }

    #[test]
    fn delta_variance_cross_term_convention() {
        let cov = [[0.004, 0.001], [0.001, 0.002]];
        let asis = delta_variance(0.6, 0.4, &cov, false).unwrap();
        let textbook = delta_variance(0.6, 0.4, &cov, true).unwrap();
        let g1 = 1.0 / (0.6 * 0.4);
        let g0 = 1.0 / (0.4 * 0.6);
        assert_abs_diff_eq!(
            asis.var_log_tau - textbook.var_log_tau,
            3.0 * g1 * g0 * 0.001,
            epsilon = 1e-12
        );
        assert!(asis.var_log_tau >= 0.0 && textbook.var_log_tau >= 0.0);
    }

    #[test]
    fn delta_variance_rejects_bad_inputs() {
        let v = [[0.001, 0.0], [0.0, 0.001]];
        assert!(matches!(delta_variance(0.0, 0.5, &v, false), Err(Error::Domain(_))));
        assert!(matches!(delta_variance(0.5, 1.0, &v, false), Err(Error::Domain(_))));
        assert!(delta_variance(0.5, 0.5, &[[0.001, 0.5], [-0.5, 0.001]], false).is_err());
        assert!(delta_variance(0.5, 0.5, &[[-0.1, 0.0], [0.0, 0.001]], false).is_err());
    }
}
