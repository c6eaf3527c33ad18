//! Synthetic data generation, the quadrature ground truth, and the
//! replication engine that reproduces the method-comparison grids.
//!
//! The built-in generating process draws, per row,
//! X₁, X₂, X₃ ~ N(0,1) independently, then
//! A | X ~ Bernoulli(expit(−0.2 + 0.9X₁ + X₂ + 0.8X₃)),
//! Y | A, X ~ Bernoulli(expit(0.7 + A + 0.5X₁ + 0.9X₂ + 0.7X₃)),
//! R | X, Y ~ Bernoulli(expit(−0.5 + 0.6X₁ + 0.7X₂ + 0.8X₃ + 0.5Y)),
//! and blanks the exposure where R = 1 (≈ 47.5% of rows). Missingness depends
//! on the outcome, so complete-case analyses are biased by construction.

use crate::error::{Error, Result};
use crate::estimators::{estimate_all, Method, SpecBundle};
use crate::glm::{expit, SolveOptions};
use crate::inference::bootstrap_all;
use crate::models::{CoefVector, Dataset, ModelKind, ModelSpec};
use crate::seed;
use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Quadrature order used whenever the engine needs the true odds ratio.
pub const TRUE_TAU_ORDER: usize = 80;

/// Coefficients of the generating process. Conventions match the model
/// design matrices: `[intercept, x₁, …, x_p]` for the propensity,
/// `[intercept, x₁, …, x_p, exposure]` for the outcome, and
/// `[intercept, x₁, …, x_p, outcome]` for the missingness.
#[derive(Debug, Clone, PartialEq)]
pub struct DgpConfig {
    /// Rows per generated dataset.
    pub n: usize,
    pub coef_ps: CoefVector,
    pub coef_outcome: CoefVector,
    pub coef_missing: CoefVector,
    pub seed: u64,
}

impl Default for DgpConfig {
    fn default() -> Self {
        DgpConfig {
            n: 500,
            coef_ps: CoefVector {
                values: vec![-0.2, 0.9, 1.0, 0.8],
                label: ModelKind::Propensity,
            },
            coef_outcome: CoefVector {
                values: vec![0.7, 0.5, 0.9, 0.7, 1.0],
                label: ModelKind::Outcome,
            },
            coef_missing: CoefVector {
                values: vec![-0.5, 0.6, 0.7, 0.8, 0.5],
                label: ModelKind::Missingness,
            },
            seed: 1,
        }
    }
}

impl DgpConfig {
    /// Number of covariates implied by the propensity coefficients.
    pub fn p(&self) -> usize {
        self.coef_ps.values.len().saturating_sub(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Invalid("dataset size must be positive".into()));
        }
        let p = self.p();
        if self.coef_ps.label != ModelKind::Propensity
            || self.coef_outcome.label != ModelKind::Outcome
            || self.coef_missing.label != ModelKind::Missingness
        {
            return Err(Error::Invalid("DGP coefficient vectors have mismatched labels".into()));
        }
        if self.coef_ps.values.is_empty() {
            return Err(Error::Invalid("propensity coefficients need an intercept".into()));
        }
        if self.coef_outcome.values.len() != p + 2 {
            return Err(Error::Invalid(format!(
                "outcome coefficients must have length {} (intercept, covariates, exposure)",
                p + 2
            )));
        }
        if self.coef_missing.values.len() != p + 2 {
            return Err(Error::Invalid(format!(
                "missingness coefficients must have length {} (intercept, covariates, outcome)",
                p + 2
            )));
        }
        for v in self
            .coef_ps
            .values
            .iter()
            .chain(&self.coef_outcome.values)
            .chain(&self.coef_missing.values)
        {
            if !v.is_finite() {
                return Err(Error::Invalid("DGP coefficients must be finite".into()));
            }
        }
        Ok(())
    }
}

/// Draws one dataset from the configured process. Per row the stream is
/// consumed as x₁…x_p, A, Y, R, so datasets of different sizes share a prefix
/// under the same seed.
pub fn generate_dataset(cfg: &DgpConfig) -> Result<Dataset> {
    cfg.validate()?;
    let p = cfg.p();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut covariates = Vec::with_capacity(cfg.n * p);
    let mut exposure = Vec::with_capacity(cfg.n);
    let mut outcome = Vec::with_capacity(cfg.n);
    let mut x = vec![0.0; p];
    for _ in 0..cfg.n {
        for xj in x.iter_mut() {
            *xj = rng.sample(StandardNormal);
        }
        covariates.extend_from_slice(&x);

        let mut eta_a = cfg.coef_ps.values[0];
        for j in 0..p {
            eta_a += cfg.coef_ps.values[j + 1] * x[j];
        }
        let a = rng.gen::<f64>() < expit(eta_a);

        let mut eta_y = cfg.coef_outcome.values[0] + cfg.coef_outcome.values[p + 1] * f64::from(a as u8);
        for j in 0..p {
            eta_y += cfg.coef_outcome.values[j + 1] * x[j];
        }
        let y = rng.gen::<f64>() < expit(eta_y);

        let mut eta_r = cfg.coef_missing.values[0] + cfg.coef_missing.values[p + 1] * f64::from(y as u8);
        for j in 0..p {
            eta_r += cfg.coef_missing.values[j + 1] * x[j];
        }
        let r = rng.gen::<f64>() < expit(eta_r);

        exposure.push(if r { None } else { Some(a) });
        outcome.push(f64::from(y as u8));
    }
    Dataset::new(covariates, p, exposure, outcome)
}

/// Gauss–Hermite nodes and weights by the Golub–Welsch eigendecomposition of
/// the Jacobi matrix (off-diagonals √(k/2), zero diagonal). Exact for
/// polynomials up to degree 2·order − 1 against the weight e^{−x²}.
fn gauss_hermite(order: usize) -> (Vec<f64>, Vec<f64>) {
    let mut jacobi = DMatrix::zeros(order, order);
    for k in 1..order {
        let b = (k as f64 / 2.0).sqrt();
        jacobi[(k - 1, k)] = b;
        jacobi[(k, k - 1)] = b;
    }
    let eig = SymmetricEigen::new(jacobi);
    let mut nodes: Vec<(f64, f64)> = (0..order)
        .map(|k| {
            let w = std::f64::consts::PI.sqrt() * eig.eigenvectors[(0, k)].powi(2);
            (eig.eigenvalues[k], w)
        })
        .collect();
    nodes.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    nodes.into_iter().unzip()
}

/// E[f(Z)] for Z ~ N(0,1) by Gauss–Hermite quadrature.
fn normal_expectation<F: Fn(f64) -> f64>(order: usize, f: F) -> f64 {
    let (x, w) = gauss_hermite(order);
    let root2 = std::f64::consts::SQRT_2;
    let inv_sqrt_pi = 1.0 / std::f64::consts::PI.sqrt();
    x.iter()
        .zip(&w)
        .map(|(xi, wi)| wi * f(root2 * xi))
        .sum::<f64>()
        * inv_sqrt_pi
}

/// True causal odds ratio implied by outcome coefficients over independent
/// standard-normal covariates. Because Σβⱼxⱼ is N(0, s²) with
/// s = ‖(β₁,…,β_p)‖, each arm mean collapses to a one-dimensional integral
/// E[expit(β₀ + β_A·a + sZ)], evaluated by Gauss–Hermite quadrature.
/// `order` ≥ 20 is required; ≥ 60 leaves error far below any tolerance used
/// here.
pub fn true_tau(coef_outcome: &CoefVector, order: usize) -> Result<f64> {
    if coef_outcome.label != ModelKind::Outcome {
        return Err(Error::Invalid("true_tau needs outcome-model coefficients".into()));
    }
    if coef_outcome.values.len() < 2 {
        return Err(Error::Invalid(
            "outcome coefficients need at least an intercept and an exposure term".into(),
        ));
    }
    if order < 20 {
        return Err(Error::Invalid(format!(
            "quadrature order {order} too low; need at least 20"
        )));
    }
    let b0 = coef_outcome.values[0];
    let ba = *coef_outcome.values.last().unwrap();
    let s = coef_outcome.values[1..coef_outcome.values.len() - 1]
        .iter()
        .map(|b| b * b)
        .sum::<f64>()
        .sqrt();
    let t1 = normal_expectation(order, |z| expit(b0 + ba + s * z));
    let t0 = normal_expectation(order, |z| expit(b0 + s * z));
    Ok((t1 / (1.0 - t1)) / (t0 / (1.0 - t0)))
}

// ---------------------------------------------------------------------------
// scenario grids

fn grid_bundle(ms_ok: bool, ps_ok: bool, or_ok: bool, imp_ok: Option<bool>) -> SpecBundle {
    let missingness = if ms_ok {
        ModelSpec::missingness(vec![1, 2, 3])
    } else {
        ModelSpec::missingness(vec![1, 2, 3]).without_outcome()
    };
    let propensity = if ps_ok {
        ModelSpec::propensity(vec![1, 2, 3])
    } else {
        ModelSpec::propensity(vec![1, 2])
    };
    let outcome = if or_ok {
        ModelSpec::outcome(vec![1, 2, 3])
    } else {
        ModelSpec::outcome(vec![1, 2])
    };
    let imputation = Some(match imp_ok {
        Some(true) | None => ModelSpec::imputation(vec![1, 2, 3]),
        Some(false) => ModelSpec::imputation(vec![1, 2, 3]).without_outcome(),
    });
    // Bayes reconstruction only makes sense when neither direct estimate of
    // P(A | X, Y) can be trusted.
    let use_bayes_fallback = imp_ok.map_or(false, |i| !ms_ok && !i);
    SpecBundle {
        missingness,
        imputation,
        propensity,
        outcome,
        use_bayes_fallback,
    }
}

fn flag(ok: bool, name: &str) -> Option<String> {
    ok.then(|| name.to_string())
}

fn label(parts: [Option<String>; 4]) -> String {
    let joined: Vec<String> = parts.into_iter().flatten().collect();
    if joined.is_empty() {
        "none".into()
    } else {
        joined.join("+")
    }
}

/// The eight missingness × propensity × outcome correctness combinations the
/// IPW-family comparison runs over, in canonical order (all-correct first,
/// all-wrong last). Labels list the correctly specified models.
pub fn ipw_scenarios() -> Vec<(String, SpecBundle)> {
    let rows = [
        (true, true, true),
        (true, true, false),
        (true, false, true),
        (false, true, true),
        (true, false, false),
        (false, true, false),
        (false, false, true),
        (false, false, false),
    ];
    rows.into_iter()
        .map(|(ms, ps, or)| {
            (
                label([flag(ms, "MS"), flag(ps, "PS"), flag(or, "OR"), None]),
                grid_bundle(ms, ps, or, None),
            )
        })
        .collect()
}

/// The sixteen correctness combinations for the imputation-aware estimators
/// (missingness, propensity, outcome, imputation), in canonical order. The
/// Bayes fallback is switched on exactly where both the missingness and
/// imputation models are wrong.
pub fn tr_scenarios() -> Vec<(String, SpecBundle)> {
    let rows = [
        (true, true, true, true),
        (true, true, true, false),
        (true, true, false, true),
        (true, false, true, true),
        (false, true, true, true),
        (true, true, false, false),
        (true, false, true, false),
        (true, false, false, true),
        (false, true, true, false),
        (false, true, false, true),
        (false, false, true, true),
        (true, false, false, false),
        (false, true, false, false),
        (false, false, true, false),
        (false, false, false, true),
        (false, false, false, false),
    ];
    rows.into_iter()
        .map(|(ms, ps, or, im)| {
            (
                label([flag(ms, "MS"), flag(ps, "PS"), flag(or, "OR"), flag(im, "IM")]),
                grid_bundle(ms, ps, or, Some(im)),
            )
        })
        .collect()
}

/// A replication study: scenarios × methods, `reps` datasets each, with a
/// `bootstrap_b`-replicate bootstrap per dataset for the standard error and
/// coverage columns.
#[derive(Debug, Clone)]
pub struct ScenarioGrid {
    pub scenarios: Vec<(String, SpecBundle)>,
    pub methods: Vec<Method>,
    pub reps: usize,
    pub bootstrap_b: usize,
}

/// Monte-Carlo summaries of one scenario × method cell.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationMetrics {
    /// Replications that produced both a point estimate and a usable bootstrap.
    pub reps_used: usize,
    pub n_failed: usize,
    pub mean: f64,
    /// mean(τ̂) − τ.
    pub bias: f64,
    /// 100 · bias / τ.
    pub bias_rate: f64,
    /// Empirical SD of the replicate estimates.
    pub ese: f64,
    /// √(Σ(τ̂ − τ)² / (N − 1)).
    pub rmse: f64,
    /// Median across replications of the bootstrap standard error.
    pub median_bse: f64,
    /// Percent of bootstrap percentile intervals covering τ.
    pub coverage: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub scenario: String,
    pub method: Method,
    pub metrics: ReplicationMetrics,
}

/// Folds raw replication outputs into the reported metrics. Exposed so the
/// summaries stay independently checkable against the raw estimate vectors.
pub fn summarize_replications(
    tau_true: f64,
    taus: &[f64],
    bses: &[f64],
    covered: &[bool],
    n_failed: usize,
) -> Result<ReplicationMetrics> {
    let n = taus.len();
    if n < 2 {
        return Err(Error::Invalid("need at least 2 usable replications".into()));
    }
    if bses.len() != n || covered.len() != n {
        return Err(Error::Invalid("replication vectors must share one length".into()));
    }
    let nf = n as f64;
    let mean = taus.iter().sum::<f64>() / nf;
    let bias = mean - tau_true;
    let ese = (taus.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (nf - 1.0)).sqrt();
    let rmse = (taus.iter().map(|t| (t - tau_true).powi(2)).sum::<f64>() / (nf - 1.0)).sqrt();
    let mut sorted = bses.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median_bse = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    };
    let coverage = 100.0 * covered.iter().filter(|c| **c).count() as f64 / nf;
    Ok(ReplicationMetrics {
        reps_used: n,
        n_failed,
        mean,
        bias,
        bias_rate: 100.0 * bias / tau_true,
        ese,
        rmse,
        median_bse,
        coverage,
    })
}

/// Runs the full replication study. Seeds fan out hierarchically
/// (master → scenario → replication → dataset/estimator/bootstrap), so any
/// cell can be reproduced in isolation. A cell where more than 20% of
/// replications fail aborts the run — results past that point would not be
/// comparable.
pub fn run_scenario_grid(cfg: &DgpConfig, grid: &ScenarioGrid) -> Result<Vec<MetricsRow>> {
    cfg.validate()?;
    if grid.reps < 2 {
        return Err(Error::Invalid("scenario grid needs at least 2 replications".into()));
    }
    if grid.bootstrap_b < 100 {
        return Err(Error::Invalid("scenario grid needs at least 100 bootstrap replicates".into()));
    }
    if grid.scenarios.is_empty() || grid.methods.is_empty() {
        return Err(Error::Invalid("scenario grid needs scenarios and methods".into()));
    }
    let opts = SolveOptions::default();
    let tau_true = true_tau(&cfg.coef_outcome, TRUE_TAU_ORDER)?;
    let mut rows = Vec::with_capacity(grid.scenarios.len() * grid.methods.len());

    for (s_ix, (label, bundle)) in grid.scenarios.iter().enumerate() {
        bundle.validate(cfg.p())?;
        let scen_seed = seed::derive(cfg.seed, s_ix as u64);
        let mut taus: Vec<Vec<f64>> = vec![Vec::with_capacity(grid.reps); grid.methods.len()];
        let mut bses: Vec<Vec<f64>> = vec![Vec::with_capacity(grid.reps); grid.methods.len()];
        let mut covered: Vec<Vec<bool>> = vec![Vec::with_capacity(grid.reps); grid.methods.len()];
        let mut failed = vec![0usize; grid.methods.len()];

        for rep in 0..grid.reps {
            let rep_seed = seed::derive(scen_seed, rep as u64);
            let data = generate_dataset(&DgpConfig {
                seed: seed::derive(rep_seed, 0),
                ..cfg.clone()
            })?;
            let points = estimate_all(&data, bundle, &grid.methods, &opts, seed::derive(rep_seed, 1));
            let boots = bootstrap_all(
                &data,
                bundle,
                &grid.methods,
                grid.bootstrap_b,
                seed::derive(rep_seed, 2),
                &opts,
            );
            for (slot, ((_, point), (_, boot))) in points.into_iter().zip(boots).enumerate() {
                match (point, boot) {
                    (Ok(est), Ok(bs)) => {
                        taus[slot].push(est.tau);
                        bses[slot].push(bs.bse);
                        covered[slot].push(bs.ci_lower <= tau_true && tau_true <= bs.ci_upper);
                    }
                    _ => failed[slot] += 1,
                }
            }
        }

        for (slot, method) in grid.methods.iter().enumerate() {
            if 5 * failed[slot] > grid.reps {
                return Err(Error::ExcessiveFailures {
                    scenario: label.clone(),
                    method: method.label().to_string(),
                    failed: failed[slot],
                    reps: grid.reps,
                });
            }
            rows.push(MetricsRow {
                scenario: label.clone(),
                method: *method,
                metrics: summarize_replications(
                    tau_true,
                    &taus[slot],
                    &bses[slot],
                    &covered[slot],
                    failed[slot],
                )?,
            });
        }
    }
    Ok(rows)
}
