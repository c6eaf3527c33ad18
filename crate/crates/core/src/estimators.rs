//! The seven causal odds-ratio estimators for a missing-at-random binary
//! exposure.
//!
//! Every estimator targets τ = [τ₁/(1−τ₁)] / [τ₀/(1−τ₀)] with
//! τₐ = P(Y^a = 1), and differs in how it handles the missing exposure and
//! which nuisance models it leans on:
//!
//! - `IPW-IPW`  — inverse missingness weights times inverse propensity weights;
//!   consistent when both the missingness and propensity models hold.
//! - `IPW-DR`   — missingness weights around an augmented (doubly robust)
//!   inverse-propensity term; consistent when the missingness model holds and
//!   at least one of propensity/outcome does.
//! - `IPW-WEE`  — missingness weights around a weighted estimating-equation
//!   outcome fit per arm; same robustness as `IPW-DR`, typically tighter.
//! - `DR-SI`    — single stochastic imputation of the missing exposures from
//!   the imputation model, then plain AIPW on the completed data.
//! - `DR-MICE`  — ten proper imputations (parameters redrawn from the
//!   large-sample posterior of the imputation fit), AIPW per completed data
//!   set, pooled on the per-arm logit scale with Rubin variance diagnostics.
//! - `TR-AIPW`  — triply robust augmented estimator built on the
//!   missingness-augmented (EE) propensity and outcome fits.
//! - `TR-WEE`   — triply robust weighted estimating-equation variant; solves a
//!   per-arm working model whose score is centered by the EE outcome
//!   predictions.
//!
//! The TR estimators stay consistent when (missingness OR imputation) AND
//! (propensity OR outcome) models are correct; with `use_bayes_fallback` the
//! imputation probabilities are rebuilt from the propensity and outcome fits
//! by Bayes' rule, which rescues the case where both the missingness and
//! imputation models are wrong but propensity and outcome are right.

use crate::error::{Error, Result};
use crate::glm::{expit, fit_weighted_logistic, logit, solve_estimating_equation, SolveOptions};
use crate::models::{
    bayes_imputation, fit_imputation, fit_missingness, fit_outcome_ee_from, fit_outcome_wla,
    fit_ps_ee_from, fit_ps_wla, missingness_weights, predict_outcome, CoefVector, Dataset,
    ModelKind, ModelSpec, NuisanceFit, EXTREME_WEIGHT, PROB_CLAMP,
};
use crate::seed;
use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::fmt;
use std::str::FromStr;

/// Number of imputations for `DR-MICE`.
pub const MICE_IMPUTATIONS: usize = 10;

/// Max Bayes fixed-point sweeps before giving up. The alternation contracts
/// linearly, and slowly when the posterior feeds back strongly, so the budget
/// is generous; each warm-started sweep costs only a Newton step or two.
const BAYES_MAX_SWEEPS: u32 = 200;
/// Fixed-point convergence: max-norm change of the stacked (α̂, β̂) updates.
const BAYES_TOL: f64 = 1e-8;

/// Estimator selector. `Display`/`FromStr` use the canonical labels
/// (`IPW-IPW`, …, `TR-WEE`); parsing is case-insensitive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    IpwIpw,
    IpwDr,
    IpwWee,
    DrSi,
    DrMice,
    TrAipw,
    TrWee,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::IpwIpw,
        Method::IpwDr,
        Method::IpwWee,
        Method::DrSi,
        Method::DrMice,
        Method::TrAipw,
        Method::TrWee,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Method::IpwIpw => "IPW-IPW",
            Method::IpwDr => "IPW-DR",
            Method::IpwWee => "IPW-WEE",
            Method::DrSi => "DR-SI",
            Method::DrMice => "DR-MICE",
            Method::TrAipw => "TR-AIPW",
            Method::TrWee => "TR-WEE",
        }
    }

    /// True for the methods that consume randomness (stochastic imputation).
    pub fn is_stochastic(self) -> bool {
        matches!(self, Method::DrSi | Method::DrMice)
    }

    /// True for the methods that require an imputation model spec.
    pub fn needs_imputation(self) -> bool {
        matches!(self, Method::DrSi | Method::DrMice | Method::TrAipw | Method::TrWee)
    }

    /// Stable per-method stream tag so that seeded methods never share a
    /// random stream inside one replication.
    fn stream_tag(self) -> u64 {
        match self {
            Method::IpwIpw => 0,
            Method::IpwDr => 1,
            Method::IpwWee => 2,
            Method::DrSi => 3,
            Method::DrMice => 4,
            Method::TrAipw => 5,
            Method::TrWee => 6,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let up = s.trim().to_ascii_uppercase();
        Method::ALL
            .into_iter()
            .find(|m| m.label() == up)
            .ok_or_else(|| {
                Error::Invalid(format!(
                    "unknown method {s:?}; expected one of IPW-IPW, IPW-DR, IPW-WEE, DR-SI, DR-MICE, TR-AIPW, TR-WEE"
                ))
            })
    }
}

/// The four model specs an analysis runs with, plus the Bayes-fallback
/// switch. The imputation spec is optional because the pure-IPW estimators
/// never use one.
#[derive(Debug, Clone, PartialEq)]
pub struct SpecBundle {
    pub missingness: ModelSpec,
    pub imputation: Option<ModelSpec>,
    pub propensity: ModelSpec,
    pub outcome: ModelSpec,
    /// Rebuild imputation probabilities from the propensity and outcome fits
    /// via Bayes' rule (TR estimators only).
    pub use_bayes_fallback: bool,
}

impl SpecBundle {
    /// All-covariate specs for a dataset with `p` covariates: the correct
    /// models for the built-in data-generating process.
    pub fn saturated(p: usize) -> Self {
        let all: Vec<usize> = (1..=p).collect();
        SpecBundle {
            missingness: ModelSpec::missingness(all.clone()),
            imputation: Some(ModelSpec::imputation(all.clone())),
            propensity: ModelSpec::propensity(all.clone()),
            outcome: ModelSpec::outcome(all),
            use_bayes_fallback: false,
        }
    }

    pub fn validate(&self, p: usize) -> Result<()> {
        if self.missingness.kind != ModelKind::Missingness
            || self.propensity.kind != ModelKind::Propensity
            || self.outcome.kind != ModelKind::Outcome
        {
            return Err(Error::Invalid("spec bundle fields have mismatched model kinds".into()));
        }
        if let Some(imp) = &self.imputation {
            if imp.kind != ModelKind::Imputation {
                return Err(Error::Invalid("spec bundle fields have mismatched model kinds".into()));
            }
            imp.validate(p)?;
        }
        self.missingness.validate(p)?;
        self.propensity.validate(p)?;
        self.outcome.validate(p)?;
        if !self.outcome.include_exposure {
            return Err(Error::Invalid(
                "the outcome model must include the exposure term".into(),
            ));
        }
        Ok(())
    }

    fn imputation_spec(&self, method: Method) -> Result<&ModelSpec> {
        self.imputation.as_ref().ok_or_else(|| {
            Error::Invalid(format!(
                "{method} requires an imputation model spec, but none was provided"
            ))
        })
    }
}

/// Rubin-style variance decomposition of the pooled log odds ratio across the
/// `DR-MICE` imputations (diagnostic only; confidence intervals come from the
/// bootstrap).
#[derive(Debug, Clone, PartialEq)]
pub struct MiceDiagnostics {
    pub m: usize,
    pub within_log_or: f64,
    pub between_log_or: f64,
    pub total_log_or: f64,
}

/// Non-fatal observations accumulated while estimating.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Diagnostics {
    /// Some fitted/posterior probability hit the `PROB_CLAMP` bounds.
    pub clamped_probabilities: bool,
    /// An arm mean τ̂ₐ was clamped away from {0, 1} before forming the ratio.
    pub clamped_arms: bool,
    /// Some inverse-probability weight exceeded `EXTREME_WEIGHT`.
    pub extreme_weights: bool,
    /// Bayes fixed-point sweeps performed (TR methods with the fallback on).
    pub bayes_sweeps: Option<u32>,
    pub mice: Option<MiceDiagnostics>,
}

/// A point estimate: per-arm outcome probabilities and their odds ratio.
/// `tau` always recomposes exactly from the (clamped) arms.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectEstimate {
    pub method: Method,
    /// Estimated P(Y^1 = 1), clamped into [1e-6, 1−1e-6].
    pub tau1: f64,
    /// Estimated P(Y^0 = 1), clamped likewise.
    pub tau0: f64,
    /// Causal odds ratio [τ₁/(1−τ₁)] / [τ₀/(1−τ₀)].
    pub tau: f64,
    /// Per-arm working-model coefficients for the WEE methods (arm 1, arm 0).
    pub arm_coef: Option<(CoefVector, CoefVector)>,
    pub diagnostics: Diagnostics,
}

impl EffectEstimate {
    pub fn log_or(&self) -> f64 {
        logit(self.tau1) - logit(self.tau0)
    }
}

fn finish(
    method: Method,
    tau1: f64,
    tau0: f64,
    arm_coef: Option<(CoefVector, CoefVector)>,
    mut diagnostics: Diagnostics,
) -> Result<EffectEstimate> {
    if !tau1.is_finite() || !tau0.is_finite() {
        return Err(Error::DegenerateArm(format!(
            "{method} produced non-finite arm means ({tau1}, {tau0})"
        )));
    }
    let (tau1, c1) = clamp_arm(tau1);
    let (tau0, c0) = clamp_arm(tau0);
    diagnostics.clamped_arms |= c1 || c0;
    let tau = (tau1 / (1.0 - tau1)) / (tau0 / (1.0 - tau0));
    Ok(EffectEstimate {
        method,
        tau1,
        tau0,
        tau,
        arm_coef,
        diagnostics,
    })
}

fn clamp_arm(t: f64) -> (f64, bool) {
    if t < PROB_CLAMP {
        (PROB_CLAMP, true)
    } else if t > 1.0 - PROB_CLAMP {
        (1.0 - PROB_CLAMP, true)
    } else {
        (t, false)
    }
}

/// True when some realized inverse-probability weight w/P or w/(1−P) on a
/// complete row blows past the diagnostic threshold.
fn extreme_ps_weights(data: &Dataset, w: &[f64], pa: &[f64]) -> bool {
    (0..data.n()).any(|i| {
        !data.is_missing(i)
            && (w[i] / pa[i] > EXTREME_WEIGHT || w[i] / (1.0 - pa[i]) > EXTREME_WEIGHT)
    })
}

/// Outcome-model spec with the exposure column removed: the per-arm working
/// model the WEE methods solve.
fn arm_spec(outcome: &ModelSpec) -> ModelSpec {
    ModelSpec {
        kind: ModelKind::Outcome,
        covariate_indices: outcome.covariate_indices.clone(),
        include_outcome: false,
        include_exposure: false,
    }
}

// ---------------------------------------------------------------------------
// shared nuisance bundles

struct IpwNuisance {
    miss: Option<NuisanceFit>,
    ps: NuisanceFit,
}

fn fit_ipw_nuisance(data: &Dataset, bundle: &SpecBundle, opts: &SolveOptions) -> Result<IpwNuisance> {
    let miss = if data.n_missing() > 0 {
        Some(fit_missingness(data, &bundle.missingness, opts)?)
    } else {
        None
    };
    let ps = fit_ps_wla(data, miss.as_ref(), &bundle.propensity, opts)?;
    Ok(IpwNuisance { miss, ps })
}

impl IpwNuisance {
    fn base_diag(&self, data: &Dataset) -> Diagnostics {
        let w = missingness_weights(data, self.miss.as_ref());
        Diagnostics {
            clamped_probabilities: self.miss.as_ref().map_or(false, |m| m.clamped) || self.ps.clamped,
            extreme_weights: self.miss.as_ref().map_or(false, |m| m.extreme_weights)
                || extreme_ps_weights(data, &w, &self.ps.fitted),
            ..Diagnostics::default()
        }
    }
}

/// Everything the TR estimators share: the missingness fit, the working
/// imputation probabilities (model-based or Bayes-reconstructed), and the
/// augmented propensity/outcome fits solved against those probabilities.
pub struct TrNuisance {
    pub miss: Option<NuisanceFit>,
    /// Imputation probabilities P(A=1 | X, Y) in force for the EE fits.
    pub pi: Vec<f64>,
    pub ps: NuisanceFit,
    pub outcome: NuisanceFit,
    /// Sweeps of the Bayes fixed point, when the fallback ran.
    pub bayes_sweeps: Option<u32>,
    /// Any probability clamping observed across the constituent fits.
    pub clamped: bool,
}

/// Fits the TR nuisance stack. With `use_bayes_fallback` the imputation
/// probabilities and the EE fits are iterated to a joint fixed point: each
/// sweep rebuilds the posterior P(A=1 | X, Y) from the current propensity and
/// outcome fits by Bayes' rule and re-solves both estimating equations
/// (warm-started), until the stacked coefficient change is below 1e-8.
pub fn fit_tr_nuisance(data: &Dataset, bundle: &SpecBundle, opts: &SolveOptions) -> Result<TrNuisance> {
    bundle.validate(data.p())?;
    let imp_spec = bundle.imputation_spec(Method::TrAipw)?;
    let miss = if data.n_missing() > 0 {
        Some(fit_missingness(data, &bundle.missingness, opts)?)
    } else {
        None
    };
    let imp = fit_imputation(data, imp_spec, opts)?;
    let mut clamped = imp.clamped || miss.as_ref().map_or(false, |m| m.clamped);
    let mut pi = imp.fitted.clone();
    let mut ps = fit_ps_ee_from(data, miss.as_ref(), &pi, &bundle.propensity, opts, None)?;
    let mut outcome = fit_outcome_ee_from(data, miss.as_ref(), &pi, &bundle.outcome, opts, None)?;
    let mut bayes_sweeps = None;

    if bundle.use_bayes_fallback {
        let mut sweeps = 0;
        loop {
            sweeps += 1;
            let (y1, cy1) = predict_outcome(&outcome, data, 1.0)?;
            let (y0, cy0) = predict_outcome(&outcome, data, 0.0)?;
            let (post, cp) = bayes_imputation(&ps.fitted, &y1, &y0, data.outcome())?;
            clamped |= cy1 || cy0 || cp;
            let ps_next = fit_ps_ee_from(
                data,
                miss.as_ref(),
                &post,
                &bundle.propensity,
                opts,
                Some(&ps.coef.values),
            )?;
            let outcome_next = fit_outcome_ee_from(
                data,
                miss.as_ref(),
                &post,
                &bundle.outcome,
                opts,
                Some(&outcome.coef.values),
            )?;
            let change = max_change(&ps.coef.values, &ps_next.coef.values)
                .max(max_change(&outcome.coef.values, &outcome_next.coef.values));
            pi = post;
            ps = ps_next;
            outcome = outcome_next;
            if change <= BAYES_TOL {
                bayes_sweeps = Some(sweeps);
                break;
            }
            if sweeps >= BAYES_MAX_SWEEPS {
                return Err(Error::Convergence {
                    iterations: sweeps,
                    score_norm: change,
                });
            }
        }
    }

    clamped |= ps.clamped || outcome.clamped;
    Ok(TrNuisance {
        miss,
        pi,
        ps,
        outcome,
        bayes_sweeps,
        clamped,
    })
}

fn max_change(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

// ---------------------------------------------------------------------------
// IPW family

fn ipw_ipw_from(data: &Dataset, nu: &IpwNuisance) -> Result<EffectEstimate> {
    let n = data.n() as f64;
    let w = missingness_weights(data, nu.miss.as_ref());
    let pa = &nu.ps.fitted;
    let a = data.exposure_values();
    let y = data.outcome();
    let mut t1 = 0.0;
    let mut t0 = 0.0;
    for i in 0..data.n() {
        t1 += w[i] * a[i] * y[i] / pa[i];
        t0 += w[i] * (1.0 - a[i]) * y[i] / (1.0 - pa[i]);
    }
    finish(Method::IpwIpw, t1 / n, t0 / n, None, nu.base_diag(data))
}

fn ipw_dr_from(data: &Dataset, nu: &IpwNuisance, outcome: &NuisanceFit) -> Result<EffectEstimate> {
    let n = data.n() as f64;
    let w = missingness_weights(data, nu.miss.as_ref());
    let pa = &nu.ps.fitted;
    let a = data.exposure_values();
    let y = data.outcome();
    let (y1, c1) = predict_outcome(outcome, data, 1.0)?;
    let (y0, c0) = predict_outcome(outcome, data, 0.0)?;
    let mut t1 = 0.0;
    let mut t0 = 0.0;
    for i in 0..data.n() {
        t1 += w[i] * (a[i] * (y[i] - y1[i]) / pa[i] + y1[i]);
        t0 += w[i] * ((1.0 - a[i]) * (y[i] - y0[i]) / (1.0 - pa[i]) + y0[i]);
    }
    let mut diag = nu.base_diag(data);
    diag.clamped_probabilities |= outcome.clamped || c1 || c0;
    finish(Method::IpwDr, t1 / n, t0 / n, None, diag)
}

/// One WEE arm for the IPW family: a weighted logistic fit of Y on the
/// exposure-free outcome design with weights w·1{A=arm}/P(A=arm|X), followed
/// by the weighted mean of its fitted probabilities.
fn ipw_wee_arm(
    data: &Dataset,
    w: &[f64],
    pa: &[f64],
    outcome_spec: &ModelSpec,
    arm: f64,
    opts: &SolveOptions,
) -> Result<(f64, CoefVector)> {
    let spec = arm_spec(outcome_spec);
    let design = spec.design(data)?;
    let a = data.exposure_values();
    let weights: Vec<f64> = (0..data.n())
        .map(|i| {
            let ind = if arm == 1.0 { a[i] } else { 1.0 - a[i] };
            let prob = if arm == 1.0 { pa[i] } else { 1.0 - pa[i] };
            w[i] * ind / prob
        })
        .collect();
    let fit = fit_weighted_logistic(&design, data.outcome(), &weights, opts)?;
    let mu = design.linear_predictor(&fit.coef);
    let tau = (0..data.n()).map(|i| w[i] * expit(mu[i])).sum::<f64>() / data.n() as f64;
    Ok((
        tau,
        CoefVector {
            values: fit.coef,
            label: ModelKind::Outcome,
        },
    ))
}

fn ipw_wee_from(
    data: &Dataset,
    nu: &IpwNuisance,
    outcome_spec: &ModelSpec,
    opts: &SolveOptions,
) -> Result<EffectEstimate> {
    let w = missingness_weights(data, nu.miss.as_ref());
    let (t1, b1) = ipw_wee_arm(data, &w, &nu.ps.fitted, outcome_spec, 1.0, opts)?;
    let (t0, b0) = ipw_wee_arm(data, &w, &nu.ps.fitted, outcome_spec, 0.0, opts)?;
    finish(Method::IpwWee, t1, t0, Some((b1, b0)), nu.base_diag(data))
}

// ---------------------------------------------------------------------------
// imputation (DR) family

struct CompletedAipw {
    tau1: f64,
    tau0: f64,
    q1: Vec<f64>,
    q0: Vec<f64>,
    clamped: bool,
    extreme: bool,
}

/// Plain AIPW on a fully observed dataset: unweighted propensity and joint
/// outcome fits, then the augmented per-arm means. Returns the per-unit
/// contributions for variance diagnostics.
fn aipw_on_completed(completed: &Dataset, bundle: &SpecBundle, opts: &SolveOptions) -> Result<CompletedAipw> {
    let ps = fit_ps_wla(completed, None, &bundle.propensity, opts)?;
    let outcome = fit_outcome_wla(completed, None, &bundle.outcome, opts)?;
    let (y1, c1) = predict_outcome(&outcome, completed, 1.0)?;
    let (y0, c0) = predict_outcome(&outcome, completed, 0.0)?;
    let n = completed.n();
    let a = completed.exposure_values();
    let y = completed.outcome();
    let mut q1 = Vec::with_capacity(n);
    let mut q0 = Vec::with_capacity(n);
    for i in 0..n {
        q1.push(a[i] * (y[i] - y1[i]) / ps.fitted[i] + y1[i]);
        q0.push((1.0 - a[i]) * (y[i] - y0[i]) / (1.0 - ps.fitted[i]) + y0[i]);
    }
    let tau1 = q1.iter().sum::<f64>() / n as f64;
    let tau0 = q0.iter().sum::<f64>() / n as f64;
    let ones = vec![1.0; n];
    Ok(CompletedAipw {
        tau1,
        tau0,
        q1,
        q0,
        clamped: ps.clamped || outcome.clamped || c1 || c0,
        extreme: extreme_ps_weights(completed, &ones, &ps.fitted),
    })
}

/// Draws one completed dataset: each missing exposure is Bernoulli with the
/// given per-row probability. Rows are visited in order so the stream is
/// reproducible.
fn draw_completion(data: &Dataset, pi: &[f64], rng: &mut ChaCha8Rng) -> Result<Dataset> {
    let fill: Vec<f64> = (0..data.n())
        .map(|i| {
            if data.is_missing(i) {
                f64::from((rng.gen::<f64>() < pi[i]) as u8)
            } else {
                0.0
            }
        })
        .collect();
    data.with_exposure_filled(&fill)
}

fn dr_si_from(
    data: &Dataset,
    bundle: &SpecBundle,
    imp: &NuisanceFit,
    opts: &SolveOptions,
    seed: u64,
) -> Result<EffectEstimate> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let completed = draw_completion(data, &imp.fitted, &mut rng)?;
    let ai = aipw_on_completed(&completed, bundle, opts)?;
    let diag = Diagnostics {
        clamped_probabilities: imp.clamped || ai.clamped,
        extreme_weights: ai.extreme,
        ..Diagnostics::default()
    };
    finish(Method::DrSi, ai.tau1, ai.tau0, None, diag)
}

/// Sample-variance of the mean and cross-covariance from per-unit
/// contributions: Var(mean q) ≈ Σ(q−q̄)² / (n(n−1)).
fn mean_variance(q: &[f64], mean: f64) -> f64 {
    let n = q.len() as f64;
    q.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n * (n - 1.0))
}

fn mean_covariance(q1: &[f64], m1: f64, q0: &[f64], m0: f64) -> f64 {
    let n = q1.len() as f64;
    q1.iter()
        .zip(q0)
        .map(|(a, b)| (a - m1) * (b - m0))
        .sum::<f64>()
        / (n * (n - 1.0))
}

/// Within-imputation variance of the log odds ratio by the delta method from
/// the per-unit AIPW contributions.
fn log_or_variance(ai: &CompletedAipw, t1: f64, t0: f64) -> f64 {
    let g1 = 1.0 / (t1 * (1.0 - t1));
    let g0 = 1.0 / (t0 * (1.0 - t0));
    let v1 = mean_variance(&ai.q1, ai.tau1);
    let v0 = mean_variance(&ai.q0, ai.tau0);
    let c = mean_covariance(&ai.q1, ai.tau1, &ai.q0, ai.tau0);
    g1 * g1 * v1 + g0 * g0 * v0 - 2.0 * g1 * g0 * c
}

/// Pools per-imputation arm estimates on the logit scale and assembles the
/// Rubin decomposition of the pooled log-OR variance.
fn pool_mice(per_imputation: &[(f64, f64, f64)]) -> (f64, f64, MiceDiagnostics) {
    let m = per_imputation.len();
    let mf = m as f64;
    let mut lo1 = 0.0;
    let mut lo0 = 0.0;
    let mut within = 0.0;
    for (t1, t0, w) in per_imputation {
        lo1 += logit(*t1);
        lo0 += logit(*t0);
        within += w;
    }
    lo1 /= mf;
    lo0 /= mf;
    within /= mf;
    let between = if m > 1 {
        per_imputation
            .iter()
            .map(|(t1, t0, _)| {
                let d = (logit(*t1) - logit(*t0)) - (lo1 - lo0);
                d * d
            })
            .sum::<f64>()
            / (mf - 1.0)
    } else {
        0.0
    };
    (
        expit(lo1),
        expit(lo0),
        MiceDiagnostics {
            m,
            within_log_or: within,
            between_log_or: between,
            total_log_or: within + (1.0 + 1.0 / mf) * between,
        },
    )
}

fn dr_mice_from(
    data: &Dataset,
    bundle: &SpecBundle,
    imp: &NuisanceFit,
    opts: &SolveOptions,
    seed: u64,
) -> Result<EffectEstimate> {
    let mut diag = Diagnostics {
        clamped_probabilities: imp.clamped,
        ..Diagnostics::default()
    };

    if data.n_missing() == 0 {
        // Every completed dataset would be identical: estimate once, zero
        // between-imputation variance.
        let ai = aipw_on_completed(data, bundle, opts)?;
        diag.clamped_probabilities |= ai.clamped;
        diag.extreme_weights |= ai.extreme;
        let (t1, c1) = clamp_arm(ai.tau1);
        let (t0, c0) = clamp_arm(ai.tau0);
        diag.clamped_arms |= c1 || c0;
        let (p1, p0, mice) = pool_mice(&[(t1, t0, log_or_variance(&ai, t1, t0))]);
        diag.mice = Some(MiceDiagnostics { m: MICE_IMPUTATIONS, ..mice });
        return finish(Method::DrMice, p1, p0, None, diag);
    }

    // Large-sample posterior of the imputation coefficients: N(δ̂, I⁻¹) with
    // I the complete-case Fisher information at δ̂. Draws are δ̂ + L⁻ᵀz for
    // I = LLᵀ and z standard normal.
    let design = imp.spec.design(data)?;
    let k = design.ncols();
    let mut info = DMatrix::zeros(k, k);
    for i in 0..data.n() {
        if data.is_missing(i) {
            continue;
        }
        let row = design.row(i);
        let s = imp.fitted[i] * (1.0 - imp.fitted[i]);
        for a in 0..k {
            for b in 0..k {
                info[(a, b)] += s * row[a] * row[b];
            }
        }
    }
    let chol = Cholesky::new(info).ok_or(Error::Rank { rcond: 0.0 })?;
    let lt = chol.l().transpose();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut per_imputation = Vec::with_capacity(MICE_IMPUTATIONS);
    for _ in 0..MICE_IMPUTATIONS {
        let z = DVector::from_iterator(k, (0..k).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let step = lt
            .solve_upper_triangular(&z)
            .ok_or(Error::Rank { rcond: 0.0 })?;
        let delta_star: Vec<f64> = imp
            .coef
            .values
            .iter()
            .zip(step.iter())
            .map(|(d, s)| d + s)
            .collect();
        let mut pi_star: Vec<f64> = design
            .linear_predictor(&delta_star)
            .iter()
            .map(|e| expit(*e))
            .collect();
        for p in &mut pi_star {
            *p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        }
        let completed = draw_completion(data, &pi_star, &mut rng)?;
        let ai = aipw_on_completed(&completed, bundle, opts)?;
        diag.clamped_probabilities |= ai.clamped;
        diag.extreme_weights |= ai.extreme;
        let (t1, c1) = clamp_arm(ai.tau1);
        let (t0, c0) = clamp_arm(ai.tau0);
        diag.clamped_arms |= c1 || c0;
        per_imputation.push((t1, t0, log_or_variance(&ai, t1, t0)));
    }
    let (p1, p0, mice) = pool_mice(&per_imputation);
    diag.mice = Some(mice);
    finish(Method::DrMice, p1, p0, None, diag)
}

// ---------------------------------------------------------------------------
// TR family

fn tr_aipw_from(data: &Dataset, nu: &TrNuisance) -> Result<EffectEstimate> {
    let n = data.n();
    let w = missingness_weights(data, nu.miss.as_ref());
    let pa = &nu.ps.fitted;
    let a = data.exposure_values();
    let y = data.outcome();
    let (y1, c1) = predict_outcome(&nu.outcome, data, 1.0)?;
    let (y0, c0) = predict_outcome(&nu.outcome, data, 0.0)?;
    let mut t1 = 0.0;
    let mut t0 = 0.0;
    for i in 0..n {
        // expected augmentation terms under A | X, Y ~ π
        let e1 = nu.pi[i] * (y[i] - y1[i]) / pa[i] + y1[i];
        let e0 = (1.0 - nu.pi[i]) * (y[i] - y0[i]) / (1.0 - pa[i]) + y0[i];
        if w[i] > 0.0 {
            let q1 = a[i] * (y[i] - y1[i]) / pa[i] + y1[i];
            let q0 = (1.0 - a[i]) * (y[i] - y0[i]) / (1.0 - pa[i]) + y0[i];
            t1 += w[i] * q1 - (w[i] - 1.0) * e1;
            t0 += w[i] * q0 - (w[i] - 1.0) * e0;
        } else {
            t1 += e1;
            t0 += e0;
        }
    }
    let mut diag = tr_diag(data, nu);
    diag.clamped_probabilities |= c1 || c0;
    finish(Method::TrAipw, t1 / n as f64, t0 / n as f64, None, diag)
}

fn tr_diag(data: &Dataset, nu: &TrNuisance) -> Diagnostics {
    let w = missingness_weights(data, nu.miss.as_ref());
    Diagnostics {
        clamped_probabilities: nu.clamped,
        extreme_weights: nu.miss.as_ref().map_or(false, |m| m.extreme_weights)
            || extreme_ps_weights(data, &w, &nu.ps.fitted),
        bayes_sweeps: nu.bayes_sweeps,
        ..Diagnostics::default()
    }
}

/// One TR-WEE arm: solve the centered per-arm estimating equation
///
///   Σᵢ (xᵢ/Pₐᵢ) { wᵢ·1{Aᵢ=arm}·(Yᵢ − expit(xᵢᵀβ)) − (wᵢ−1)·ωᵢ·(Yᵢ − Ŷₐᵢ) } = 0
///
/// over the exposure-free outcome design x, with ωᵢ the imputation
/// probability of the arm and Ŷₐ the EE outcome predictions, then average
/// wᵢ·(expit(xᵢᵀβ̂) − Ŷₐᵢ) + Ŷₐᵢ. The score is a weighted logistic score
/// minus a constant vector, so the Jacobian is the usual negative
/// semidefinite weighted cross-product.
fn tr_wee_arm(
    data: &Dataset,
    nu: &TrNuisance,
    arm: f64,
    opts: &SolveOptions,
) -> Result<(f64, CoefVector, bool)> {
    let spec = arm_spec(&nu.outcome.spec);
    let design = spec.design(data)?;
    let k = design.ncols();
    let n = data.n();
    let w = missingness_weights(data, nu.miss.as_ref());
    let a = data.exposure_values();
    let y = data.outcome();
    let (yhat, clamped) = predict_outcome(&nu.outcome, data, arm)?;

    let mut u = vec![0.0; n];
    let mut center = vec![0.0; k];
    let mut any_weight = false;
    for i in 0..n {
        let prob = if arm == 1.0 {
            nu.ps.fitted[i]
        } else {
            1.0 - nu.ps.fitted[i]
        };
        let ind = if arm == 1.0 { a[i] } else { 1.0 - a[i] };
        let omega = if arm == 1.0 { nu.pi[i] } else { 1.0 - nu.pi[i] };
        u[i] = w[i] * ind / prob;
        any_weight |= u[i] > 0.0;
        let cc = (w[i] - 1.0) * omega * (y[i] - yhat[i]) / prob;
        let row = design.row(i);
        for j in 0..k {
            center[j] += cc * row[j];
        }
    }
    if !any_weight {
        return Err(Error::DegenerateArm(format!(
            "no complete cases with exposure {arm} to anchor the TR-WEE fit"
        )));
    }

    let score = |theta: &[f64]| {
        let mut g = vec![0.0; k];
        for i in 0..n {
            if u[i] == 0.0 {
                continue;
            }
            let row = design.row(i);
            let resid = u[i] * (y[i] - expit(dot(row, theta)));
            for (gj, &xv) in g.iter_mut().zip(row) {
                *gj += xv * resid;
            }
        }
        for (gj, c) in g.iter_mut().zip(&center) {
            *gj -= c;
        }
        g
    };
    let jacobian = |theta: &[f64]| {
        let mut j = DMatrix::zeros(k, k);
        for i in 0..n {
            if u[i] == 0.0 {
                continue;
            }
            let row = design.row(i);
            let p = expit(dot(row, theta));
            let s = u[i] * p * (1.0 - p);
            for ai in 0..k {
                for bi in 0..k {
                    j[(ai, bi)] -= s * row[ai] * row[bi];
                }
            }
        }
        j
    };
    let solve = solve_estimating_equation(score, jacobian, &vec![0.0; k], opts)?;
    let mu = design.linear_predictor(&solve.root);
    let tau = (0..n)
        .map(|i| w[i] * (expit(mu[i]) - yhat[i]) + yhat[i])
        .sum::<f64>()
        / n as f64;
    Ok((
        tau,
        CoefVector {
            values: solve.root,
            label: ModelKind::Outcome,
        },
        clamped,
    ))
}

fn tr_wee_from(data: &Dataset, nu: &TrNuisance, opts: &SolveOptions) -> Result<EffectEstimate> {
    let (t1, b1, c1) = tr_wee_arm(data, nu, 1.0, opts)?;
    let (t0, b0, c0) = tr_wee_arm(data, nu, 0.0, opts)?;
    let mut diag = tr_diag(data, nu);
    diag.clamped_probabilities |= c1 || c0;
    finish(Method::TrWee, t1, t0, Some((b1, b0)), diag)
}

// ---------------------------------------------------------------------------
// public entry points

/// Runs one estimator. `seed` feeds the stochastic-imputation methods only
/// (each method decorrelates it onto its own stream, so a shared replicate
/// seed is safe); the others are deterministic.
pub fn estimate(
    data: &Dataset,
    bundle: &SpecBundle,
    method: Method,
    opts: &SolveOptions,
    seed: u64,
) -> Result<EffectEstimate> {
    estimate_all(data, bundle, &[method], opts, seed).pop().unwrap().1
}

/// Runs several estimators on one dataset, fitting each shared nuisance model
/// once. Per-method failures are isolated: one diverging fit does not poison
/// the other methods. Results come back in the order requested.
pub fn estimate_all(
    data: &Dataset,
    bundle: &SpecBundle,
    methods: &[Method],
    opts: &SolveOptions,
    seed: u64,
) -> Vec<(Method, Result<EffectEstimate>)> {
    if let Err(e) = bundle.validate(data.p()) {
        return methods.iter().map(|m| (*m, Err(e.clone()))).collect();
    }
    for m in methods {
        if m.needs_imputation() {
            if let Err(e) = bundle.imputation_spec(*m) {
                // Config errors surface for the methods that need the spec;
                // the others still run.
                if methods.iter().all(|m| m.needs_imputation()) {
                    return methods.iter().map(|m| (*m, Err(e.clone()))).collect();
                }
            }
        }
    }

    let want_ipw = methods
        .iter()
        .any(|m| matches!(m, Method::IpwIpw | Method::IpwDr | Method::IpwWee));
    let want_dr = methods.iter().any(|m| matches!(m, Method::DrSi | Method::DrMice));
    let want_tr = methods.iter().any(|m| matches!(m, Method::TrAipw | Method::TrWee));

    let ipw = want_ipw.then(|| fit_ipw_nuisance(data, bundle, opts));
    let outcome_wla = methods.contains(&Method::IpwDr).then(|| {
        match &ipw {
            Some(Ok(nu)) => fit_outcome_wla(data, nu.miss.as_ref(), &bundle.outcome, opts),
            Some(Err(e)) => Err(e.clone()),
            None => unreachable!("IPW-DR implies the IPW nuisance fits"),
        }
    });
    let imp = want_dr.then(|| {
        bundle
            .imputation_spec(Method::DrSi)
            .and_then(|spec| fit_imputation(data, spec, opts))
    });
    let tr = want_tr.then(|| fit_tr_nuisance(data, bundle, opts));

    methods
        .iter()
        .map(|m| {
            let est = match m {
                Method::IpwIpw => match ipw.as_ref().unwrap() {
                    Ok(nu) => ipw_ipw_from(data, nu),
                    Err(e) => Err(e.clone()),
                },
                Method::IpwDr => match (ipw.as_ref().unwrap(), outcome_wla.as_ref().unwrap()) {
                    (Ok(nu), Ok(out)) => ipw_dr_from(data, nu, out),
                    (Err(e), _) | (_, Err(e)) => Err(e.clone()),
                },
                Method::IpwWee => match ipw.as_ref().unwrap() {
                    Ok(nu) => ipw_wee_from(data, nu, &bundle.outcome, opts),
                    Err(e) => Err(e.clone()),
                },
                Method::DrSi => match imp.as_ref().unwrap() {
                    Ok(fit) => dr_si_from(data, bundle, fit, opts, seed::derive(seed, m.stream_tag())),
                    Err(e) => Err(e.clone()),
                },
                Method::DrMice => match imp.as_ref().unwrap() {
                    Ok(fit) => dr_mice_from(data, bundle, fit, opts, seed::derive(seed, m.stream_tag())),
                    Err(e) => Err(e.clone()),
                },
                Method::TrAipw => match tr.as_ref().unwrap() {
                    Ok(nu) => tr_aipw_from(data, nu),
                    Err(e) => Err(e.clone()),
                },
                Method::TrWee => match tr.as_ref().unwrap() {
                    Ok(nu) => tr_wee_from(data, nu, opts),
                    Err(e) => Err(e.clone()),
                },
            };
            (*m, est)
        })
        .collect()
}

pub fn estimate_ipw_ipw(data: &Dataset, bundle: &SpecBundle, opts: &SolveOptions) -> Result<EffectEstimate> {
    estimate(data, bundle, Method::IpwIpw, opts, 0)
}

pub fn estimate_ipw_dr(data: &Dataset, bundle: &SpecBundle, opts: &SolveOptions) -> Result<EffectEstimate> {
    estimate(data, bundle, Method::IpwDr, opts, 0)
}

pub fn estimate_ipw_wee(data: &Dataset, bundle: &SpecBundle, opts: &SolveOptions) -> Result<EffectEstimate> {
    estimate(data, bundle, Method::IpwWee, opts, 0)
}

pub fn estimate_dr_si(
    data: &Dataset,
    bundle: &SpecBundle,
    opts: &SolveOptions,
    seed: u64,
) -> Result<EffectEstimate> {
    estimate(data, bundle, Method::DrSi, opts, seed)
}

pub fn estimate_dr_mice(
    data: &Dataset,
    bundle: &SpecBundle,
    opts: &SolveOptions,
    seed: u64,
) -> Result<EffectEstimate> {
    estimate(data, bundle, Method::DrMice, opts, seed)
}

pub fn estimate_tr_aipw(data: &Dataset, bundle: &SpecBundle, opts: &SolveOptions) -> Result<EffectEstimate> {
    estimate(data, bundle, Method::TrAipw, opts, 0)
}

pub fn estimate_tr_wee(data: &Dataset, bundle: &SpecBundle, opts: &SolveOptions) -> Result<EffectEstimate> {
    estimate(data, bundle, Method::TrWee, opts, 0)
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
