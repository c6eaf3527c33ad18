//! The four nuisance models — missingness, imputation, propensity score, and
//! outcome — their deliberate-misspecification controls, and the Bayes-rule
//! reconstruction of the imputation probabilities.
//!
//! Model conventions used throughout the crate:
//! - missingness:  P(R=1 | X, Y)      = expit(Xᵀγ + Y·γ_y), ordinary logistic fit (R fully observed);
//! - imputation:   P(A=1 | X, Y)      = expit(Xᵀδ + Y·δ_y), unweighted complete-case fit;
//! - propensity:   P(A=1 | X)         = expit(Xᵀα), complete-case fit weighted by 1/(1−P_R)
//!                 (WLA) or solved from the missingness-augmented equation (EE);
//! - outcome:      P(Y=1 | A, X)      = expit(Xᵀβ + A·β_A), joint fit over both arms,
//!                 weighted (WLA) or augmented (EE).
//!
//! Misspecification is structural: a wrong propensity/outcome model drops
//! covariates from `covariate_indices`; a wrong missingness/imputation model
//! drops the outcome from the regressors (`include_outcome = false`).

use crate::error::{Error, Result};
use crate::glm::{
    expit, fit_weighted_logistic, solve_estimating_equation, DesignMatrix, SolveOptions,
};
use nalgebra::DMatrix;

/// Bounds applied to every fitted probability before reciprocals are taken,
/// so inverse weights never exceed 1e6. Clamping is always reported.
pub const PROB_CLAMP: f64 = 1e-6;

/// Diagnostic threshold: an inverse-probability weight above this is flagged
/// (not fatal).
pub const EXTREME_WEIGHT: f64 = 100.0;

/// One study: covariates (without intercept), a binary exposure that may be
/// missing, a fully observed binary outcome, and the missingness indicator
/// derived from the exposure.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    covariates: Vec<f64>, // row-major n × p
    exposure: Vec<f64>,   // 0/1; placeholder 0 where missing
    missing: Vec<bool>,   // R: true ⇔ exposure absent
    outcome: Vec<f64>,    // 0/1
    n: usize,
    p: usize,
}

impl Dataset {
    /// Builds a dataset from row-major covariates (`n × p`), per-row exposure
    /// (`None` = missing), and a binary outcome.
    pub fn new(
        covariates: Vec<f64>,
        p: usize,
        exposure: Vec<Option<bool>>,
        outcome: Vec<f64>,
    ) -> Result<Self> {
        let n = exposure.len();
        if n == 0 {
            return Err(Error::Invalid("dataset must have at least one row".into()));
        }
        if outcome.len() != n || covariates.len() != n * p {
            return Err(Error::Invalid(format!(
                "dataset shape mismatch: {} covariate values, {} outcomes for n = {n}, p = {p}",
                covariates.len(),
                outcome.len()
            )));
        }
        for (i, v) in covariates.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::Invalid(format!(
                    "non-finite covariate at row {}, column {}",
                    i / p,
                    i % p
                )));
            }
        }
        for (i, y) in outcome.iter().enumerate() {
            if *y != 0.0 && *y != 1.0 {
                return Err(Error::Invalid(format!("outcome at row {i} is {y}, expected 0 or 1")));
            }
        }
        let mut a = vec![0.0; n];
        let mut r = vec![false; n];
        for (i, e) in exposure.iter().enumerate() {
            match e {
                Some(v) => a[i] = f64::from(*v as u8),
                None => r[i] = true,
            }
        }
        Ok(Self {
            covariates,
            exposure: a,
            missing: r,
            outcome,
            n,
            p,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    #[inline]
    pub fn covariate(&self, row: usize, col: usize) -> f64 {
        self.covariates[row * self.p + col]
    }

    #[inline]
    pub fn covariate_row(&self, row: usize) -> &[f64] {
        &self.covariates[row * self.p..(row + 1) * self.p]
    }

    pub fn outcome(&self) -> &[f64] {
        &self.outcome
    }

    /// Exposure as 0/1 with a 0 placeholder where missing; check
    /// [`Dataset::is_missing`] before trusting a value.
    pub fn exposure_values(&self) -> &[f64] {
        &self.exposure
    }

    pub fn exposure(&self, row: usize) -> Option<bool> {
        if self.missing[row] {
            None
        } else {
            Some(self.exposure[row] == 1.0)
        }
    }

    #[inline]
    pub fn is_missing(&self, row: usize) -> bool {
        self.missing[row]
    }

    pub fn n_missing(&self) -> usize {
        self.missing.iter().filter(|m| **m).count()
    }

    pub fn missing_rate(&self) -> f64 {
        self.n_missing() as f64 / self.n as f64
    }

    /// (exposed, unexposed) counts among complete cases.
    pub fn complete_arm_counts(&self) -> (usize, usize) {
        let mut n1 = 0;
        let mut n0 = 0;
        for i in 0..self.n {
            if !self.missing[i] {
                if self.exposure[i] == 1.0 {
                    n1 += 1;
                } else {
                    n0 += 1;
                }
            }
        }
        (n1, n0)
    }

    /// New dataset holding the given rows (repeats allowed) — the bootstrap
    /// resampling primitive.
    pub fn select_rows(&self, rows: &[usize]) -> Dataset {
        let mut covariates = Vec::with_capacity(rows.len() * self.p);
        let mut exposure = Vec::with_capacity(rows.len());
        let mut missing = Vec::with_capacity(rows.len());
        let mut outcome = Vec::with_capacity(rows.len());
        for &i in rows {
            covariates.extend_from_slice(self.covariate_row(i));
            exposure.push(self.exposure[i]);
            missing.push(self.missing[i]);
            outcome.push(self.outcome[i]);
        }
        Dataset {
            covariates,
            exposure,
            missing,
            outcome,
            n: rows.len(),
            p: self.p,
        }
    }

    /// Completed copy of the dataset: missing exposures replaced by `fill`
    /// (0/1 per row), nothing left missing. Used by the imputation estimators.
    pub fn with_exposure_filled(&self, fill: &[f64]) -> Result<Dataset> {
        if fill.len() != self.n {
            return Err(Error::Invalid("fill length must equal n".into()));
        }
        let mut exposure = self.exposure.clone();
        for i in 0..self.n {
            if self.missing[i] {
                let v = fill[i];
                if v != 0.0 && v != 1.0 {
                    return Err(Error::Invalid(format!(
                        "imputed exposure at row {i} is {v}, expected 0 or 1"
                    )));
                }
                exposure[i] = v;
            }
        }
        Ok(Dataset {
            covariates: self.covariates.clone(),
            exposure,
            missing: vec![false; self.n],
            outcome: self.outcome.clone(),
            n: self.n,
            p: self.p,
        })
    }
}

/// Which of the four nuisance models a spec or coefficient vector belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Missingness,
    Imputation,
    Propensity,
    Outcome,
}

/// Coefficients labeled with the model they parametrize. Layout: intercept,
/// selected covariates in `covariate_indices` order, then the outcome column
/// (missingness/imputation) or the exposure column (outcome model) when
/// included.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefVector {
    pub values: Vec<f64>,
    pub label: ModelKind,
}

/// Regressor selection for one nuisance model. `covariate_indices` are
/// 1-based columns of X; dropping an index (or the outcome term) is how the
/// simulation study expresses deliberate misspecification.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub covariate_indices: Vec<usize>,
    pub include_outcome: bool,
    pub include_exposure: bool,
}

impl ModelSpec {
    pub fn missingness(covariate_indices: Vec<usize>) -> Self {
        Self {
            kind: ModelKind::Missingness,
            covariate_indices,
            include_outcome: true,
            include_exposure: false,
        }
    }

    pub fn imputation(covariate_indices: Vec<usize>) -> Self {
        Self {
            kind: ModelKind::Imputation,
            covariate_indices,
            include_outcome: true,
            include_exposure: false,
        }
    }

    pub fn propensity(covariate_indices: Vec<usize>) -> Self {
        Self {
            kind: ModelKind::Propensity,
            covariate_indices,
            include_outcome: false,
            include_exposure: false,
        }
    }

    pub fn outcome(covariate_indices: Vec<usize>) -> Self {
        Self {
            kind: ModelKind::Outcome,
            covariate_indices,
            include_outcome: false,
            include_exposure: true,
        }
    }

    /// Misspecified variant with the outcome dropped from the regressors
    /// (missingness/imputation models only).
    pub fn without_outcome(mut self) -> Self {
        self.include_outcome = false;
        self
    }

    pub fn validate(&self, p: usize) -> Result<()> {
        for &ix in &self.covariate_indices {
            if ix == 0 || ix > p {
                return Err(Error::Invalid(format!(
                    "covariate index {ix} outside 1..={p}"
                )));
            }
        }
        let mut seen = self.covariate_indices.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.covariate_indices.len() {
            return Err(Error::Invalid("duplicate covariate index in model spec".into()));
        }
        if self.include_outcome
            && !matches!(self.kind, ModelKind::Missingness | ModelKind::Imputation)
        {
            return Err(Error::Invalid(
                "include_outcome is only valid for missingness/imputation models".into(),
            ));
        }
        if self.include_exposure && self.kind != ModelKind::Outcome {
            return Err(Error::Invalid(
                "include_exposure is only valid for the outcome model".into(),
            ));
        }
        Ok(())
    }

    /// Number of design columns (intercept included).
    pub fn n_coef(&self) -> usize {
        1 + self.covariate_indices.len()
            + usize::from(self.include_outcome)
            + usize::from(self.include_exposure)
    }

    /// Design matrix for this spec over the dataset. When the exposure column
    /// is included, missing rows carry a 0 placeholder — such rows must only
    /// ever enter fits with zero weight.
    pub fn design(&self, data: &Dataset) -> Result<DesignMatrix> {
        self.design_with_exposure(data, None)
    }

    /// Design matrix with every row's exposure column forced to `arm`
    /// (outcome model only; used for per-arm predictions and the two-point
    /// conditional expectations).
    pub fn design_at_arm(&self, data: &Dataset, arm: f64) -> Result<DesignMatrix> {
        self.design_with_exposure(data, Some(arm))
    }

    fn design_with_exposure(&self, data: &Dataset, force_arm: Option<f64>) -> Result<DesignMatrix> {
        self.validate(data.p())?;
        let n = data.n();
        let k = self.n_coef();
        let mut values = Vec::with_capacity(n * k);
        for i in 0..n {
            values.push(1.0);
            for &ix in &self.covariate_indices {
                values.push(data.covariate(i, ix - 1));
            }
            if self.include_outcome {
                values.push(data.outcome()[i]);
            }
            if self.include_exposure {
                values.push(force_arm.unwrap_or(data.exposure_values()[i]));
            }
        }
        DesignMatrix::new(values, n, k)
    }
}

/// A fitted nuisance model: the spec it came from, labeled coefficients,
/// fitted probabilities for every row (clamped into
/// `[PROB_CLAMP, 1 − PROB_CLAMP]`), and diagnostics.
#[derive(Debug, Clone)]
pub struct NuisanceFit {
    pub spec: ModelSpec,
    pub coef: CoefVector,
    pub fitted: Vec<f64>,
    /// True if any fitted probability hit the clamp bounds.
    pub clamped: bool,
    /// True if any inverse-probability weight consumed or implied by this fit
    /// exceeded [`EXTREME_WEIGHT`] (diagnostic, not fatal).
    pub extreme_weights: bool,
    pub iterations: u32,
}

fn clamp_probs(probs: &mut [f64]) -> bool {
    let mut clamped = false;
    for p in probs {
        if *p < PROB_CLAMP {
            *p = PROB_CLAMP;
            clamped = true;
        } else if *p > 1.0 - PROB_CLAMP {
            *p = 1.0 - PROB_CLAMP;
            clamped = true;
        }
    }
    clamped
}

fn expect_kind(spec: &ModelSpec, kind: ModelKind) -> Result<()> {
    if spec.kind != kind {
        return Err(Error::Invalid(format!(
            "expected a {kind:?} spec, got {:?}",
            spec.kind
        )));
    }
    Ok(())
}

/// Missingness weights w_i = (1−R_i)/(1−P_R,i): zero on missing rows, the
/// inverse non-missingness probability on complete rows. With no fit supplied
/// (fully observed data) the weight is the plain complete-case indicator.
pub fn missingness_weights(data: &Dataset, miss: Option<&NuisanceFit>) -> Vec<f64> {
    (0..data.n())
        .map(|i| {
            if data.is_missing(i) {
                0.0
            } else {
                match miss {
                    Some(fit) => 1.0 / (1.0 - fit.fitted[i]),
                    None => 1.0,
                }
            }
        })
        .collect()
}

/// Fits the missingness model R ~ selected X (+ Y) by ordinary logistic
/// regression (R is fully observed). Errors with `EmptyClass` when R is
/// constant — callers should skip the missingness model entirely on fully
/// observed data.
pub fn fit_missingness(data: &Dataset, spec: &ModelSpec, opts: &SolveOptions) -> Result<NuisanceFit> {
    expect_kind(spec, ModelKind::Missingness)?;
    let n_miss = data.n_missing();
    if n_miss == 0 || n_miss == data.n() {
        return Err(Error::EmptyClass(format!(
            "missingness indicator is constant ({n_miss} of {} rows missing)",
            data.n()
        )));
    }
    let design = spec.design(data)?;
    let r: Vec<f64> = (0..data.n()).map(|i| f64::from(data.is_missing(i) as u8)).collect();
    let fit = fit_weighted_logistic(&design, &r, &vec![1.0; data.n()], opts)?;
    let mut fitted = fit.fitted;
    let clamped = clamp_probs(&mut fitted);
    let extreme_weights = (0..data.n())
        .any(|i| !data.is_missing(i) && 1.0 / (1.0 - fitted[i]) > EXTREME_WEIGHT);
    Ok(NuisanceFit {
        spec: spec.clone(),
        coef: CoefVector {
            values: fit.coef,
            label: ModelKind::Missingness,
        },
        fitted,
        clamped,
        extreme_weights,
        iterations: fit.iterations,
    })
}

/// Fits the imputation model A ~ selected X (+ Y) on complete cases,
/// unweighted (valid under MAR: R ⊥ A | X, Y). Fitted probabilities are
/// evaluated on all rows.
pub fn fit_imputation(data: &Dataset, spec: &ModelSpec, opts: &SolveOptions) -> Result<NuisanceFit> {
    expect_kind(spec, ModelKind::Imputation)?;
    let (n1, n0) = data.complete_arm_counts();
    if n1 == 0 || n0 == 0 {
        return Err(Error::EmptyClass(format!(
            "observed exposure is constant among complete cases ({n1} exposed, {n0} unexposed)"
        )));
    }
    let design = spec.design(data)?;
    let weights: Vec<f64> = (0..data.n())
        .map(|i| f64::from(!data.is_missing(i) as u8))
        .collect();
    let fit = fit_weighted_logistic(&design, data.exposure_values(), &weights, opts)?;
    let mut fitted = fit.fitted;
    let clamped = clamp_probs(&mut fitted);
    Ok(NuisanceFit {
        spec: spec.clone(),
        coef: CoefVector {
            values: fit.coef,
            label: ModelKind::Imputation,
        },
        fitted,
        clamped,
        extreme_weights: false,
        iterations: fit.iterations,
    })
}

/// Propensity score by the weighted-likelihood approach: logistic A ~ selected
/// X on complete cases, weighted by 1/(1−P_R) from the missingness fit
/// (`None` = fully observed data, weights 1).
pub fn fit_ps_wla(
    data: &Dataset,
    miss: Option<&NuisanceFit>,
    spec: &ModelSpec,
    opts: &SolveOptions,
) -> Result<NuisanceFit> {
    expect_kind(spec, ModelKind::Propensity)?;
    let design = spec.design(data)?;
    let weights = missingness_weights(data, miss);
    let fit = fit_weighted_logistic(&design, data.exposure_values(), &weights, opts)?;
    let mut fitted = fit.fitted;
    let clamped = clamp_probs(&mut fitted);
    let extreme_weights = weights.iter().any(|w| *w > EXTREME_WEIGHT);
    Ok(NuisanceFit {
        spec: spec.clone(),
        coef: CoefVector {
            values: fit.coef,
            label: ModelKind::Propensity,
        },
        fitted,
        clamped,
        extreme_weights,
        iterations: fit.iterations,
    })
}

/// Outcome model by the weighted-likelihood approach: logistic Y ~ selected X
/// + A on complete cases with the same missingness weights.
pub fn fit_outcome_wla(
    data: &Dataset,
    miss: Option<&NuisanceFit>,
    spec: &ModelSpec,
    opts: &SolveOptions,
) -> Result<NuisanceFit> {
    expect_kind(spec, ModelKind::Outcome)?;
    let design = spec.design(data)?;
    let weights = missingness_weights(data, miss);
    let fit = fit_weighted_logistic(&design, data.outcome(), &weights, opts)?;
    let mut fitted = fit.fitted;
    let clamped = clamp_probs(&mut fitted);
    let extreme_weights = weights.iter().any(|w| *w > EXTREME_WEIGHT);
    Ok(NuisanceFit {
        spec: spec.clone(),
        coef: CoefVector {
            values: fit.coef,
            label: ModelKind::Outcome,
        },
        fitted,
        clamped,
        extreme_weights,
        iterations: fit.iterations,
    })
}

/// Propensity score from the missingness-augmented estimating equation
///
///   Σᵢ { wᵢ Xᵢ(Aᵢ − pᵢ(α)) − (wᵢ−1) Xᵢ(πᵢ − pᵢ(α)) } = 0,
///
/// where πᵢ = P(Aᵢ=1|Xᵢ,Yᵢ) from the imputation fit (or Bayes posterior) and
/// wᵢ are the missingness weights. Collecting terms gives a fixed
/// pseudo-response zᵢ = wᵢAᵢ − (wᵢ−1)πᵢ, so the score is Σ Xᵢ(zᵢ − pᵢ(α))
/// with the ordinary logistic Jacobian −Σ pᵢqᵢXᵢXᵢᵀ (negative definite: the
/// equation has a unique root).
pub fn fit_ps_ee(
    data: &Dataset,
    miss: Option<&NuisanceFit>,
    pi: &[f64],
    spec: &ModelSpec,
    opts: &SolveOptions,
) -> Result<NuisanceFit> {
    fit_ps_ee_from(data, miss, pi, spec, opts, None)
}

/// The fixed pieces of the propensity estimating equation: the design and the
/// pseudo-response z. Shared by the fitter and the public evaluator so there
/// is exactly one implementation of the score algebra.
struct PsEeParts {
    design: DesignMatrix,
    z: Vec<f64>,
}

fn ps_ee_parts(data: &Dataset, miss: Option<&NuisanceFit>, pi: &[f64], spec: &ModelSpec) -> Result<PsEeParts> {
    expect_kind(spec, ModelKind::Propensity)?;
    if pi.len() != data.n() {
        return Err(Error::Invalid("imputation probability length must equal n".into()));
    }
    let design = spec.design(data)?;
    let w = missingness_weights(data, miss);
    let a = data.exposure_values();
    let z: Vec<f64> = (0..data.n()).map(|i| w[i] * a[i] - (w[i] - 1.0) * pi[i]).collect();
    Ok(PsEeParts { design, z })
}

impl PsEeParts {
    fn score(&self, theta: &[f64]) -> Vec<f64> {
        let k = self.design.ncols();
        let mut g = vec![0.0; k];
        for i in 0..self.design.nrows() {
            let row = self.design.row(i);
            let resid = self.z[i] - expit(dot(row, theta));
            for (gj, &xv) in g.iter_mut().zip(row) {
                *gj += xv * resid;
            }
        }
        g
    }

    fn jacobian(&self, theta: &[f64]) -> DMatrix<f64> {
        let k = self.design.ncols();
        let mut j = DMatrix::zeros(k, k);
        for i in 0..self.design.nrows() {
            let row = self.design.row(i);
            let p = expit(dot(row, theta));
            let s = p * (1.0 - p);
            for ai in 0..k {
                for bi in 0..k {
                    j[(ai, bi)] -= s * row[ai] * row[bi];
                }
            }
        }
        j
    }
}

/// Score and Jacobian of the propensity estimating equation evaluated at an
/// arbitrary coefficient vector. The coefficients from [`fit_ps_ee`] zero this
/// score to solver tolerance; evaluating elsewhere supports convergence audits
/// and derivative checks against finite differences.
pub fn ps_ee_system_at(
    data: &Dataset,
    miss: Option<&NuisanceFit>,
    pi: &[f64],
    spec: &ModelSpec,
    alpha: &[f64],
) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let parts = ps_ee_parts(data, miss, pi, spec)?;
    if alpha.len() != parts.design.ncols() {
        return Err(Error::Invalid(format!(
            "coefficient length {} does not match design columns {}",
            alpha.len(),
            parts.design.ncols()
        )));
    }
    Ok((parts.score(alpha), parts.jacobian(alpha)))
}

/// [`fit_ps_ee`] with an explicit Newton starting point (used to warm-start
/// refits inside the Bayes fixed-point sweep).
pub(crate) fn fit_ps_ee_from(
    data: &Dataset,
    miss: Option<&NuisanceFit>,
    pi: &[f64],
    spec: &ModelSpec,
    opts: &SolveOptions,
    init: Option<&[f64]>,
) -> Result<NuisanceFit> {
    let parts = ps_ee_parts(data, miss, pi, spec)?;
    let w = missingness_weights(data, miss);
    let k = parts.design.ncols();
    let start = init.map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; k]);
    let solve = solve_estimating_equation(
        |theta| parts.score(theta),
        |theta| parts.jacobian(theta),
        &start,
        opts,
    )?;
    let design = parts.design;
    let mut fitted: Vec<f64> = design.linear_predictor(&solve.root).iter().map(|e| expit(*e)).collect();
    let clamped = clamp_probs(&mut fitted);
    let extreme_weights = w.iter().any(|wi| *wi > EXTREME_WEIGHT);
    Ok(NuisanceFit {
        spec: spec.clone(),
        coef: CoefVector {
            values: solve.root,
            label: ModelKind::Propensity,
        },
        fitted,
        clamped,
        extreme_weights,
        iterations: solve.iterations,
    })
}

/// Outcome model from the missingness-augmented estimating equation
///
///   Σᵢ { wᵢ X̃ᵢ(Aᵢ)(Yᵢ − pᵢ(β;Aᵢ)) − (wᵢ−1)·Σ_{a∈{0,1}} ω_{ia} X̃ᵢ(a)(Yᵢ − pᵢ(β;a)) } = 0,
///
/// with design rows X̃ᵢ(a) carrying the exposure column forced to `a`,
/// ω_{i1} = πᵢ, ω_{i0} = 1−πᵢ. The conditional expectation is exact two-point
/// enumeration over the unobserved exposure. The Jacobian is
/// −Σ wᵢ pq X̃X̃ᵀ|ₐᵢ + Σ (wᵢ−1) Σₐ ωₐ pq X̃X̃ᵀ|ₐ (indefinite in principle, so
/// the solve is damped).
pub fn fit_outcome_ee(
    data: &Dataset,
    miss: Option<&NuisanceFit>,
    pi: &[f64],
    spec: &ModelSpec,
    opts: &SolveOptions,
) -> Result<NuisanceFit> {
    fit_outcome_ee_from(data, miss, pi, spec, opts, None)
}

/// Fixed pieces of the outcome estimating equation: the observed-exposure
/// design, both forced-arm designs, weights, and the imputation mix. One
/// implementation serves the fitter and the public evaluator.
struct OutcomeEeParts {
    design_obs: DesignMatrix,
    design1: DesignMatrix,
    design0: DesignMatrix,
    w: Vec<f64>,
    pi: Vec<f64>,
    y: Vec<f64>,
}

fn outcome_ee_parts(
    data: &Dataset,
    miss: Option<&NuisanceFit>,
    pi: &[f64],
    spec: &ModelSpec,
) -> Result<OutcomeEeParts> {
    expect_kind(spec, ModelKind::Outcome)?;
    if pi.len() != data.n() {
        return Err(Error::Invalid("imputation probability length must equal n".into()));
    }
    Ok(OutcomeEeParts {
        design_obs: spec.design(data)?,
        design1: spec.design_at_arm(data, 1.0)?,
        design0: spec.design_at_arm(data, 0.0)?,
        w: missingness_weights(data, miss),
        pi: pi.to_vec(),
        y: data.outcome().to_vec(),
    })
}

impl OutcomeEeParts {
    fn score(&self, theta: &[f64]) -> Vec<f64> {
        let k = self.design_obs.ncols();
        let mut g = vec![0.0; k];
        for i in 0..self.design_obs.nrows() {
            if self.w[i] > 0.0 {
                let row = self.design_obs.row(i);
                let resid = self.w[i] * (self.y[i] - expit(dot(row, theta)));
                for (gj, &xv) in g.iter_mut().zip(row) {
                    *gj += xv * resid;
                }
            }
            let aug_coef = self.w[i] - 1.0;
            if aug_coef != 0.0 {
                let row1 = self.design1.row(i);
                let row0 = self.design0.row(i);
                let r1 = self.pi[i] * (self.y[i] - expit(dot(row1, theta)));
                let r0 = (1.0 - self.pi[i]) * (self.y[i] - expit(dot(row0, theta)));
                for j in 0..k {
                    g[j] -= aug_coef * (row1[j] * r1 + row0[j] * r0);
                }
            }
        }
        g
    }

    fn jacobian(&self, theta: &[f64]) -> DMatrix<f64> {
        let k = self.design_obs.ncols();
        let mut j = DMatrix::zeros(k, k);
        let add = |row: &[f64], s: f64, j: &mut DMatrix<f64>| {
            for ai in 0..k {
                for bi in 0..k {
                    j[(ai, bi)] += s * row[ai] * row[bi];
                }
            }
        };
        for i in 0..self.design_obs.nrows() {
            if self.w[i] > 0.0 {
                let row = self.design_obs.row(i);
                let p = expit(dot(row, theta));
                add(row, -self.w[i] * p * (1.0 - p), &mut j);
            }
            let aug_coef = self.w[i] - 1.0;
            if aug_coef != 0.0 {
                let row1 = self.design1.row(i);
                let p1 = expit(dot(row1, theta));
                add(row1, aug_coef * self.pi[i] * p1 * (1.0 - p1), &mut j);
                let row0 = self.design0.row(i);
                let p0 = expit(dot(row0, theta));
                add(row0, aug_coef * (1.0 - self.pi[i]) * p0 * (1.0 - p0), &mut j);
            }
        }
        j
    }
}

/// Score and Jacobian of the outcome estimating equation evaluated at an
/// arbitrary coefficient vector; the counterpart of [`ps_ee_system_at`] for
/// [`fit_outcome_ee`].
pub fn outcome_ee_system_at(
    data: &Dataset,
    miss: Option<&NuisanceFit>,
    pi: &[f64],
    spec: &ModelSpec,
    beta: &[f64],
) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let parts = outcome_ee_parts(data, miss, pi, spec)?;
    if beta.len() != parts.design_obs.ncols() {
        return Err(Error::Invalid(format!(
            "coefficient length {} does not match design columns {}",
            beta.len(),
            parts.design_obs.ncols()
        )));
    }
    Ok((parts.score(beta), parts.jacobian(beta)))
}

/// [`fit_outcome_ee`] with an explicit Newton starting point.
pub(crate) fn fit_outcome_ee_from(
    data: &Dataset,
    miss: Option<&NuisanceFit>,
    pi: &[f64],
    spec: &ModelSpec,
    opts: &SolveOptions,
    init: Option<&[f64]>,
) -> Result<NuisanceFit> {
    let parts = outcome_ee_parts(data, miss, pi, spec)?;
    let n = data.n();
    let k = parts.design_obs.ncols();
    let w = missingness_weights(data, miss);
    let start = init.map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; k]);
    let solve = solve_estimating_equation(
        |theta| parts.score(theta),
        |theta| parts.jacobian(theta),
        &start,
        opts,
    )?;
    let design1 = parts.design1;
    let design0 = parts.design0;

    // Fitted values: at the observed exposure on complete rows, the
    // π-weighted two-point mixture on missing rows.
    let eta1 = design1.linear_predictor(&solve.root);
    let eta0 = design0.linear_predictor(&solve.root);
    let mut fitted: Vec<f64> = (0..n)
        .map(|i| {
            if data.is_missing(i) {
                pi[i] * expit(eta1[i]) + (1.0 - pi[i]) * expit(eta0[i])
            } else if data.exposure_values()[i] == 1.0 {
                expit(eta1[i])
            } else {
                expit(eta0[i])
            }
        })
        .collect();
    let clamped = clamp_probs(&mut fitted);
    let extreme_weights = w.iter().any(|wi| *wi > EXTREME_WEIGHT);
    Ok(NuisanceFit {
        spec: spec.clone(),
        coef: CoefVector {
            values: solve.root,
            label: ModelKind::Outcome,
        },
        fitted,
        clamped,
        extreme_weights,
        iterations: solve.iterations,
    })
}

/// Per-row outcome probabilities with the exposure forced to `arm` (0 or 1),
/// clamped like every other probability vector. Returns the vector and
/// whether clamping fired.
pub fn predict_outcome(fit: &NuisanceFit, data: &Dataset, arm: f64) -> Result<(Vec<f64>, bool)> {
    expect_kind(&fit.spec, ModelKind::Outcome)?;
    let design = fit.spec.design_at_arm(data, arm)?;
    let mut probs: Vec<f64> = design
        .linear_predictor(&fit.coef.values)
        .iter()
        .map(|e| expit(*e))
        .collect();
    let clamped = clamp_probs(&mut probs);
    Ok((probs, clamped))
}

/// Bayes-rule reconstruction of the imputation probabilities from the
/// propensity score and the per-arm outcome probabilities:
///
///   P(A=1 | X, Y=1) = P(Y=1|A=1,X)·P(A=1|X) / P(Y=1|X),
///   P(A=1 | X, Y=0) = P(Y=0|A=1,X)·P(A=1|X) / P(Y=0|X),
///
/// with P(Y=1|X) = P(Y=1|A=1,X)·P(A=1|X) + P(Y=1|A=0,X)·P(A=0|X). Inputs are
/// per-row vectors; the output posterior is clamped. Returns the vector and
/// whether clamping fired.
pub fn bayes_imputation(
    ps: &[f64],
    outcome_if_exposed: &[f64],
    outcome_if_unexposed: &[f64],
    outcome: &[f64],
) -> Result<(Vec<f64>, bool)> {
    let n = outcome.len();
    if ps.len() != n || outcome_if_exposed.len() != n || outcome_if_unexposed.len() != n {
        return Err(Error::Invalid("bayes_imputation inputs must share one length".into()));
    }
    let mut post = Vec::with_capacity(n);
    for i in 0..n {
        let (like1, like0) = if outcome[i] == 1.0 {
            (outcome_if_exposed[i], outcome_if_unexposed[i])
        } else {
            (1.0 - outcome_if_exposed[i], 1.0 - outcome_if_unexposed[i])
        };
        let num = like1 * ps[i];
        let den = num + like0 * (1.0 - ps[i]);
        post.push(if den > 0.0 { num / den } else { ps[i] });
    }
    let clamped = clamp_probs(&mut post);
    Ok((post, clamped))
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
