//! Weighted logistic regression and a damped-Newton root finder for vector
//! estimating equations.
//!
//! These are the two numerical primitives everything else is built on: the
//! nuisance-model fits are weighted logistic regressions, and the augmented
//! estimating equations are solved with the generic Newton routine plus
//! hand-derived Jacobians. Both use the same convergence rule (max-norm of
//! the score) and the same step-halving damping.

use crate::error::{Error, Result};
use nalgebra::{Cholesky, DMatrix, DVector};

/// Reciprocal-condition threshold below which an information matrix or
/// Jacobian is treated as numerically singular.
pub const RCOND_MIN: f64 = 1e-12;

/// Guard band for separation detection: a positive-weight fitted probability
/// outside [PROB_GUARD, 1 - PROB_GUARD] during iteration fails the fit.
pub const PROB_GUARD: f64 = 1e-10;

/// Numerically stable inverse-logit. Branches on the sign of `x` so the
/// exponential never overflows; for |x| beyond ~37 the result saturates to
/// the nearest representable of 0 or 1.
#[inline]
pub fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Log-odds of `p`. Caller is responsible for `p` in (0,1).
#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Dense row-major design matrix whose first column is an intercept of ones.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    values: Vec<f64>,
    nrows: usize,
    ncols: usize,
}

impl DesignMatrix {
    /// Builds from row-major values, enforcing the invariants: first column
    /// identically 1, all entries finite, and at least as many rows as columns.
    pub fn new(values: Vec<f64>, nrows: usize, ncols: usize) -> Result<Self> {
        if ncols == 0 || nrows == 0 || values.len() != nrows * ncols {
            return Err(Error::Invalid(format!(
                "design matrix shape mismatch: {} values for {}x{}",
                values.len(),
                nrows,
                ncols
            )));
        }
        if nrows < ncols {
            return Err(Error::Invalid(format!(
                "design matrix has fewer rows ({nrows}) than columns ({ncols})"
            )));
        }
        for (i, v) in values.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::Invalid(format!(
                    "non-finite design entry at row {}, column {}",
                    i / ncols,
                    i % ncols
                )));
            }
        }
        for r in 0..nrows {
            if values[r * ncols] != 1.0 {
                return Err(Error::Invalid(format!(
                    "design matrix first column must be the intercept (row {r} is {})",
                    values[r * ncols]
                )));
            }
        }
        Ok(Self { values, nrows, ncols })
    }

    /// Builds an intercept column plus the given columns (each of length `n`).
    pub fn with_intercept(n: usize, columns: &[&[f64]]) -> Result<Self> {
        let ncols = columns.len() + 1;
        let mut values = Vec::with_capacity(n * ncols);
        for col in columns {
            if col.len() != n {
                return Err(Error::Invalid(format!(
                    "design column length {} does not match n = {n}",
                    col.len()
                )));
            }
        }
        for i in 0..n {
            values.push(1.0);
            for col in columns {
                values.push(col[i]);
            }
        }
        Self::new(values, n, ncols)
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.ncols..(i + 1) * self.ncols]
    }

    /// X·θ for all rows.
    pub fn linear_predictor(&self, coef: &[f64]) -> Vec<f64> {
        assert_eq!(coef.len(), self.ncols, "coefficient length mismatch");
        (0..self.nrows)
            .map(|i| dot(self.row(i), coef))
            .collect()
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

/// Newton/IRLS controls shared by the logistic fitter and the generic solver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    /// Maximum Newton iterations.
    pub max_iterations: u32,
    /// Convergence threshold on the max-norm of the score.
    pub tolerance: f64,
    /// Step-halving limit per iteration before declaring failure.
    pub damping: u32,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            tolerance: 1e-8,
            damping: 30,
        }
    }
}

/// Converged weighted-logistic fit: coefficients, fitted probabilities for
/// every input row, and the number of Newton updates taken.
#[derive(Debug, Clone)]
pub struct LogisticFit {
    pub coef: Vec<f64>,
    pub fitted: Vec<f64>,
    pub iterations: u32,
}

/// Solves the weighted logistic score Σᵢ wᵢ Xᵢ (yᵢ − expit(Xᵢᵀθ)) = 0 by
/// damped Newton (IRLS), cold-started at θ = 0.
///
/// Rows with wᵢ = 0 are inert; they still receive fitted probabilities.
/// Fails with `Separation` if the iteration diverges or any positive-weight
/// fitted probability pins to {0,1}, and with `Rank` if the weighted
/// information matrix is numerically singular.
pub fn fit_weighted_logistic(
    x: &DesignMatrix,
    y: &[f64],
    weights: &[f64],
    opts: &SolveOptions,
) -> Result<LogisticFit> {
    let n = x.nrows();
    let k = x.ncols();
    if y.len() != n || weights.len() != n {
        return Err(Error::Invalid(format!(
            "response/weight length ({}, {}) does not match design rows ({n})",
            y.len(),
            weights.len()
        )));
    }
    let mut any_one = false;
    let mut any_zero = false;
    for i in 0..n {
        let (yi, wi) = (y[i], weights[i]);
        if yi != 0.0 && yi != 1.0 {
            return Err(Error::Invalid(format!("response at row {i} is {yi}, expected 0 or 1")));
        }
        if !wi.is_finite() || wi < 0.0 {
            return Err(Error::Invalid(format!("weight at row {i} is {wi}, expected finite ≥ 0")));
        }
        if wi > 0.0 {
            if yi == 1.0 {
                any_one = true;
            } else {
                any_zero = true;
            }
        }
    }
    if !any_one || !any_zero {
        return Err(Error::EmptyClass(
            "positive-weight rows must contain both response classes".into(),
        ));
    }

    let mut theta = vec![0.0; k];
    let mut probs = vec![0.0; n];
    let mut cand = vec![0.0; n];
    let mut score = vec![0.0; k];
    let mut cand_score = vec![0.0; k];
    let mut info = vec![0.0; k * k];

    let score_at = |coef: &[f64], probs: &mut [f64], out: &mut [f64]| {
        out.iter_mut().for_each(|g| *g = 0.0);
        for i in 0..n {
            let row = x.row(i);
            let p = expit(dot(row, coef));
            probs[i] = p;
            let wi = weights[i];
            if wi > 0.0 {
                let r = wi * (y[i] - p);
                for (g, &xv) in out.iter_mut().zip(row) {
                    *g += xv * r;
                }
            }
        }
    };

    let check_separation = |probs: &[f64]| -> Result<()> {
        for i in 0..n {
            if weights[i] > 0.0 && !(PROB_GUARD..=1.0 - PROB_GUARD).contains(&probs[i]) {
                return Err(Error::Separation(format!(
                    "fitted probability {:.3e} pinned at row {i}",
                    probs[i]
                )));
            }
        }
        Ok(())
    };

    score_at(&theta, &mut probs, &mut score);
    let mut score_norm = max_abs(&score);
    let mut iterations = 0u32;

    while score_norm > opts.tolerance {
        if iterations >= opts.max_iterations {
            return Err(Error::Separation(format!(
                "no convergence within {} iterations (score max-norm {score_norm:.3e})",
                opts.max_iterations
            )));
        }
        info.iter_mut().for_each(|h| *h = 0.0);
        for i in 0..n {
            let wi = weights[i];
            if wi == 0.0 {
                continue;
            }
            let row = x.row(i);
            let p = probs[i];
            let s = wi * p * (1.0 - p);
            for a in 0..k {
                let ra = row[a] * s;
                for b in a..k {
                    info[a * k + b] += ra * row[b];
                }
            }
        }
        for a in 0..k {
            for b in 0..a {
                info[a * k + b] = info[b * k + a];
            }
        }
        let info_m = DMatrix::from_row_slice(k, k, &info);
        let chol = match Cholesky::new(info_m.clone()) {
            Some(c) => c,
            None => return Err(Error::Rank { rcond: 0.0 }),
        };
        let rcond = rcond_from_inverse(&info_m, &chol.inverse());
        if rcond < RCOND_MIN {
            return Err(Error::Rank { rcond });
        }
        let step = chol.solve(&DVector::from_column_slice(&score));

        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..=opts.damping {
            let candidate: Vec<f64> = theta
                .iter()
                .zip(step.iter())
                .map(|(t, d)| t + scale * d)
                .collect();
            score_at(&candidate, &mut cand, &mut cand_score);
            let cand_norm = max_abs(&cand_score);
            if cand_norm < score_norm {
                theta = candidate;
                std::mem::swap(&mut probs, &mut cand);
                std::mem::swap(&mut score, &mut cand_score);
                score_norm = cand_norm;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            return Err(Error::Separation(format!(
                "Newton step failed to reduce the score after {} halvings",
                opts.damping
            )));
        }
        check_separation(&probs)?;
        iterations += 1;
    }
    check_separation(&probs)?;

    Ok(LogisticFit {
        coef: theta,
        fitted: probs,
        iterations,
    })
}

/// Root and iteration count from `solve_estimating_equation`.
#[derive(Debug, Clone)]
pub struct RootSolve {
    pub root: Vec<f64>,
    pub iterations: u32,
}

/// Damped Newton on a general smooth vector score with caller-supplied exact
/// Jacobian. Convergence means max-norm of the score ≤ `opts.tolerance`;
/// a restart from the returned root therefore terminates without taking a
/// step. Step-halving is applied whenever the full Newton step fails to
/// reduce the score max-norm; if even the shortest Newton step stalls (this
/// happens for the indefinite-Jacobian systems), a Levenberg–Marquardt
/// direction −(JᵀJ + λI)⁻¹Jᵀg is tried at increasing ridge strengths before
/// giving up.
pub fn solve_estimating_equation<S, J>(
    score: S,
    jacobian: J,
    init: &[f64],
    opts: &SolveOptions,
) -> Result<RootSolve>
where
    S: Fn(&[f64]) -> Vec<f64>,
    J: Fn(&[f64]) -> DMatrix<f64>,
{
    let k = init.len();
    if k == 0 {
        return Err(Error::Invalid("empty parameter vector".into()));
    }
    let mut theta = init.to_vec();
    let mut g = score(&theta);
    if g.len() != k {
        return Err(Error::Invalid(format!(
            "score length {} does not match parameter length {k}",
            g.len()
        )));
    }
    let mut g_norm = max_abs(&g);
    let mut iterations = 0u32;

    while g_norm > opts.tolerance {
        if iterations >= opts.max_iterations {
            return Err(Error::Convergence {
                iterations,
                score_norm: g_norm,
            });
        }
        let jac = jacobian(&theta);
        if jac.nrows() != k || jac.ncols() != k {
            return Err(Error::Invalid(format!(
                "jacobian shape {}x{} does not match parameter length {k}",
                jac.nrows(),
                jac.ncols()
            )));
        }
        let inv = match jac.clone().try_inverse() {
            Some(inv) => inv,
            None => {
                return Err(Error::SingularJacobian {
                    iteration: iterations,
                    rcond: 0.0,
                })
            }
        };
        let rcond = rcond_from_inverse(&jac, &inv);
        if rcond < RCOND_MIN {
            return Err(Error::SingularJacobian {
                iteration: iterations,
                rcond,
            });
        }
        // Newton direction d = -J⁻¹ g.
        let d: Vec<f64> = (0..k)
            .map(|a| -(0..k).map(|b| inv[(a, b)] * g[b]).sum::<f64>())
            .collect();

        let mut accepted = try_step(&score, &mut theta, &mut g, &mut g_norm, &d, opts.damping);
        if !accepted {
            // Newton direction stalled. Fall back to Levenberg–Marquardt
            // directions on ½‖g‖², which descend whenever Jᵀg ≠ 0.
            let jtj = jac.transpose() * &jac;
            let jtg = jac.transpose() * DVector::from_column_slice(&g);
            let ridge_scale = (0..k).map(|a| jtj[(a, a)]).fold(0.0_f64, f64::max).max(1.0);
            for lambda_rel in [1e-6, 1e-3, 1.0, 1e3] {
                let mut damped = jtj.clone();
                for a in 0..k {
                    damped[(a, a)] += lambda_rel * ridge_scale;
                }
                let dir = match Cholesky::new(damped) {
                    Some(c) => c.solve(&jtg),
                    None => continue,
                };
                let d_lm: Vec<f64> = (0..k).map(|a| -dir[a]).collect();
                if try_step(&score, &mut theta, &mut g, &mut g_norm, &d_lm, opts.damping) {
                    accepted = true;
                    break;
                }
            }
        }
        if !accepted {
            return Err(Error::Convergence {
                iterations,
                score_norm: g_norm,
            });
        }
        iterations += 1;
    }

    Ok(RootSolve {
        root: theta,
        iterations,
    })
}

/// Backtracking line search along `d`: accepts the first halved step that
/// reduces the score max-norm, updating the iterate in place.
fn try_step<S>(
    score: &S,
    theta: &mut Vec<f64>,
    g: &mut Vec<f64>,
    g_norm: &mut f64,
    d: &[f64],
    damping: u32,
) -> bool
where
    S: Fn(&[f64]) -> Vec<f64>,
{
    let mut scale = 1.0;
    for _ in 0..=damping {
        let candidate: Vec<f64> = theta.iter().zip(d).map(|(t, s)| t + scale * s).collect();
        let g_cand = score(&candidate);
        let cand_norm = max_abs(&g_cand);
        if cand_norm < *g_norm {
            *theta = candidate;
            *g = g_cand;
            *g_norm = cand_norm;
            return true;
        }
        scale *= 0.5;
    }
    false
}

/// 1-norm reciprocal condition estimate given a matrix and its inverse.
fn rcond_from_inverse(m: &DMatrix<f64>, inv: &DMatrix<f64>) -> f64 {
    let n1 = norm1(m);
    let n1_inv = norm1(inv);
    if n1 == 0.0 || n1_inv == 0.0 || !n1.is_finite() || !n1_inv.is_finite() {
        return 0.0;
    }
    1.0 / (n1 * n1_inv)
}

fn norm1(m: &DMatrix<f64>) -> f64 {
    (0..m.ncols())
        .map(|j| (0..m.nrows()).map(|i| m[(i, j)].abs()).sum::<f64>())
        .fold(0.0_f64, f64::max)
}
