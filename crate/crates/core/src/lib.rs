//! Causal odds-ratio estimation for a binary outcome under a binary exposure
//! that is missing at random (MAR given covariates and outcome).
//!
//! The crate provides:
//! - weighted logistic fitting and a damped-Newton estimating-equation solver
//!   ([`glm`]),
//! - the four nuisance models (missingness, imputation, propensity, outcome)
//!   with deliberate-misspecification controls and a Bayes-rule fallback for
//!   the imputation probabilities ([`models`]),
//! - seven estimators of the causal odds ratio — IPW-IPW, IPW-DR, IPW-WEE,
//!   TR-AIPW, TR-WEE, DR-SI, DR-MICE ([`estimators`]),
//! - nonparametric bootstrap percentile intervals and a delta-method variance
//!   for log odds ratios ([`inference`]),
//! - a seeded data-generating process, a ground-truth odds ratio via
//!   quadrature, and a scenario-grid simulation harness ([`simulation`]).

pub mod error;
pub mod estimators;
pub mod glm;
pub mod inference;
pub mod models;
pub(crate) mod seed;
pub mod simulation;

pub use error::{Error, Result};
