//! Mode dispatch. Each mode builds its whole output as a string and writes
//! it to `--out` or stdout in one step, so reruns with the same seed produce
//! byte-identical files.

use causalmex::estimators::{estimate_all, Method, SpecBundle};
use causalmex::glm::SolveOptions;
use causalmex::inference::bootstrap_all;
use causalmex::models::{Dataset, ModelSpec};
use causalmex::simulation::{
    ipw_scenarios, run_scenario_grid, tr_scenarios, true_tau, DgpConfig, ScenarioGrid,
    TRUE_TAU_ORDER,
};

use crate::config::{Args, CliError, Grid, Mode, RunConfig, Shape};
use crate::data::{load_csv, write_csv};
use crate::report::{format_error_record, format_metrics, format_report, MethodOutcome};
use crate::synth;

/// Parses, validates, and executes one invocation.
pub fn run(args: &Args) -> Result<(), CliError> {
    let cfg = RunConfig::resolve(args)?;
    match cfg.mode {
        Mode::Simulate => {
            let text = simulate_csv(&cfg)?;
            write_output(&cfg, &text)
        }
        Mode::Estimate => {
            let (text, verdict) = estimate_report(&cfg)?;
            write_output(&cfg, &text)?;
            verdict
        }
        Mode::Bench => {
            let text = bench_table(&cfg)?;
            write_output(&cfg, &text)
        }
    }
}

fn write_output(cfg: &RunConfig, text: &str) -> Result<(), CliError> {
    match &cfg.out {
        Some(path) => std::fs::write(path, text)
            .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn simulate_csv(cfg: &RunConfig) -> Result<String, CliError> {
    let (data, covariates, exposure, outcome) = match cfg.shape {
        Shape::Dgp => (
            synth::dgp_shaped(cfg.n_rows, cfg.seed)?,
            synth::DGP_COVARIATES,
            synth::DGP_EXPOSURE,
            synth::DGP_OUTCOME,
        ),
        // the cohort's size and missing count are part of its shape
        Shape::Covid => (
            synth::covid_shaped(cfg.seed),
            synth::COVID_COVARIATES,
            synth::COVID_EXPOSURE,
            synth::COVID_OUTCOME,
        ),
    };
    let names: Vec<String> = covariates.iter().map(|s| s.to_string()).collect();
    let marker = cfg
        .missing_markers
        .iter()
        .find(|m| !m.is_empty())
        .cloned()
        .unwrap_or_else(|| "NA".into());
    let mut buf = Vec::new();
    write_csv(&mut buf, &data, exposure, outcome, &names, &marker)?;
    Ok(String::from_utf8(buf).expect("CSV output is UTF-8"))
}

/// Model specs from the configured covariate subsets (full list when a
/// subset was not given).
fn bundle_from(cfg: &RunConfig) -> SpecBundle {
    let imputation = match &cfg.imputation_covariates {
        Some(None) => None,
        Some(Some(sub)) => Some(ModelSpec::imputation(cfg.covariate_indices(Some(sub)))),
        None => Some(ModelSpec::imputation(cfg.covariate_indices(None))),
    };
    SpecBundle {
        missingness: ModelSpec::missingness(
            cfg.covariate_indices(cfg.missingness_covariates.as_ref()),
        ),
        imputation,
        propensity: ModelSpec::propensity(
            cfg.covariate_indices(cfg.propensity_covariates.as_ref()),
        ),
        outcome: ModelSpec::outcome(cfg.covariate_indices(cfg.outcome_covariates.as_ref())),
        use_bayes_fallback: cfg.bayes_fallback,
    }
}

/// Runs the requested estimators and bootstraps the ones whose point estimate
/// exists. The text is always a complete report; the verdict is an error only
/// when no method produced anything.
fn estimate_report(cfg: &RunConfig) -> Result<(String, Result<(), CliError>), CliError> {
    let path = cfg.data.as_ref().expect("validated: estimate mode has data");
    let data = load_csv(
        path,
        &cfg.exposure_col,
        &cfg.outcome_col,
        &cfg.covariates,
        &cfg.missing_markers,
    )?;
    let bundle = bundle_from(cfg);
    let methods = cfg.estimate_methods();
    let outcomes = estimate_outcomes(&data, &bundle, &methods, cfg.b, cfg.seed);

    if outcomes.iter().all(|o| o.estimate.is_err()) {
        let detail = outcomes
            .iter()
            .map(|o| {
                let err = o.estimate.as_ref().err().map_or_else(String::new, |e| e.to_string());
                format!("{}: {err}", o.method)
            })
            .collect::<Vec<_>>()
            .join("; ");
        let message = format!("no requested method produced an estimate ({detail})");
        return Ok((
            format_error_record("estimate", &message),
            Err(CliError::Numeric(message)),
        ));
    }
    Ok((format_report(&data, &outcomes), Ok(())))
}

fn bench_table(cfg: &RunConfig) -> Result<String, CliError> {
    let mut scenarios = match cfg.grid {
        Grid::Ipw => ipw_scenarios(),
        Grid::Tr => tr_scenarios(),
    };
    if let Some(wanted) = &cfg.scenarios {
        let available: Vec<String> = scenarios.iter().map(|(l, _)| l.clone()).collect();
        for w in wanted {
            if !available.contains(w) {
                return Err(CliError::Usage(format!(
                    "unknown scenario '{w}' for the {:?} grid; available: {}",
                    cfg.grid,
                    available.join(", ")
                )));
            }
        }
        scenarios.retain(|(l, _)| wanted.contains(l));
    }

    let dgp = DgpConfig {
        n: cfg.n_rows,
        seed: cfg.seed,
        ..DgpConfig::default()
    };
    let grid = ScenarioGrid {
        scenarios,
        methods: cfg.bench_methods(),
        reps: cfg.n_reps,
        bootstrap_b: cfg.b,
    };
    let tau_true = true_tau(&dgp.coef_outcome, TRUE_TAU_ORDER)
        .map_err(|e| CliError::Numeric(e.to_string()))?;
    let rows = run_scenario_grid(&dgp, &grid).map_err(|e| CliError::Numeric(e.to_string()))?;
    Ok(format_metrics(tau_true, rows.as_slice()))
}

/// Shared by the integration tests: an estimate run against an in-memory
/// dataset, bypassing the CSV layer.
pub fn estimate_outcomes(
    data: &Dataset,
    bundle: &SpecBundle,
    methods: &[Method],
    b: usize,
    seed: u64,
) -> Vec<MethodOutcome> {
    let opts = SolveOptions::default();
    let estimates = estimate_all(data, bundle, methods, &opts, seed);
    let ok_methods: Vec<Method> = estimates
        .iter()
        .filter(|(_, r)| r.is_ok())
        .map(|(m, _)| *m)
        .collect();
    let mut boots: Vec<Option<causalmex::Result<causalmex::inference::BootstrapResult>>> =
        if ok_methods.is_empty() {
            Vec::new()
        } else {
            bootstrap_all(data, bundle, &ok_methods, b, seed, &opts)
                .into_iter()
                .map(|(_, r)| Some(r))
                .collect()
        };
    estimates
        .into_iter()
        .map(|(method, estimate)| {
            let bootstrap = ok_methods
                .iter()
                .position(|m| *m == method)
                .and_then(|ix| boots[ix].take());
            MethodOutcome {
                method,
                estimate,
                bootstrap,
            }
        })
        .collect()
}
