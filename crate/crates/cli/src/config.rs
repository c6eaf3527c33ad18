//! Run configuration: command-line flags layered over an optional plain-text
//! config file. Every file key has a flag of the same name; flags win.
//!
//! Config file format: one `key = value` per line, `#` starts a comment,
//! blank lines ignored. Keys: `mode`, `data`, `exposure_col`, `outcome_col`,
//! `covariates` (comma-separated), `missing_markers` (comma-separated, may
//! include the empty string), `method` (comma-separated), `B`, `N`, `n_rows`,
//! `seed`, `bayes_fallback`, `out`, `grid`, `scenarios` (comma-separated),
//! `shape`, and the per-model covariate subsets `missingness_covariates`,
//! `imputation_covariates` (or `none` to drop the imputation model),
//! `propensity_covariates`, `outcome_covariates`.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use causalmex::estimators::Method;
use clap::Parser;

/// Exit taxonomy: 1 usage/configuration, 2 data, 3 numerical failure.
#[derive(Debug, Clone, PartialEq)]
pub enum CliError {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Data(m) => write!(f, "{m}"),
            CliError::Numeric(m) => write!(f, "{m}"),
        }
    }
}

impl std::error::Error for CliError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Mode {
    /// Write a synthetic dataset as CSV
    Simulate,
    /// Estimate the causal odds ratio from a CSV file
    Estimate,
    /// Run a scenario-grid replication study
    Bench,
}

impl FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "simulate" => Ok(Mode::Simulate),
            "estimate" => Ok(Mode::Estimate),
            "bench" => Ok(Mode::Bench),
            other => Err(format!("unknown mode '{other}' (simulate, estimate, bench)")),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Simulate => "simulate",
            Mode::Estimate => "estimate",
            Mode::Bench => "bench",
        })
    }
}

/// Synthetic dataset families for `simulate`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    /// Three standard-normal covariates, the simulation-study process
    Dgp,
    /// A 927-row epidemiological shape (cvd/death/age_z/sex/diabetes)
    Covid,
}

impl FromStr for Shape {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "dgp" => Ok(Shape::Dgp),
            "covid" => Ok(Shape::Covid),
            other => Err(format!("unknown shape '{other}' (dgp, covid)")),
        }
    }
}

/// Benchmark scenario families.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Grid {
    Ipw,
    Tr,
}

impl FromStr for Grid {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "ipw" => Ok(Grid::Ipw),
            "tr" => Ok(Grid::Tr),
            other => Err(format!("unknown grid '{other}' (ipw, tr)")),
        }
    }
}

#[derive(Parser, Debug, Default)]
#[command(name = "causalmex", version, about = "Causal odds-ratio estimation with a missing-at-random binary exposure")]
pub struct Args {
    /// Plain-text `key = value` config file; flags override its values
    #[arg(long)]
    pub config: Option<PathBuf>,

    /// simulate | estimate | bench
    #[arg(long)]
    pub mode: Option<String>,

    /// Input CSV (estimate mode only)
    #[arg(long)]
    pub data: Option<PathBuf>,

    /// Column holding the possibly-missing binary exposure
    #[arg(long)]
    pub exposure_col: Option<String>,

    /// Column holding the binary outcome
    #[arg(long)]
    pub outcome_col: Option<String>,

    /// Comma-separated covariate columns, in model order
    #[arg(long, value_delimiter = ',')]
    pub covariates: Option<Vec<String>>,

    /// Cell values marking a missing exposure (default: "NA" and empty)
    #[arg(long, value_delimiter = ',')]
    pub missing_markers: Option<Vec<String>>,

    /// Estimators to run, comma separated (ipw-ipw, ipw-dr, ipw-wee, dr-si,
    /// dr-mice, tr-aipw, tr-wee); default: all seven
    #[arg(long, value_delimiter = ',')]
    pub method: Option<Vec<String>>,

    /// Bootstrap replicates
    #[arg(long = "B")]
    pub b: Option<usize>,

    /// Replications per scenario (bench mode)
    #[arg(long = "N")]
    pub n_reps: Option<usize>,

    /// Rows per generated dataset (simulate and bench modes)
    #[arg(long)]
    pub n_rows: Option<usize>,

    /// Master seed for all randomness
    #[arg(long)]
    pub seed: Option<u64>,

    /// Reconstruct imputation probabilities by Bayes' rule inside the
    /// triple-robust fits
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub bayes_fallback: Option<bool>,

    /// Output path (report, metrics table, or generated CSV); stdout if absent
    #[arg(long)]
    pub out: Option<PathBuf>,

    /// Scenario family for bench mode: ipw | tr
    #[arg(long)]
    pub grid: Option<String>,

    /// Restrict bench mode to these scenario labels (comma separated)
    #[arg(long, value_delimiter = ',')]
    pub scenarios: Option<Vec<String>>,

    /// Dataset family for simulate mode: dgp | covid
    #[arg(long)]
    pub shape: Option<String>,
}

/// Fully resolved run configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub mode: Mode,
    pub data: Option<PathBuf>,
    pub exposure_col: String,
    pub outcome_col: String,
    pub covariates: Vec<String>,
    pub missing_markers: Vec<String>,
    /// `None` = every estimator in estimate mode, the grid's own family in
    /// bench mode.
    pub methods: Option<Vec<Method>>,
    pub b: usize,
    pub n_reps: usize,
    pub n_rows: usize,
    pub seed: u64,
    pub bayes_fallback: bool,
    pub out: Option<PathBuf>,
    pub grid: Grid,
    pub scenarios: Option<Vec<String>>,
    pub shape: Shape,
    /// Per-model covariate subsets, as names drawn from `covariates`;
    /// `None` means the full list.
    pub missingness_covariates: Option<Vec<String>>,
    /// `Some(None)` = explicitly no imputation model.
    pub imputation_covariates: Option<Option<Vec<String>>>,
    pub propensity_covariates: Option<Vec<String>>,
    pub outcome_covariates: Option<Vec<String>>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Estimate,
            data: None,
            exposure_col: "exposure".into(),
            outcome_col: "outcome".into(),
            covariates: Vec::new(),
            missing_markers: vec!["NA".into(), String::new()],
            methods: None,
            b: 500,
            n_reps: 200,
            n_rows: 1000,
            seed: 1,
            bayes_fallback: false,
            out: None,
            grid: Grid::Ipw,
            scenarios: None,
            shape: Shape::Dgp,
            missingness_covariates: None,
            imputation_covariates: None,
            propensity_covariates: None,
            outcome_covariates: None,
        }
    }
}

fn parse_list(value: &str) -> Vec<String> {
    value.split(',').map(|s| s.trim().to_string()).collect()
}

fn parse_methods(names: &[String]) -> Result<Vec<Method>, CliError> {
    names
        .iter()
        .map(|n| n.parse::<Method>().map_err(|e| CliError::Usage(e.to_string())))
        .collect()
}

fn usage<T, E: fmt::Display>(key: &str, r: Result<T, E>) -> Result<T, CliError> {
    r.map_err(|e| CliError::Usage(format!("config key '{key}': {e}")))
}

impl RunConfig {
    /// Defaults, then the config file, then the flags.
    pub fn resolve(args: &Args) -> Result<Self, CliError> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &args.config {
            let text = std::fs::read_to_string(path).map_err(|e| {
                CliError::Usage(format!("cannot read config file {}: {e}", path.display()))
            })?;
            cfg.apply_file(&text)?;
        }
        cfg.apply_flags(args)?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply_file(&mut self, text: &str) -> Result<(), CliError> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::Usage(format!("config line {}: expected 'key = value'", lineno + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "mode" => self.mode = usage(key, value.parse())?,
                "data" => self.data = Some(PathBuf::from(value)),
                "exposure_col" => self.exposure_col = value.into(),
                "outcome_col" => self.outcome_col = value.into(),
                "covariates" => self.covariates = parse_list(value),
                "missing_markers" => self.missing_markers = parse_list(value),
                "method" => self.methods = Some(parse_methods(&parse_list(value))?),
                "B" => self.b = usage(key, value.parse())?,
                "N" => self.n_reps = usage(key, value.parse())?,
                "n_rows" => self.n_rows = usage(key, value.parse())?,
                "seed" => self.seed = usage(key, value.parse())?,
                "bayes_fallback" => self.bayes_fallback = usage(key, value.parse())?,
                "out" => self.out = Some(PathBuf::from(value)),
                "grid" => self.grid = usage(key, value.parse())?,
                "scenarios" => self.scenarios = Some(parse_list(value)),
                "shape" => self.shape = usage(key, value.parse())?,
                "missingness_covariates" => self.missingness_covariates = Some(parse_list(value)),
                "imputation_covariates" => {
                    self.imputation_covariates = Some(if value.eq_ignore_ascii_case("none") {
                        None
                    } else {
                        Some(parse_list(value))
                    })
                }
                "propensity_covariates" => self.propensity_covariates = Some(parse_list(value)),
                "outcome_covariates" => self.outcome_covariates = Some(parse_list(value)),
                other => {
                    return Err(CliError::Usage(format!(
                        "config line {}: unknown key '{other}'",
                        lineno + 1
                    )))
                }
            }
        }
        Ok(())
    }

    fn apply_flags(&mut self, args: &Args) -> Result<(), CliError> {
        if let Some(v) = &args.mode {
            self.mode = v.parse().map_err(CliError::Usage)?;
        }
        if let Some(v) = &args.data {
            self.data = Some(v.clone());
        }
        if let Some(v) = &args.exposure_col {
            self.exposure_col = v.clone();
        }
        if let Some(v) = &args.outcome_col {
            self.outcome_col = v.clone();
        }
        if let Some(v) = &args.covariates {
            self.covariates = v.clone();
        }
        if let Some(v) = &args.missing_markers {
            self.missing_markers = v.clone();
        }
        if let Some(v) = &args.method {
            self.methods = Some(parse_methods(v)?);
        }
        if let Some(v) = args.b {
            self.b = v;
        }
        if let Some(v) = args.n_reps {
            self.n_reps = v;
        }
        if let Some(v) = args.n_rows {
            self.n_rows = v;
        }
        if let Some(v) = args.seed {
            self.seed = v;
        }
        if let Some(v) = args.bayes_fallback {
            self.bayes_fallback = v;
        }
        if let Some(v) = &args.out {
            self.out = Some(v.clone());
        }
        if let Some(v) = &args.grid {
            self.grid = v.parse().map_err(CliError::Usage)?;
        }
        if let Some(v) = &args.scenarios {
            self.scenarios = Some(v.clone());
        }
        if let Some(v) = &args.shape {
            self.shape = v.parse().map_err(CliError::Usage)?;
        }
        Ok(())
    }

    fn validate(&self) -> Result<(), CliError> {
        match self.mode {
            Mode::Estimate => {
                if self.data.is_none() {
                    return Err(CliError::Usage("estimate mode requires --data".into()));
                }
                if self.covariates.is_empty() {
                    return Err(CliError::Usage("estimate mode requires --covariates".into()));
                }
                let mut names = vec![self.exposure_col.clone(), self.outcome_col.clone()];
                names.extend(self.covariates.iter().cloned());
                for (i, n) in names.iter().enumerate() {
                    if names[..i].contains(n) {
                        return Err(CliError::Usage(format!("column '{n}' used twice")));
                    }
                }
                if matches!(&self.methods, Some(m) if m.is_empty()) {
                    return Err(CliError::Usage("estimate mode requires at least one method".into()));
                }
                if self.b < 100 {
                    return Err(CliError::Usage(format!(
                        "bootstrap needs at least 100 replicates, got {}",
                        self.b
                    )));
                }
                let wants_imputation =
                    self.estimate_methods().iter().any(|m| m.needs_imputation());
                if wants_imputation && self.imputation_covariates == Some(None) {
                    return Err(CliError::Usage(
                        "the requested methods need an imputation model, but the config says 'imputation_covariates = none'"
                            .into(),
                    ));
                }
                for (key, subset) in [
                    ("missingness_covariates", &self.missingness_covariates),
                    ("imputation_covariates", &self.imputation_covariates.clone().flatten()),
                    ("propensity_covariates", &self.propensity_covariates),
                    ("outcome_covariates", &self.outcome_covariates),
                ] {
                    if let Some(sub) = subset {
                        for name in sub {
                            if !self.covariates.contains(name) {
                                return Err(CliError::Usage(format!(
                                    "{key}: '{name}' is not one of the covariates"
                                )));
                            }
                        }
                    }
                }
            }
            Mode::Simulate => {
                if self.data.is_some() {
                    return Err(CliError::Usage("simulate mode does not take --data".into()));
                }
                if self.out.is_none() {
                    return Err(CliError::Usage("simulate mode requires --out".into()));
                }
                if self.shape == Shape::Dgp && self.n_rows < 30 {
                    return Err(CliError::Usage("simulate needs n_rows >= 30".into()));
                }
            }
            Mode::Bench => {
                if self.data.is_some() {
                    return Err(CliError::Usage("bench mode does not take --data".into()));
                }
                if self.n_reps < 2 {
                    return Err(CliError::Usage("bench needs N >= 2 replications".into()));
                }
                if self.b < 100 {
                    return Err(CliError::Usage(format!(
                        "bootstrap needs at least 100 replicates, got {}",
                        self.b
                    )));
                }
                if self.n_rows < 30 {
                    return Err(CliError::Usage("bench needs n_rows >= 30".into()));
                }
            }
        }
        Ok(())
    }

    /// Estimators to run in estimate mode: the explicit list, or all seven.
    pub fn estimate_methods(&self) -> Vec<Method> {
        self.methods.clone().unwrap_or_else(|| Method::ALL.to_vec())
    }

    /// Estimators to run in bench mode: the explicit list, or the family the
    /// chosen grid compares.
    pub fn bench_methods(&self) -> Vec<Method> {
        self.methods.clone().unwrap_or_else(|| match self.grid {
            Grid::Ipw => vec![Method::IpwIpw, Method::IpwDr, Method::IpwWee],
            Grid::Tr => vec![Method::TrAipw, Method::TrWee, Method::DrSi, Method::DrMice],
        })
    }

    /// 1-based covariate indices for a subset given by name.
    pub fn covariate_indices(&self, subset: Option<&Vec<String>>) -> Vec<usize> {
        match subset {
            None => (1..=self.covariates.len()).collect(),
            Some(names) => names
                .iter()
                .map(|n| self.covariates.iter().position(|c| c == n).unwrap() + 1)
                .collect(),
        }
    }
}
