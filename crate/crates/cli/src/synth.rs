//! Synthetic datasets for `simulate` mode: the three-covariate process used
//! throughout the simulation benchmarks, and a fixed-size epidemiological
//! shape for smoke-testing a realistic analysis end to end.

use causalmex::models::Dataset;
use causalmex::simulation::{generate_dataset, DgpConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::config::CliError;

/// Column names for the benchmark process: covariates, exposure, outcome.
pub const DGP_COVARIATES: [&str; 3] = ["x1", "x2", "x3"];
pub const DGP_EXPOSURE: &str = "a";
pub const DGP_OUTCOME: &str = "y";

/// Column names for the epidemiological shape.
pub const COVID_COVARIATES: [&str; 3] = ["age_z", "sex", "diabetes"];
pub const COVID_EXPOSURE: &str = "cvd";
pub const COVID_OUTCOME: &str = "death";

/// Rows in the epidemiological shape.
pub const COVID_N: usize = 927;
/// Exactly this many exposure cells are blanked out.
pub const COVID_N_MISSING: usize = 162;

fn expit(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// The benchmark data-generating process at its default coefficients.
pub fn dgp_shaped(n: usize, seed: u64) -> Result<Dataset, CliError> {
    let cfg = DgpConfig {
        n,
        seed,
        ..DgpConfig::default()
    };
    generate_dataset(&cfg).map_err(|e| CliError::Numeric(e.to_string()))
}

/// A 927-patient cohort shaped like a hospital registry: standardized age,
/// sex, diabetes; cardiovascular disease as the exposure (recorded for only
/// part of the cohort) and in-hospital death as the outcome (marginal
/// mortality ≈ 24%). Missingness depends on age and the outcome, never on
/// the exposure itself, and hits exactly [`COVID_N_MISSING`] rows: each row
/// draws the key −ln(u)/p for its missingness probability p, and the
/// smallest keys are blanked (weighted sampling without replacement).
pub fn covid_shaped(seed: u64) -> Dataset {
    let n = COVID_N;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut covariates = Vec::with_capacity(n * 3);
    let mut cvd = Vec::with_capacity(n);
    let mut death = Vec::with_capacity(n);
    let mut keys = Vec::with_capacity(n);

    for _ in 0..n {
        let age_z: f64 = rng.sample(StandardNormal);
        let sex = f64::from(rng.gen::<f64>() < 0.5);
        let diabetes = f64::from(rng.gen::<f64>() < 0.3);
        covariates.extend_from_slice(&[age_z, sex, diabetes]);

        let p_cvd = expit(-1.0 + 0.8 * age_z + 0.3 * sex + 0.6 * diabetes);
        let a = f64::from(rng.gen::<f64>() < p_cvd);
        let p_death = expit(-1.9 + 0.9 * age_z + 0.4 * sex + 0.5 * diabetes + 0.8 * a);
        let y = f64::from(rng.gen::<f64>() < p_death);
        cvd.push(a);
        death.push(y);

        let p_miss = expit(-1.6 + 0.5 * age_z + 0.4 * y);
        let u: f64 = rng.gen();
        keys.push(-u.ln() / p_miss);
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| keys[i].partial_cmp(&keys[j]).unwrap());
    let mut missing = vec![false; n];
    for &i in &order[..COVID_N_MISSING] {
        missing[i] = true;
    }

    let exposure: Vec<Option<bool>> = (0..n)
        .map(|i| if missing[i] { None } else { Some(cvd[i] == 1.0) })
        .collect();
    Dataset::new(covariates, 3, exposure, death).expect("generated data is well formed")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn covid_shape_has_fixed_counts_and_plausible_rates() {
        let data = covid_shaped(7);
        assert_eq!(data.n(), COVID_N);
        assert_eq!(data.n_missing(), COVID_N_MISSING);
        let mortality = data.outcome().iter().sum::<f64>() / data.n() as f64;
        assert!((0.19..=0.29).contains(&mortality), "mortality {mortality}");
        // sex and diabetes are binary; age is continuous
        for i in 0..data.n() {
            assert!(data.covariate(i, 1) == 0.0 || data.covariate(i, 1) == 1.0);
            assert!(data.covariate(i, 2) == 0.0 || data.covariate(i, 2) == 1.0);
        }
        let (n1, n0) = data.complete_arm_counts();
        assert!(n1 >= 100 && n0 >= 100, "thin arms: {n1}, {n0}");
    }

    #[test]
    fn covid_missingness_tracks_death() {
        // the blanking leans on the outcome, so the missing rate among the
        // dead should exceed the rate among survivors
        let data = covid_shaped(11);
        let (mut miss_dead, mut dead, mut miss_alive, mut alive) = (0.0, 0.0, 0.0, 0.0);
        for i in 0..data.n() {
            if data.outcome()[i] == 1.0 {
                dead += 1.0;
                miss_dead += f64::from(data.is_missing(i));
            } else {
                alive += 1.0;
                miss_alive += f64::from(data.is_missing(i));
            }
        }
        assert!(miss_dead / dead > miss_alive / alive);
    }

    #[test]
    fn seeds_give_reproducible_and_distinct_cohorts() {
        let a = covid_shaped(3);
        let b = covid_shaped(3);
        let c = covid_shaped(4);
        assert_eq!(a.covariate_row(0), b.covariate_row(0));
        assert_eq!(a.n_missing(), b.n_missing());
        assert_ne!(a.covariate_row(0), c.covariate_row(0));
    }

    #[test]
    fn dgp_shape_matches_the_benchmark_process() {
        let data = dgp_shaped(5000, 1).unwrap();
        assert_eq!(data.p(), 3);
        // the benchmark process blanks just under half the exposures
        assert!((0.40..=0.55).contains(&data.missing_rate()));
    }
}
