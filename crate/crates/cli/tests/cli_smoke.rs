//! End-to-end runs of the `causalmex` binary: exit codes, report schema,
//! CSV round trips, and seeded reproducibility.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, Output};

use causalmex_cli::report::{METHOD_FIELDS, METRICS_HEADER, REPORT_HEADER};

fn causalmex(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_causalmex"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout_of(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).expect("utf-8 stdout")
}

fn code_of(out: &Output) -> i32 {
    out.status.code().expect("process not killed by signal")
}

/// Splits a report into records: maps from key to value, in order.
fn parse_records(report: &str) -> Vec<BTreeMap<String, String>> {
    assert!(report.starts_with(REPORT_HEADER), "missing header: {report:.80}");
    report
        .split("\n\n")
        .skip(1) // the header block
        .filter(|block| !block.trim().is_empty())
        .map(|block| {
            block
                .trim()
                .lines()
                .map(|line| {
                    let (k, v) = line.split_once(" = ").unwrap_or_else(|| {
                        panic!("line {line:?} is not 'key = value'");
                    });
                    (k.to_string(), v.to_string())
                })
                .collect()
        })
        .collect()
}

fn simulate_covid(dir: &Path, seed: u64) -> std::path::PathBuf {
    let path = dir.join(format!("covid_{seed}.csv"));
    let out = causalmex(&[
        "--mode",
        "simulate",
        "--shape",
        "covid",
        "--seed",
        &seed.to_string(),
        "--out",
        path.to_str().unwrap(),
    ]);
    assert_eq!(code_of(&out), 0, "simulate failed: {}", String::from_utf8_lossy(&out.stderr));
    path
}

#[test]
fn help_and_version_exit_zero() {
    for flag in ["--help", "--version"] {
        let out = causalmex(&[flag]);
        assert_eq!(code_of(&out), 0);
        assert!(!stdout_of(&out).is_empty());
    }
}

#[test]
fn usage_errors_exit_one() {
    // unknown flag
    assert_eq!(code_of(&causalmex(&["--frobnicate"])), 1);
    // unknown mode
    assert_eq!(code_of(&causalmex(&["--mode", "dance"])), 1);
    // estimate without --data
    assert_eq!(code_of(&causalmex(&["--mode", "estimate", "--covariates", "x"])), 1);
    // unknown method
    let out = causalmex(&["--mode", "estimate", "--data", "x.csv", "--covariates", "x", "--method", "magic"]);
    assert_eq!(code_of(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("magic"));
}

#[test]
fn data_errors_exit_two_and_name_the_problem() {
    let dir = tempfile::tempdir().unwrap();

    // nonexistent file
    let out = causalmex(&[
        "--mode", "estimate", "--data", "/definitely/not/here.csv",
        "--exposure-col", "a", "--outcome-col", "y", "--covariates", "x1",
    ]);
    assert_eq!(code_of(&out), 2);

    // absent outcome column is named in the error
    let path = dir.path().join("three.csv");
    std::fs::write(&path, "x1,a,y\n0.5,1,0\n1.2,NA,1\n0.3,0,1\n").unwrap();
    let out = causalmex(&[
        "--mode", "estimate", "--data", path.to_str().unwrap(),
        "--exposure-col", "a", "--outcome-col", "death", "--covariates", "x1",
    ]);
    assert_eq!(code_of(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("death"));

    // non-binary outcome cell is located by row and column
    let path = dir.path().join("bad.csv");
    std::fs::write(&path, "x1,a,y\n0.5,1,0\n1.2,1,7\n").unwrap();
    let out = causalmex(&[
        "--mode", "estimate", "--data", path.to_str().unwrap(),
        "--exposure-col", "a", "--outcome-col", "y", "--covariates", "x1",
    ]);
    assert_eq!(code_of(&out), 2);
    let err = String::from_utf8_lossy(&out.stderr).to_string();
    assert!(err.contains("row 2") && err.contains("'y'"), "{err}");
}

#[test]
fn numerical_failure_exits_three_with_an_error_record() {
    let dir = tempfile::tempdir().unwrap();
    // three rows cannot support any of the fits
    let path = dir.path().join("tiny.csv");
    std::fs::write(&path, "x1,a,y\n0.5,1,0\n1.2,NA,1\n0.3,0,1\n").unwrap();
    let out = causalmex(&[
        "--mode", "estimate", "--data", path.to_str().unwrap(),
        "--exposure-col", "a", "--outcome-col", "y", "--covariates", "x1",
        "--method", "ipw-wee",
    ]);
    assert_eq!(code_of(&out), 3);
    let records = parse_records(&stdout_of(&out));
    assert_eq!(records.len(), 1);
    assert_eq!(records[0]["record"], "error");
    assert_eq!(records[0]["mode"], "estimate");
    assert!(!records[0]["message"].is_empty());
}

#[test]
fn covid_estimate_report_has_a_stable_schema() {
    let dir = tempfile::tempdir().unwrap();
    let csv = simulate_covid(dir.path(), 42);

    let out = causalmex(&[
        "--mode", "estimate", "--data", csv.to_str().unwrap(),
        "--exposure-col", "cvd", "--outcome-col", "death",
        "--covariates", "age_z,sex,diabetes",
        "--B", "100", "--seed", "5",
    ]);
    assert_eq!(code_of(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let records = parse_records(&stdout_of(&out));

    // dataset record first, with the cohort's fixed shape
    assert_eq!(records[0]["record"], "dataset");
    assert_eq!(records[0]["n"], "927");
    assert_eq!(records[0]["n_missing"], "162");

    // one record per method, every record carrying the same field set
    let methods: Vec<&BTreeMap<String, String>> =
        records.iter().filter(|r| r["record"] == "method").collect();
    assert_eq!(methods.len(), 7);
    for rec in &methods {
        let mut keys: Vec<&str> = rec.keys().map(String::as_str).collect();
        keys.sort_unstable();
        let mut expected: Vec<&str> = METHOD_FIELDS.to_vec();
        expected.sort_unstable();
        assert_eq!(keys, expected, "schema drift in {:?}", rec.get("method"));
        assert_eq!(rec["status"], "ok");
        // point estimate and percentile interval are finite and ordered
        let tau: f64 = rec["tau"].parse().unwrap();
        let lo: f64 = rec["ci_lower"].parse().unwrap();
        let hi: f64 = rec["ci_upper"].parse().unwrap();
        assert!(tau.is_finite() && tau > 0.0);
        assert!(lo <= hi, "{:?}", rec.get("method"));
        assert!(rec["bse"].parse::<f64>().unwrap() > 0.0);
    }
    // the MICE decomposition shows up only for DR-MICE
    for rec in &methods {
        if rec["method"] == "DR-MICE" {
            assert_eq!(rec["mice_m"], "10");
            assert!(rec["mice_total_log_or"].parse::<f64>().unwrap() > 0.0);
        } else {
            assert_eq!(rec["mice_m"], "NA");
        }
    }
}

#[test]
fn simulated_csv_round_trips_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("dgp.csv");
    let out = causalmex(&[
        "--mode", "simulate", "--shape", "dgp", "--n-rows", "80",
        "--seed", "9", "--out", path.to_str().unwrap(),
    ]);
    assert_eq!(code_of(&out), 0);

    let original = std::fs::read_to_string(&path).unwrap();
    let names: Vec<String> = ["x1", "x2", "x3"].iter().map(|s| s.to_string()).collect();
    let markers = vec!["NA".to_string(), String::new()];
    let data = causalmex_cli::data::load_csv(&path, "a", "y", &names, &markers).unwrap();
    let mut rewritten = Vec::new();
    causalmex_cli::data::write_csv(&mut rewritten, &data, "a", "y", &names, "NA").unwrap();
    assert_eq!(original, String::from_utf8(rewritten).unwrap());
}

#[test]
fn covid_cohorts_are_seed_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = std::fs::read(simulate_covid(dir.path(), 3)).unwrap();
    let b_path = dir.path().join("again.csv");
    let out = causalmex(&[
        "--mode", "simulate", "--shape", "covid", "--seed", "3",
        "--out", b_path.to_str().unwrap(),
    ]);
    assert_eq!(code_of(&out), 0);
    assert_eq!(a, std::fs::read(b_path).unwrap());
}

#[test]
fn bench_table_is_byte_identical_across_reruns() {
    let run = |path: &Path| {
        let out = causalmex(&[
            "--mode", "bench", "--grid", "ipw", "--scenarios", "MS+PS+OR",
            "--method", "ipw-wee", "--N", "2", "--B", "100",
            "--n-rows", "300", "--seed", "17", "--out", path.to_str().unwrap(),
        ]);
        assert_eq!(code_of(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    };
    let dir = tempfile::tempdir().unwrap();
    let (p1, p2) = (dir.path().join("m1.tsv"), dir.path().join("m2.tsv"));
    run(&p1);
    run(&p2);
    let text = std::fs::read_to_string(&p1).unwrap();
    assert_eq!(text, std::fs::read_to_string(&p2).unwrap());

    // one scenario × one method under the versioned header
    assert!(text.starts_with(METRICS_HEADER));
    let rows: Vec<&str> = text.lines().skip(3).collect();
    assert_eq!(rows.len(), 1);
    assert!(rows[0].starts_with("MS+PS+OR\tIPW-WEE\t2\t"));
}

#[test]
fn bench_rejects_unknown_scenarios() {
    let out = causalmex(&["--mode", "bench", "--grid", "ipw", "--scenarios", "MS+PS+OR+IM"]);
    assert_eq!(code_of(&out), 1);
    // the error lists what would be accepted
    assert!(String::from_utf8_lossy(&out.stderr).contains("MS+PS+OR,"));
}

#[test]
fn config_file_drives_a_run_and_flags_override_it() {
    let dir = tempfile::tempdir().unwrap();
    let csv = simulate_covid(dir.path(), 8);
    let conf = dir.path().join("run.conf");
    std::fs::write(
        &conf,
        format!(
            "mode = estimate\ndata = {}\nexposure_col = cvd\noutcome_col = death\n\
             covariates = age_z, sex, diabetes\nmethod = tr-wee\nB = 100\nseed = 2\n\
             imputation_covariates = none # drop the imputation model\n",
            csv.display()
        ),
    )
    .unwrap();

    // TR-WEE needs an imputation model, so this configuration is an error
    let out = causalmex(&["--config", conf.to_str().unwrap()]);
    assert_eq!(code_of(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("imputation"));

    // overriding the method list on the command line makes the same file valid
    let out = causalmex(&["--config", conf.to_str().unwrap(), "--method", "ipw-ipw,ipw-dr,ipw-wee"]);
    assert_eq!(code_of(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let records = parse_records(&stdout_of(&out));
    let labels: Vec<&String> = records
        .iter()
        .filter(|r| r["record"] == "method")
        .map(|r| &r["method"])
        .collect();
    assert_eq!(labels, ["IPW-IPW", "IPW-DR", "IPW-WEE"]);

    // unknown config keys are rejected, naming the key
    std::fs::write(&conf, "mode = estimate\nfrobnicate = 1\n").unwrap();
    let out = causalmex(&["--config", conf.to_str().unwrap()]);
    assert_eq!(code_of(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("frobnicate"));
}

#[test]
fn estimates_on_a_seeded_benchmark_draw_are_finite_and_bracketed() {
    // one seeded draw from the benchmark process, analyzed like user data
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("draw.csv");
    let out = causalmex(&[
        "--mode", "simulate", "--shape", "dgp", "--n-rows", "1000",
        "--seed", "31", "--out", path.to_str().unwrap(),
    ]);
    assert_eq!(code_of(&out), 0);

    let out = causalmex(&[
        "--mode", "estimate", "--data", path.to_str().unwrap(),
        "--exposure-col", "a", "--outcome-col", "y", "--covariates", "x1,x2,x3",
        "--method", "ipw-wee,tr-wee", "--B", "100", "--seed", "12",
    ]);
    assert_eq!(code_of(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for rec in parse_records(&stdout_of(&out)) {
        if rec["record"] != "method" {
            continue;
        }
        assert_eq!(rec["status"], "ok");
        let tau: f64 = rec["tau"].parse().unwrap();
        let lo: f64 = rec["ci_lower"].parse().unwrap();
        let hi: f64 = rec["ci_upper"].parse().unwrap();
        // the draw comes from a process with a moderate positive effect;
        // the interval should land in a sane range around it
        assert!(tau > 1.0 && tau < 5.0, "tau = {tau}");
        assert!(lo < tau && tau < hi);
    }
}
