//! Line-oriented output formats. Reports are blank-line-separated records of
//! `key = value` pairs with a fixed field set per record type, so downstream
//! parsers never have to special-case a method or a failure. Bench metrics
//! are a tab-separated table. All floats print as `{:.6}`.

use causalmex::estimators::{EffectEstimate, Method};
use causalmex::inference::BootstrapResult;
use causalmex::models::Dataset;
use causalmex::simulation::MetricsRow;

/// First line of every `estimate` report.
pub const REPORT_HEADER: &str = "# causalmex-report v1";
/// First line of every `bench` metrics table.
pub const METRICS_HEADER: &str = "# causalmex-metrics v1";

/// Field names of a method record, in output order. Every record carries all
/// of them; inapplicable ones hold `NA`.
pub const METHOD_FIELDS: [&str; 19] = [
    "record",
    "method",
    "status",
    "error",
    "tau",
    "tau1",
    "tau0",
    "ci_lower",
    "ci_upper",
    "bse",
    "n_failed",
    "clamped_probabilities",
    "clamped_arms",
    "extreme_weights",
    "bayes_sweeps",
    "mice_m",
    "mice_within_log_or",
    "mice_between_log_or",
    "mice_total_log_or",
];

/// Everything one method produced: the point estimate and, when the point
/// estimate exists, its bootstrap.
pub struct MethodOutcome {
    pub method: Method,
    pub estimate: causalmex::Result<EffectEstimate>,
    pub bootstrap: Option<causalmex::Result<BootstrapResult>>,
}

fn push(lines: &mut Vec<String>, key: &str, value: String) {
    lines.push(format!("{key} = {value}"));
}

fn fnum(v: f64) -> String {
    format!("{v:.6}")
}

/// One quoted-free, single-line rendering of an error message.
fn flat(msg: &str) -> String {
    msg.replace(['\n', '\r'], " ")
}

/// Formats the full estimate report: a dataset record followed by one record
/// per requested method.
pub fn format_report(data: &Dataset, outcomes: &[MethodOutcome]) -> String {
    let mut lines = vec![REPORT_HEADER.to_string(), String::new()];

    let (n1, n0) = data.complete_arm_counts();
    push(&mut lines, "record", "dataset".into());
    push(&mut lines, "n", data.n().to_string());
    push(&mut lines, "n_missing", data.n_missing().to_string());
    push(&mut lines, "missing_rate", fnum(data.missing_rate()));
    push(&mut lines, "n_exposed_complete", n1.to_string());
    push(&mut lines, "n_unexposed_complete", n0.to_string());

    for out in outcomes {
        lines.push(String::new());
        lines.extend(method_record(out));
    }
    lines.push(String::new());
    lines.join("\n")
}

fn method_record(out: &MethodOutcome) -> Vec<String> {
    let na = || "NA".to_string();
    let mut lines = Vec::with_capacity(METHOD_FIELDS.len());
    push(&mut lines, "record", "method".into());
    push(&mut lines, "method", out.method.label().into());

    let mut error = na();
    let (status, est) = match &out.estimate {
        Ok(e) => ("ok", Some(e)),
        Err(e) => {
            error = flat(&e.to_string());
            ("failed", None)
        }
    };
    let boot = match (&est, &out.bootstrap) {
        (Some(_), Some(Ok(b))) => Some(b),
        (Some(_), Some(Err(e))) => {
            error = format!("bootstrap: {}", flat(&e.to_string()));
            None
        }
        _ => None,
    };
    push(&mut lines, "status", status.into());
    push(&mut lines, "error", error);
    push(&mut lines, "tau", est.map_or_else(na, |e| fnum(e.tau)));
    push(&mut lines, "tau1", est.map_or_else(na, |e| fnum(e.tau1)));
    push(&mut lines, "tau0", est.map_or_else(na, |e| fnum(e.tau0)));
    push(&mut lines, "ci_lower", boot.map_or_else(na, |b| fnum(b.ci_lower)));
    push(&mut lines, "ci_upper", boot.map_or_else(na, |b| fnum(b.ci_upper)));
    push(&mut lines, "bse", boot.map_or_else(na, |b| fnum(b.bse)));
    push(&mut lines, "n_failed", boot.map_or_else(na, |b| b.n_failed.to_string()));

    let diag = est.map(|e| &e.diagnostics);
    push(
        &mut lines,
        "clamped_probabilities",
        diag.map_or_else(na, |d| d.clamped_probabilities.to_string()),
    );
    push(&mut lines, "clamped_arms", diag.map_or_else(na, |d| d.clamped_arms.to_string()));
    push(
        &mut lines,
        "extreme_weights",
        diag.map_or_else(na, |d| d.extreme_weights.to_string()),
    );
    push(
        &mut lines,
        "bayes_sweeps",
        diag.and_then(|d| d.bayes_sweeps).map_or_else(na, |s| s.to_string()),
    );
    let mice = diag.and_then(|d| d.mice.as_ref());
    push(&mut lines, "mice_m", mice.map_or_else(na, |m| m.m.to_string()));
    push(&mut lines, "mice_within_log_or", mice.map_or_else(na, |m| fnum(m.within_log_or)));
    push(&mut lines, "mice_between_log_or", mice.map_or_else(na, |m| fnum(m.between_log_or)));
    push(&mut lines, "mice_total_log_or", mice.map_or_else(na, |m| fnum(m.total_log_or)));
    lines
}

/// Fatal failures still print a parseable record.
pub fn format_error_record(mode: &str, message: &str) -> String {
    [
        REPORT_HEADER.to_string(),
        String::new(),
        "record = error".to_string(),
        format!("mode = {mode}"),
        format!("message = {}", flat(message)),
        String::new(),
    ]
    .join("\n")
}

/// Formats scenario-grid results as a TSV table under [`METRICS_HEADER`].
pub fn format_metrics(tau_true: f64, rows: &[MetricsRow]) -> String {
    let mut out = String::new();
    out.push_str(METRICS_HEADER);
    out.push('\n');
    out.push_str(&format!("# tau_true = {}\n", fnum(tau_true)));
    out.push_str(
        "scenario\tmethod\treps_used\tbias\tbias_rate\tese\tmedian_bse\trmse\tcoverage\tn_failed\n",
    );
    for row in rows {
        let m = &row.metrics;
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            row.scenario,
            row.method.label(),
            m.reps_used,
            fnum(m.bias),
            fnum(m.bias_rate),
            fnum(m.ese),
            fnum(m.median_bse),
            fnum(m.rmse),
            fnum(m.coverage),
            m.n_failed,
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use causalmex::error::Error;

    fn keys_of(record: &str) -> Vec<String> {
        record
            .lines()
            .map(|l| l.split(" = ").next().unwrap().to_string())
            .collect()
    }

    #[test]
    fn method_records_share_one_field_set() {
        let ok = MethodOutcome {
            method: Method::IpwWee,
            estimate: Ok(EffectEstimate {
                method: Method::IpwWee,
                tau1: 0.7,
                tau0: 0.5,
                tau: (0.7 / 0.3) / (0.5 / 0.5),
                arm_coef: None,
                diagnostics: Default::default(),
            }),
            bootstrap: Some(Ok(BootstrapResult {
                replicates: vec![2.0, 2.2],
                ci_lower: 1.9,
                ci_upper: 2.4,
                bse: 0.1,
                n_failed: 3,
            })),
        };
        let failed = MethodOutcome {
            method: Method::TrWee,
            estimate: Err(Error::Invalid("boom\nsecond line".into())),
            bootstrap: None,
        };
        let ok_rec = method_record(&ok);
        let failed_rec = method_record(&failed);
        assert_eq!(keys_of(&ok_rec.join("\n")), METHOD_FIELDS.to_vec());
        assert_eq!(keys_of(&ok_rec.join("\n")), keys_of(&failed_rec.join("\n")));
        // multi-line error text is flattened so records stay line-oriented
        assert!(failed_rec.iter().any(|l| l == "error = invalid input: boom second line"));
        assert!(failed_rec.iter().any(|l| l == "status = failed"));
        assert!(failed_rec.iter().any(|l| l == "tau = NA"));
    }

    #[test]
    fn error_record_is_parseable_and_headed() {
        let text = format_error_record("estimate", "no method produced an estimate");
        assert!(text.starts_with(REPORT_HEADER));
        assert!(text.contains("record = error"));
        assert!(text.contains("mode = estimate"));
    }
}
