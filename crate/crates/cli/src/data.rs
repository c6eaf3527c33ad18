//! CSV loading and writing. Loading is strict: every named column must
//! exist, outcomes must be exactly 0 or 1, covariates must be finite
//! numbers, and only the exposure column may carry a missing marker.

use std::io::Write;
use std::path::Path;

use causalmex::models::Dataset;

use crate::config::CliError;

/// Header positions of the analysis columns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnMap {
    pub exposure: usize,
    pub outcome: usize,
    pub covariates: Vec<usize>,
}

impl ColumnMap {
    /// Locates each named column in the header, reporting every absent name.
    pub fn resolve(
        header: &[String],
        exposure_col: &str,
        outcome_col: &str,
        covariate_cols: &[String],
    ) -> Result<Self, CliError> {
        let find = |name: &str| header.iter().position(|h| h == name);
        let mut absent: Vec<&str> = Vec::new();
        let exposure = find(exposure_col).unwrap_or_else(|| {
            absent.push(exposure_col);
            0
        });
        let outcome = find(outcome_col).unwrap_or_else(|| {
            absent.push(outcome_col);
            0
        });
        let mut covariates = Vec::with_capacity(covariate_cols.len());
        for c in covariate_cols {
            match find(c) {
                Some(ix) => covariates.push(ix),
                None => absent.push(c),
            }
        }
        if !absent.is_empty() {
            return Err(CliError::Data(format!(
                "column(s) not found in CSV header: {}",
                absent.join(", ")
            )));
        }
        Ok(ColumnMap {
            exposure,
            outcome,
            covariates,
        })
    }
}

fn cell_error(row: usize, column: &str, value: &str, expected: &str) -> CliError {
    CliError::Data(format!(
        "row {row}, column '{column}': got {value:?}, expected {expected}"
    ))
}

/// Reads a CSV file into a [`Dataset`]. `markers` are the exposure cell
/// values meaning "missing"; `row` in error messages counts data rows from 1.
pub fn load_csv(
    path: &Path,
    exposure_col: &str,
    outcome_col: &str,
    covariate_cols: &[String],
    markers: &[String],
) -> Result<Dataset, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(false)
        .from_path(path)
        .map_err(|e| CliError::Data(format!("cannot open {}: {e}", path.display())))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| CliError::Data(format!("cannot read CSV header: {e}")))?
        .iter()
        .map(|s| s.trim().to_string())
        .collect();
    let map = ColumnMap::resolve(&header, exposure_col, outcome_col, covariate_cols)?;

    let p = covariate_cols.len();
    let mut covariates: Vec<f64> = Vec::new();
    let mut exposure: Vec<Option<bool>> = Vec::new();
    let mut outcome: Vec<f64> = Vec::new();

    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| CliError::Data(format!("row {row}: {e}")))?;
        let cell = |ix: usize| record.get(ix).unwrap_or("").trim();

        let a_raw = cell(map.exposure);
        if markers.iter().any(|m| m == a_raw) {
            exposure.push(None);
        } else {
            match a_raw {
                "0" => exposure.push(Some(false)),
                "1" => exposure.push(Some(true)),
                other => {
                    return Err(cell_error(row, exposure_col, other, "0, 1, or a missing marker"))
                }
            }
        }

        let y_raw = cell(map.outcome);
        match y_raw {
            "0" => outcome.push(0.0),
            "1" => outcome.push(1.0),
            other => return Err(cell_error(row, outcome_col, other, "0 or 1")),
        }

        for (name, &ix) in covariate_cols.iter().zip(&map.covariates) {
            let raw = cell(ix);
            let v: f64 = raw
                .parse()
                .map_err(|_| cell_error(row, name, raw, "a number"))?;
            if !v.is_finite() {
                return Err(cell_error(row, name, raw, "a finite number"));
            }
            covariates.push(v);
        }
    }

    if exposure.is_empty() {
        return Err(CliError::Data(format!("{} has no data rows", path.display())));
    }
    Dataset::new(covariates, p, exposure, outcome).map_err(|e| CliError::Data(e.to_string()))
}

/// Writes a dataset as CSV: covariates first, then exposure, then outcome.
/// Exposures print as 0/1 (or `marker` when missing), outcomes as 0/1, and
/// covariates through `Display`, so a load/write/load round trip is
/// value-identical.
pub fn write_csv<W: Write>(
    w: &mut W,
    data: &Dataset,
    exposure_col: &str,
    outcome_col: &str,
    covariate_cols: &[String],
    marker: &str,
) -> Result<(), CliError> {
    let io_err = |e: std::io::Error| CliError::Data(format!("write failed: {e}"));
    let mut header: Vec<&str> = covariate_cols.iter().map(String::as_str).collect();
    header.push(exposure_col);
    header.push(outcome_col);
    writeln!(w, "{}", header.join(",")).map_err(io_err)?;
    for i in 0..data.n() {
        let mut fields: Vec<String> = data.covariate_row(i).iter().map(|v| format!("{v}")).collect();
        fields.push(match data.exposure(i) {
            None => marker.to_string(),
            Some(true) => "1".into(),
            Some(false) => "0".into(),
        });
        fields.push(format!("{}", data.outcome()[i] as u8));
        writeln!(w, "{}", fields.join(",")).map_err(io_err)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmpfile(name: &str, contents: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join(format!("causalmex-data-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join(name);
        let mut f = std::fs::File::create(&path).unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        path
    }

    fn cols(names: &[&str]) -> Vec<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn loads_markers_as_missing_exposure() {
        let path = tmpfile(
            "ok.csv",
            "x1,a,y\n0.5,1,0\n-1.25,NA,1\n2.0,,1\n0.0,0,0\n",
        );
        let data = load_csv(&path, "a", "y", &cols(&["x1"]), &["NA".into(), String::new()]).unwrap();
        assert_eq!(data.n(), 4);
        assert_eq!(data.n_missing(), 2);
        assert_eq!(data.exposure(0), Some(true));
        assert_eq!(data.exposure(1), None);
        assert_eq!(data.exposure(2), None);
        assert_eq!(data.covariate(1, 0), -1.25);
    }

    #[test]
    fn absent_columns_are_named_in_the_error() {
        let path = tmpfile("head.csv", "x1,a,y\n0.5,1,0\n");
        let err = load_csv(&path, "a", "death", &cols(&["x1", "age"]), &["NA".into()]).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, CliError::Data(_)));
        assert!(msg.contains("death") && msg.contains("age"), "{msg}");
    }

    #[test]
    fn bad_cells_are_located_by_row_and_column() {
        let path = tmpfile("bady.csv", "x1,a,y\n0.5,1,2\n");
        let msg = load_csv(&path, "a", "y", &cols(&["x1"]), &["NA".into()])
            .unwrap_err()
            .to_string();
        assert!(msg.contains("row 1") && msg.contains("'y'"), "{msg}");

        let path = tmpfile("badx.csv", "x1,a,y\n0.5,1,0\noops,0,1\n");
        let msg = load_csv(&path, "a", "y", &cols(&["x1"]), &["NA".into()])
            .unwrap_err()
            .to_string();
        assert!(msg.contains("row 2") && msg.contains("'x1'"), "{msg}");

        // a missing marker is only legal in the exposure column
        let path = tmpfile("badna.csv", "x1,a,y\nNA,1,0\n");
        let msg = load_csv(&path, "a", "y", &cols(&["x1"]), &["NA".into()])
            .unwrap_err()
            .to_string();
        assert!(msg.contains("'x1'"), "{msg}");
    }

    #[test]
    fn round_trip_is_value_identical() {
        let path = tmpfile(
            "rt.csv",
            "x1,x2,a,y\n0.1,-3.75,1,0\n1e-7,0.333333333333333314829616256247,NA,1\n2.5,4.0,0,1\n",
        );
        let names = cols(&["x1", "x2"]);
        let markers = vec!["NA".to_string()];
        let data = load_csv(&path, "a", "y", &names, &markers).unwrap();
        let mut buf = Vec::new();
        write_csv(&mut buf, &data, "a", "y", &names, "NA").unwrap();
        let path2 = tmpfile("rt2.csv", std::str::from_utf8(&buf).unwrap());
        let data2 = load_csv(&path2, "a", "y", &names, &markers).unwrap();
        assert_eq!(data.n(), data2.n());
        for i in 0..data.n() {
            assert_eq!(data.covariate_row(i), data2.covariate_row(i));
            assert_eq!(data.exposure(i), data2.exposure(i));
            assert_eq!(data.outcome()[i], data2.outcome()[i]);
        }
    }
}
