//! JSON-lines metrics records and CSV result tables.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One evaluated run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsRecord {
    pub dataset: String,
    pub variant: String,
    /// Operator families of `A` and `B`, e.g. `fc-conv`.
    pub ops: String,
    pub input_len: usize,
    pub output_len: usize,
    pub seed: u64,
    pub split: String,
    pub mse: f64,
    pub mae: f64,
    pub n_windows: usize,
    pub param_count: usize,
    pub epoch_time_s: f64,
    pub config_hash: String,
}

impl MetricsRecord {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("record serializes")
    }

    /// The record with wall-clock fields zeroed, for reproducibility checks.
    pub fn without_wall_time(&self) -> Self {
        MetricsRecord {
            epoch_time_s: 0.0,
            ..self.clone()
        }
    }

    fn check(&self) -> std::result::Result<(), String> {
        for (name, v) in [
            ("mse", self.mse),
            ("mae", self.mae),
            ("epoch_time_s", self.epoch_time_s),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(format!("{name} = {v} is not a finite non-negative number"));
            }
        }
        if self.n_windows == 0 || self.param_count == 0 {
            return Err("n_windows and param_count must be positive".into());
        }
        Ok(())
    }
}

/// Validates every non-empty line; returns the number of records.
pub fn validate_metrics(text: &str) -> Result<usize> {
    let mut n = 0;
    for (k, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: MetricsRecord = serde_json::from_str(line)
            .map_err(|e| Error::Data(format!("metrics line {}: {e}", k + 1)))?;
        rec.check()
            .map_err(|e| Error::Data(format!("metrics line {}: {e}", k + 1)))?;
        n += 1;
    }
    if n == 0 {
        return Err(Error::Data("metrics file has no records".into()));
    }
    Ok(n)
}

pub const FAILED: &str = "FAILED";

/// `(mse, mae)` of one cell.
pub type MetricPair = (f64, f64);

/// A comparison table: one `mse` and one `mae` row per horizon, one column
/// per compared cell.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultTable {
    pub columns: Vec<String>,
    /// `(horizon, per-column (mse, mae) or None for a failed cell)`.
    pub rows: Vec<(usize, Vec<Option<MetricPair>>)>,
}

impl ResultTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("horizon,metric");
        for c in &self.columns {
            out.push(',');
            out.push_str(c);
        }
        out.push('\n');
        for (horizon, cells) in &self.rows {
            for (metric, pick) in [("mse", 0), ("mae", 1)] {
                write!(out, "{horizon},{metric}").expect("string write");
                for cell in cells {
                    match cell {
                        Some((mse, mae)) => {
                            write!(out, ",{:.6}", if pick == 0 { mse } else { mae })
                        }
                        None => write!(out, ",{FAILED}"),
                    }
                    .expect("string write");
                }
                out.push('\n');
            }
        }
        out
    }
}

/// Checks a table written by [`ResultTable::to_csv`]; returns the number of data rows.
pub fn validate_table(text: &str) -> Result<usize> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes());
    let headers = rdr
        .headers()
        .map_err(|e| Error::Data(format!("table header: {e}")))?
        .clone();
    if headers.len() < 3 || &headers[0] != "horizon" || &headers[1] != "metric" {
        return Err(Error::Data(
            "table header must start with horizon,metric and name at least one column".into(),
        ));
    }
    let mut n = 0;
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Data(format!("table row {}: {e}", k + 1)))?;
        rec[0]
            .parse::<usize>()
            .map_err(|_| Error::Data(format!("table row {}: bad horizon {:?}", k + 1, &rec[0])))?;
        if !matches!(&rec[1], "mse" | "mae") {
            return Err(Error::Data(format!(
                "table row {}: unknown metric {:?}",
                k + 1,
                &rec[1]
            )));
        }
        for cell in rec.iter().skip(2) {
            if cell != FAILED && !cell.parse::<f64>().is_ok_and(f64::is_finite) {
                return Err(Error::Data(format!(
                    "table row {}: bad value {cell:?}",
                    k + 1
                )));
            }
        }
        n += 1;
    }
    Ok(n)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record() -> MetricsRecord {
        MetricsRecord {
            dataset: "ili".into(),
            variant: "fv-mgnet".into(),
            ops: "fc-fc".into(),
            input_len: 60,
            output_len: 24,
            seed: 1,
            split: "test".into(),
            mse: 1.6,
            mae: 0.8,
            n_windows: 777,
            param_count: 12345,
            epoch_time_s: 0.25,
            config_hash: "ab".into(),
        }
    }

    #[test]
    fn record_round_trip_and_validation() {
        let line = record().to_line();
        let back: MetricsRecord = serde_json::from_str(&line).unwrap();
        assert_eq!(back, record());
        assert_eq!(validate_metrics(&format!("{line}\n{line}\n")).unwrap(), 2);
    }

    #[test]
    fn incomplete_record_rejected() {
        let mut v: serde_json::Value = serde_json::from_str(&record().to_line()).unwrap();
        v.as_object_mut().unwrap().remove("mae");
        assert!(validate_metrics(&v.to_string()).is_err());
        assert!(validate_metrics("{not json").is_err());
        assert!(validate_metrics("").is_err());
        let mut r = record();
        r.n_windows = 0;
        assert!(validate_metrics(&r.to_line()).is_err());
    }

    #[test]
    fn table_layout() {
        let t = ResultTable {
            columns: vec![
                "fv-mgnet".into(),
                "residual".into(),
                "backslash-mgnet".into(),
            ],
            rows: vec![(24, vec![Some((1.5, 0.75)), None, Some((2.0, 1.0))])],
        };
        let csv = t.to_csv();
        assert_eq!(
            csv,
            "horizon,metric,fv-mgnet,residual,backslash-mgnet\n24,mse,1.500000,FAILED,2.000000\n24,mae,0.750000,FAILED,1.000000\n"
        );
        assert_eq!(validate_table(&csv).unwrap(), 2);
        assert!(validate_table("horizon,metric,a\n24,mse,x\n").is_err());
        assert!(validate_table("a,b\n").is_err());
    }
}
