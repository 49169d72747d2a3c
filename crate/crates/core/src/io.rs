//! CSV input in the calibration (`score,risk[,weight]`), test
//! (`score[,weight]`) and feature-matrix layouts. A header row is required;
//! columns are matched by name and may appear in any order.

use std::io::Read;

use crate::error::{Result, ScoreError};
use crate::types::{validate_calib, validate_test_point, CalibSample, TestPoint};

struct Table {
    header: Vec<String>,
    /// `(line, fields)` per record; lines are 1-based and count the header.
    rows: Vec<(u64, Vec<String>)>,
}

fn read_table<R: Read>(reader: R) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let csv_err = |e: csv::Error| {
        let line = e.position().map_or(0, |p| p.line());
        ScoreError::Csv {
            line,
            message: e.to_string(),
        }
    };
    let header: Vec<String> = rdr
        .headers()
        .map_err(csv_err)?
        .iter()
        .map(|h| h.to_ascii_lowercase())
        .collect();
    if header.iter().all(|h| h.is_empty()) {
        return Err(ScoreError::Csv {
            line: 1,
            message: "missing header row".into(),
        });
    }
    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(csv_err)?;
        let line = record.position().map_or(0, |p| p.line());
        rows.push((line, record.iter().map(str::to_string).collect()));
    }
    Ok(Table { header, rows })
}

impl Table {
    fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    fn require(&self, name: &str) -> Result<usize> {
        self.column(name).ok_or_else(|| ScoreError::Csv {
            line: 1,
            message: format!("missing column `{name}`"),
        })
    }

    fn number(&self, line: u64, fields: &[String], col: usize) -> Result<f64> {
        let raw = &fields[col];
        raw.parse::<f64>().map_err(|_| ScoreError::Csv {
            line,
            message: format!(
                "column `{}`: cannot parse {raw:?} as a number",
                self.header[col]
            ),
        })
    }
}

/// Wraps a validation error with the offending line.
fn at_line(line: u64, e: ScoreError) -> ScoreError {
    ScoreError::Csv {
        line,
        message: e.to_string(),
    }
}

/// Reads `score,risk[,weight]`. A missing weight column means unit weights.
pub fn read_calibration<R: Read>(reader: R) -> Result<Vec<CalibSample>> {
    let t = read_table(reader)?;
    let (s, r, w) = (t.require("score")?, t.require("risk")?, t.column("weight"));
    let mut out = Vec::with_capacity(t.rows.len());
    for (line, fields) in &t.rows {
        let weight = match w {
            Some(c) => t.number(*line, fields, c)?,
            None => 1.0,
        };
        let sample = CalibSample::weighted(
            t.number(*line, fields, s)?,
            t.number(*line, fields, r)?,
            weight,
        );
        validate_calib(std::slice::from_ref(&sample)).map_err(|e| at_line(*line, e))?;
        out.push(sample);
    }
    if out.is_empty() {
        return Err(ScoreError::EmptyCalibration);
    }
    Ok(out)
}

/// Reads `score[,weight]`.
pub fn read_tests<R: Read>(reader: R) -> Result<Vec<TestPoint>> {
    let t = read_table(reader)?;
    let (s, w) = (t.require("score")?, t.column("weight"));
    let mut out = Vec::with_capacity(t.rows.len());
    for (line, fields) in &t.rows {
        let weight = match w {
            Some(c) => t.number(*line, fields, c)?,
            None => 1.0,
        };
        let point = TestPoint::weighted(t.number(*line, fields, s)?, weight);
        validate_test_point(0, &point).map_err(|e| at_line(*line, e))?;
        out.push(point);
    }
    if out.is_empty() {
        return Err(ScoreError::EmptyTest);
    }
    Ok(out)
}

/// Whether a header names a weight column.
pub fn has_weight_column<R: Read>(reader: R) -> Result<bool> {
    Ok(read_table(reader)?.column("weight").is_some())
}

/// Reads an all-numeric feature matrix; returns the header and the rows.
pub fn read_features<R: Read>(reader: R) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let t = read_table(reader)?;
    let mut rows = Vec::with_capacity(t.rows.len());
    for (line, fields) in &t.rows {
        let row = (0..fields.len())
            .map(|c| t.number(*line, fields, c))
            .collect::<Result<Vec<f64>>>()?;
        if let Some(c) = row.iter().position(|v| !v.is_finite()) {
            return Err(ScoreError::Csv {
                line: *line,
                message: format!("column `{}`: value is not finite", t.header[c]),
            });
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(ScoreError::EmptyInput);
    }
    Ok((t.header, rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_calibration_with_and_without_weights() {
        let c = read_calibration("score,risk\n0.1,0.2\n0.5,1\n".as_bytes()).unwrap();
        assert_eq!(
            c,
            vec![CalibSample::new(0.1, 0.2), CalibSample::new(0.5, 1.0)]
        );
        let c = read_calibration("risk,weight,score\n0.2,3,0.1\n".as_bytes()).unwrap();
        assert_eq!(c, vec![CalibSample::weighted(0.1, 0.2, 3.0)]);
    }

    #[test]
    fn reports_line_numbers() {
        let err = read_calibration("score,risk\n0.1,0.2\n0.3,1.5\n".as_bytes()).unwrap_err();
        assert!(matches!(err, ScoreError::Csv { line: 3, .. }), "{err:?}");
        let err = read_tests("score\n0.1\nabc\n".as_bytes()).unwrap_err();
        match err {
            ScoreError::Csv { line, message } => {
                assert_eq!(line, 3);
                assert!(message.contains("score"));
            }
            other => panic!("{other:?}"),
        }
        let err = read_calibration("score\n0.1\n".as_bytes()).unwrap_err();
        assert!(
            matches!(err, ScoreError::Csv { line: 1, ref message } if message.contains("risk"))
        );
        let err = read_tests("score,weight\n0.1,0\n".as_bytes()).unwrap_err();
        assert!(matches!(err, ScoreError::Csv { line: 2, .. }));
    }

    #[test]
    fn empty_files_are_rejected() {
        assert_eq!(
            read_calibration("score,risk\n".as_bytes()),
            Err(ScoreError::EmptyCalibration)
        );
        assert_eq!(read_tests("score\n".as_bytes()), Err(ScoreError::EmptyTest));
        assert!(read_features("".as_bytes()).is_err());
    }

    #[test]
    fn reads_features() {
        let (h, rows) = read_features("a,b\n1,2\n3,4\n".as_bytes()).unwrap();
        assert_eq!(h, vec!["a", "b"]);
        assert_eq!(rows, vec![vec![1.0, 2.0], vec![3.0, 4.0]]);
        let err = read_features("a,b\n1,2\n3,x\n".as_bytes()).unwrap_err();
        assert!(matches!(err, ScoreError::Csv { line: 3, ref message } if message.contains('b')));
    }
}
