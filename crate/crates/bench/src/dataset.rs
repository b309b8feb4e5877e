//! Numeric CSV ingestion: features in all but the last column, target last.

use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{BenchError, Result};

fn parse_row(record: &csv::StringRecord) -> Option<Vec<f64>> {
    record.iter().map(|f| f.parse::<f64>().ok()).collect()
}

/// Reads `path`. A first row that does not parse as numbers is taken as a
/// header and skipped. Rows keep their file order.
pub fn load_dataset(path: &Path) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => BenchError::io(format!("opening {}", path.display()), io),
            other => BenchError::Parse { path: path.into(), line: 0, message: format!("{other:?}") },
        })?;
    let parse_err = |line: u64, message: String| BenchError::Parse { path: path.into(), line, message };
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = None;
    for (k, record) in reader.records().enumerate() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map_or(k as u64 + 1, |p| p.line());
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        let Some(values) = parse_row(&record) else {
            if k == 0 {
                continue;
            }
            let bad = record.iter().position(|f| f.parse::<f64>().is_err()).unwrap_or(0);
            return Err(parse_err(line, format!("column {}: {:?} is not a number", bad + 1, &record[bad])));
        };
        match width {
            None if values.len() < 2 => {
                return Err(parse_err(line, "need at least one feature column and a target column".into()));
            }
            None => width = Some(values.len()),
            Some(w) if w != values.len() => {
                return Err(parse_err(line, format!("expected {w} columns, found {}", values.len())));
            }
            Some(_) => {}
        }
        if let Some(column) = values.iter().position(|v| !v.is_finite()) {
            return Err(BenchError::NonFiniteValue { path: path.into(), line, column: column + 1 });
        }
        rows.push(values);
    }
    let Some(w) = width else {
        return Err(parse_err(0, "no data rows".into()));
    };
    let x = DMatrix::from_fn(rows.len(), w - 1, |i, j| rows[i][j]);
    let y = DVector::from_fn(rows.len(), |i, _| rows[i][w - 1]);
    Ok((x, y))
}
