use std::io::Read;
use std::path::Path;

use super::Dataset;
use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub fn load_csv(path: impl AsRef<Path>, label_column: &str) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_csv(file, label_column)
}

/// Parses a headed CSV. Every column except `label_column` must be numeric
/// and is min-max scaled into [0, 1] (constant columns become 0). Labels
/// get dense ids in order of first appearance.
pub fn parse_csv<R: Read>(reader: R, label_column: &str) -> Result<Dataset> {
    let fmt = |detail: String| Error::Format { what: "CSV", detail };
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers().map_err(|e| fmt(e.to_string()))?.clone();
    let label_idx = headers
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| fmt(format!("missing label column {label_column:?}")))?;
    let feature_cols: Vec<usize> = (0..headers.len()).filter(|&c| c != label_idx).collect();

    let mut names: Vec<String> = Vec::new();
    let mut labels = Vec::new();
    let mut raw: Vec<f64> = Vec::new();
    for (line, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| fmt(e.to_string()))?;
        let name = record.get(label_idx).unwrap_or("").trim();
        let id = match names.iter().position(|n| n == name) {
            Some(id) => id,
            None => {
                names.push(name.to_string());
                names.len() - 1
            }
        };
        labels.push(id);
        for &c in &feature_cols {
            let cell = record.get(c).unwrap_or("").trim();
            let v: f64 = cell
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| fmt(format!("non-numeric cell {cell:?} in column {:?} at data row {}", &headers[c], line + 1)))?;
            raw.push(v);
        }
    }

    let n = feature_cols.len();
    let rows = labels.len();
    for c in 0..n {
        let column = || (0..rows).map(|r| raw[r * n + c]);
        let min = column().fold(f64::INFINITY, f64::min);
        let max = column().fold(f64::NEG_INFINITY, f64::max);
        let range = max - min;
        for r in 0..rows {
            let v = &mut raw[r * n + c];
            *v = if range > 0.0 { ((*v - min) / range).clamp(0.0, 1.0) } else { 0.0 };
        }
    }
    let features = Matrix::from_vec(rows, n, raw)?;
    let classes = names.len().max(1);
    if names.is_empty() {
        names.push(String::new());
    }
    Dataset::new(features, labels, classes)?.with_label_names(names)
}
