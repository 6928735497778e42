use std::collections::HashMap;
use std::path::Path;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::Matrix;

/// Loads a comma-separated table with a header row. Every column except
/// `label_column` is a numeric feature; labels are re-indexed to `0..c` in
/// order of first appearance.
pub fn load_csv(path: impl AsRef<Path>, label_column: &str) -> Result<Dataset> {
    let path = path.as_ref();
    let mut reader = ::csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(::csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, 1, e))?;

    let headers = reader.headers().map_err(|e| csv_error(path, 1, e))?.clone();
    let label_idx = headers
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| Error::format(path, format!("no label column named `{label_column}`")))?;
    let width = headers.len();

    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut classes: HashMap<String, usize> = HashMap::new();
    for (row, record) in reader.records().enumerate() {
        let line = row + 2;
        let record = record.map_err(|e| csv_error(path, line, e))?;
        if record.len() != width {
            return Err(Error::Parse {
                path: path.into(),
                line,
                reason: format!("expected {width} fields, found {}", record.len()),
            });
        }
        for (col, cell) in record.iter().enumerate() {
            if col == label_idx {
                let next = classes.len();
                labels.push(*classes.entry(cell.to_string()).or_insert(next));
                continue;
            }
            let value: f64 = cell.parse().ok().filter(|v: &f64| v.is_finite()).ok_or_else(|| Error::Parse {
                path: path.into(),
                line,
                reason: format!("column `{}`: `{cell}` is not a finite number", &headers[col]),
            })?;
            data.push(value);
        }
    }
    if labels.is_empty() {
        return Err(Error::format(path, "no data rows"));
    }
    let features = Matrix::from_vec(labels.len(), width - 1, data)?;
    let name = path
        .file_stem()
        .map_or_else(|| "csv".to_string(), |s| s.to_string_lossy().into_owned());
    let class_count = classes.len();
    Dataset::with_classes(name, features, labels, class_count)
}

fn csv_error(path: &Path, line: usize, e: ::csv::Error) -> Error {
    let line = e.position().map_or(line, |p| p.line() as usize);
    Error::Parse {
        path: path.into(),
        line,
        reason: e.to_string(),
    }
}
