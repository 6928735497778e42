//! File exports: feature-weight CSVs, accuracy-curve CSVs and PGM heatmaps
//! of where the top-ranked features sit in an image.

use std::fs::File;
use std::path::Path;

use crate::error::{Error, Result};
use crate::trainer::write_atomic;

use super::{AccuracyCurve, FeatureRanking};

const WEIGHT_HEADER_PREFIX: &str = "weight:";

/// `feature_index,weight:<method>` header and one row per feature in index
/// order. Weights are written at `f32` precision.
pub fn weights_csv(weights: &[f64], method: &str) -> Result<String> {
    if method.contains([',', '\n', '"']) {
        return Err(Error::contract(format!("method name `{method}` cannot go in a CSV header")));
    }
    let mut out = format!("feature_index,{WEIGHT_HEADER_PREFIX}{method}\n");
    for (k, w) in weights.iter().enumerate() {
        out.push_str(&format!("{k},{}\n", *w as f32));
    }
    Ok(out)
}

pub fn export_weights(weights: &[f64], method: &str, path: &Path) -> Result<()> {
    write_atomic(path, weights_csv(weights, method)?.as_bytes())
}

/// Reads a file written by [`export_weights`]; returns the method name and
/// the weights ordered by feature index.
pub fn import_weights(path: &Path) -> Result<(String, Vec<f64>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let parse_err = |line: usize, reason: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        reason,
    };
    let header = reader.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    let method = match (header.get(0), header.get(1), header.len()) {
        (Some("feature_index"), Some(w), 2) if w.starts_with(WEIGHT_HEADER_PREFIX) => {
            w[WEIGHT_HEADER_PREFIX.len()..].to_string()
        }
        _ => {
            return Err(parse_err(
                1,
                format!("expected header `feature_index,{WEIGHT_HEADER_PREFIX}<method>`"),
            ))
        }
    };
    let mut weights = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| parse_err(line, e.to_string()))?;
        if record.len() != 2 {
            return Err(parse_err(line, format!("expected 2 fields, found {}", record.len())));
        }
        let index: usize = record[0]
            .parse()
            .map_err(|_| parse_err(line, format!("feature index `{}` is not an integer", &record[0])))?;
        if index != weights.len() {
            return Err(parse_err(line, format!("feature index {index}, expected {}", weights.len())));
        }
        let w: f64 = record[1]
            .parse()
            .map_err(|_| parse_err(line, format!("weight `{}` is not a number", &record[1])))?;
        weights.push(w);
    }
    Ok((method, weights))
}

pub fn write_curve_csv(curve: &AccuracyCurve, path: &Path) -> Result<()> {
    write_atomic(path, curve.to_csv().as_bytes())
}

/// Binary PGM in which feature `k` sits at pixel `(k / cols, k % cols)`.
/// With the tiers sorted ascending, a feature in the top `tiers[t]` (and not
/// an earlier tier) gets gray level `round(200·t / max(T − 1, 1))`; features
/// outside every tier are white.
pub fn heatmap_pgm(ranking: &FeatureRanking, tiers: &[usize], image_rows: usize, image_cols: usize) -> Result<Vec<u8>> {
    let d = ranking.len();
    if image_rows * image_cols != d {
        return Err(Error::Dimension {
            op: "export_heatmap",
            left: (image_rows, image_cols),
            right: (1, d),
        });
    }
    let mut tiers = tiers.to_vec();
    tiers.sort_unstable();
    tiers.dedup();
    let span = tiers.len().saturating_sub(1).max(1) as f64;
    let mut pixels = vec![255u8; d];
    for (rank, &feature) in ranking.order.iter().enumerate() {
        if let Some(t) = tiers.iter().position(|&k| rank < k) {
            pixels[feature] = (200.0 * t as f64 / span).round() as u8;
        }
    }
    let mut out = format!("P5\n{image_cols} {image_rows}\n255\n").into_bytes();
    out.extend_from_slice(&pixels);
    Ok(out)
}

pub fn export_heatmap(
    ranking: &FeatureRanking,
    tiers: &[usize],
    image_rows: usize,
    image_cols: usize,
    path: &Path,
) -> Result<()> {
    write_atomic(path, &heatmap_pgm(ranking, tiers, image_rows, image_cols)?)
}
