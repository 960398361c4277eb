use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::Autoencoder;
use crate::numerics::Signal;

/// Reads a headerless CSV of floats, one sample per row. Blank lines and
/// `#` comment lines are skipped. All rows must have the same width.
pub fn parse_matrix(text: &str) -> Result<Vec<Vec<f64>>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row = line
            .split(',')
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Parse(format!("line {}: bad float {f:?}", lineno + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::Parse(format!(
                    "line {}: expected {} columns, got {}",
                    lineno + 1,
                    first.len(),
                    row.len()
                )));
            }
        }
        rows.push(row);
    }
    Ok(rows)
}

pub fn read_matrix(path: impl AsRef<Path>) -> Result<Vec<Vec<f64>>> {
    parse_matrix(&std::fs::read_to_string(path)?)
}

/// A file with one float per line, as a single vector.
pub fn read_column(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    let rows = read_matrix(path)?;
    if rows.iter().any(|r| r.len() != 1) {
        return Err(Error::Parse("expected one value per line".into()));
    }
    Ok(rows.into_iter().flatten().collect())
}

/// Rows formatted with 17 significant digits.
pub fn format_matrix<'a>(rows: impl IntoIterator<Item = &'a [f64]>) -> String {
    let mut out = String::new();
    for row in rows {
        let line: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
        let _ = writeln!(out, "{}", line.join(","));
    }
    out
}

/// Maps each row onto `[0, 1]` by its own minimum and maximum. A constant
/// row becomes all zeros.
pub fn min_max_rescale(row: &mut [f64]) {
    let lo = row.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    for v in row.iter_mut() {
        *v = if span > 0.0 { (*v - lo) / span } else { 0.0 };
    }
}

/// Reconstructs every row, optionally rescaled.
pub fn denoise_rows(net: &Autoencoder<f64>, rows: &[Vec<f64>], rescale: bool) -> Result<Vec<Vec<f64>>> {
    rows.iter()
        .map(|r| {
            if r.len() != net.dim() {
                return Err(Error::DimMismatch {
                    expected: net.dim(),
                    actual: r.len(),
                });
            }
            let mut out = net.reconstruct(&Signal::new(r.clone())?)?.into_vec();
            if rescale {
                min_max_rescale(&mut out);
            }
            Ok(out)
        })
        .collect()
}
