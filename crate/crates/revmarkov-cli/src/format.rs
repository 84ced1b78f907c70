//! Matrix file I/O: Matrix Market dense arrays and headerless CSV.
//!
//! The format is auto-detected on read by the first byte: `%` introduces a
//! Matrix Market file, anything else is parsed as CSV. Values are written
//! with 17 significant digits, so a parse-then-serialize round trip
//! reproduces every `f64` bit for bit.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("cannot access {path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("{path}: {0}", .detail)]
    Malformed { path: String, detail: String },
}

fn malformed(path: &Path, detail: impl Into<String>) -> FormatError {
    FormatError::Malformed { path: path.display().to_string(), detail: detail.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatrixFormat {
    MatrixMarket,
    Csv,
}

/// Reads a dense real matrix, reporting the detected format so writers can
/// mirror it.
pub fn read_matrix(path: &Path) -> Result<(DMatrix<f64>, MatrixFormat), FormatError> {
    let text = fs::read_to_string(path)
        .map_err(|source| FormatError::Io { path: path.display().to_string(), source })?;
    if text.starts_with('%') {
        Ok((parse_matrix_market(path, &text)?, MatrixFormat::MatrixMarket))
    } else {
        Ok((parse_csv(path, &text)?, MatrixFormat::Csv))
    }
}

/// Reads a vector: a matrix file with a single column or a single row.
pub fn read_vector(path: &Path) -> Result<(DVector<f64>, MatrixFormat), FormatError> {
    let (m, format) = read_matrix(path)?;
    if m.ncols() == 1 {
        Ok((DVector::from_column_slice(m.as_slice()), format))
    } else if m.nrows() == 1 {
        Ok((m.transpose().column(0).into_owned(), format))
    } else {
        Err(malformed(
            path,
            format!("expected a vector, found a {}x{} matrix", m.nrows(), m.ncols()),
        ))
    }
}

fn parse_matrix_market(path: &Path, text: &str) -> Result<DMatrix<f64>, FormatError> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| malformed(path, "empty file"))?;
    let fields: Vec<String> = header.split_whitespace().map(str::to_ascii_lowercase).collect();
    let expected = ["%%matrixmarket", "matrix", "array", "real", "general"];
    if fields.len() != expected.len() || fields.iter().zip(expected).any(|(a, b)| a != b) {
        return Err(malformed(
            path,
            format!(
                "unsupported header {header:?}; only \"%%MatrixMarket matrix array real general\" is accepted"
            ),
        ));
    }
    let mut body = lines.filter(|l| !l.trim_start().starts_with('%')).flat_map(str::split_whitespace);
    let rows: usize = body
        .next()
        .ok_or_else(|| malformed(path, "missing size line"))?
        .parse()
        .map_err(|_| malformed(path, "row count is not an integer"))?;
    let cols: usize = body
        .next()
        .ok_or_else(|| malformed(path, "missing column count"))?
        .parse()
        .map_err(|_| malformed(path, "column count is not an integer"))?;
    let mut values = Vec::with_capacity(rows * cols);
    for token in body {
        let v: f64 = token
            .parse()
            .map_err(|_| malformed(path, format!("invalid number {token:?}")))?;
        values.push(v);
    }
    if values.len() != rows * cols {
        return Err(malformed(
            path,
            format!("expected {} entries for a {rows}x{cols} array, found {}", rows * cols, values.len()),
        ));
    }
    // Matrix Market arrays are column-major.
    Ok(DMatrix::from_vec(rows, cols, values))
}

fn parse_csv(path: &Path, text: &str) -> Result<DMatrix<f64>, FormatError> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut row = Vec::new();
        for field in line.split(',') {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| malformed(path, format!("line {}: invalid number {field:?}", lineno + 1)))?;
            row.push(v);
        }
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(malformed(
                    path,
                    format!("line {}: {} fields, expected {}", lineno + 1, row.len(), first.len()),
                ));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(malformed(path, "no data rows"));
    }
    let (m, n) = (rows.len(), rows[0].len());
    Ok(DMatrix::from_fn(m, n, |i, j| rows[i][j]))
}

/// Serializes a matrix in the requested format. `comments` become `%` lines
/// after the Matrix Market header and are ignored for CSV.
pub fn matrix_to_string(m: &DMatrix<f64>, format: MatrixFormat, comments: &[String]) -> String {
    let mut out = String::new();
    match format {
        MatrixFormat::MatrixMarket => {
            out.push_str("%%MatrixMarket matrix array real general\n");
            for c in comments {
                let _ = writeln!(out, "% {c}");
            }
            let _ = writeln!(out, "{} {}", m.nrows(), m.ncols());
            for j in 0..m.ncols() {
                for i in 0..m.nrows() {
                    let _ = writeln!(out, "{:.16e}", m[(i, j)]);
                }
            }
        }
        MatrixFormat::Csv => {
            for i in 0..m.nrows() {
                for j in 0..m.ncols() {
                    if j > 0 {
                        out.push(',');
                    }
                    let _ = write!(out, "{:.16e}", m[(i, j)]);
                }
                out.push('\n');
            }
        }
    }
    out
}

pub fn write_matrix(
    path: &Path,
    m: &DMatrix<f64>,
    format: MatrixFormat,
    comments: &[String],
) -> Result<(), FormatError> {
    fs::write(path, matrix_to_string(m, format, comments))
        .map_err(|source| FormatError::Io { path: path.display().to_string(), source })
}
