//! Matrix CSV input/output.
//!
//! Matrices travel as headerless comma-separated decimal floats, one row per
//! line. Values are written with Rust's shortest round-trip formatting, so a
//! written file parses back to bit-identical values. Parse errors carry
//! 1-based line and column numbers.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;

/// Parses a headerless CSV of decimal floats into a matrix. Rows must all
/// have the same number of fields; blank lines are rejected except for a
/// single trailing newline.
pub fn parse_matrix_csv(text: &str) -> Result<DenseMatrix> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width: Option<usize> = None;
    for (line_idx, line) in text.lines().enumerate() {
        let line_no = line_idx + 1;
        if line.trim().is_empty() {
            return Err(Error::MalformedCsv {
                line: line_no,
                column: 1,
                message: "blank line inside matrix".into(),
            });
        }
        let mut row = Vec::new();
        for (col_idx, field) in line.split(',').enumerate() {
            let col_no = col_idx + 1;
            let value: f64 = field.trim().parse().map_err(|_| Error::MalformedCsv {
                line: line_no,
                column: col_no,
                message: format!("cannot parse `{}` as a number", field.trim()),
            })?;
            if !value.is_finite() {
                return Err(Error::MalformedCsv {
                    line: line_no,
                    column: col_no,
                    message: format!("non-finite value {value}"),
                });
            }
            row.push(value);
        }
        match width {
            None => width = Some(row.len()),
            Some(w) if w != row.len() => {
                return Err(Error::MalformedCsv {
                    line: line_no,
                    column: row.len(),
                    message: format!("expected {w} fields, found {}", row.len()),
                });
            }
            _ => {}
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::MalformedCsv {
            line: 1,
            column: 1,
            message: "empty matrix file".into(),
        });
    }
    let nrows = rows.len();
    let ncols = width.unwrap_or(0);
    Ok(DenseMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

/// Renders a matrix as headerless CSV with full round-trip precision.
pub fn format_matrix_csv(m: &DenseMatrix) -> String {
    let mut out = String::new();
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if j > 0 {
                out.push(',');
            }
            out.push_str(&format!("{}", m[(i, j)]));
        }
        out.push('\n');
    }
    out
}

/// Reads a matrix CSV file.
pub fn read_matrix_csv(path: &Path) -> Result<DenseMatrix> {
    let text = fs::read_to_string(path)?;
    parse_matrix_csv(&text)
}

/// Writes a matrix CSV file.
pub fn write_matrix_csv(path: &Path, m: &DenseMatrix) -> Result<()> {
    fs::write(path, format_matrix_csv(m))?;
    Ok(())
}
