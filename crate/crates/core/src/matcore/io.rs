//! Plain numeric CSV: one matrix row per line, comma separated, no header.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;

use super::SymMat;
use crate::error::{Error, Result};

pub fn read_matrix_csv(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    parse_matrix_csv(&text).map_err(|e| match e {
        Error::InvalidData(msg) => Error::InvalidData(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub(crate) fn parse_matrix_csv(text: &str) -> Result<DMatrix<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|tok| {
                tok.trim().parse::<f64>().map_err(|_| {
                    Error::InvalidData(format!("line {}: cannot parse {tok:?}", lineno + 1))
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::InvalidData(format!(
                    "line {}: expected {} columns, found {}",
                    lineno + 1,
                    first.len(),
                    row.len()
                )));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::InvalidData("no rows".into()));
    }
    let ncols = rows[0].len();
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    if flat.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidData("non-finite value".into()));
    }
    Ok(DMatrix::from_row_slice(rows.len(), ncols, &flat))
}

/// Reads a square matrix and rejects it unless it is symmetric to within
/// `1e-8·(1 + max|A_ij|)`.
pub fn read_sym_csv(path: impl AsRef<Path>) -> Result<SymMat> {
    let a = read_matrix_csv(path)?;
    let s = SymMat::new(a)?;
    let scale = 1.0 + s.norm(super::NormKind::InfInf);
    if s.input_asymmetry() > 1e-8 * scale {
        return Err(Error::InvalidMatrix(format!(
            "matrix is not symmetric (max |A_ij - A_ji| = {:e})",
            s.input_asymmetry()
        )));
    }
    Ok(s)
}

/// Writes with Rust's shortest round-trip float formatting.
pub fn write_matrix_csv(path: impl AsRef<Path>, a: &DMatrix<f64>) -> Result<()> {
    let mut out = String::with_capacity(a.nrows() * a.ncols() * 12);
    for r in 0..a.nrows() {
        for c in 0..a.ncols() {
            if c > 0 {
                out.push(',');
            }
            out.push_str(&format!("{:?}", a[(r, c)]));
        }
        out.push('\n');
    }
    let mut f = fs::File::create(path)?;
    f.write_all(out.as_bytes())?;
    Ok(())
}
