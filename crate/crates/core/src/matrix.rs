//! Dense matrix carrier and small shared helpers.
//!
//! Every matrix in this crate is a dense, row/column addressed `f64` matrix.
//! We use [`nalgebra::DMatrix`] as the storage type; the public alias keeps
//! signatures readable and gives us one place to hang the finiteness checks
//! that all operations require on entry.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Dense real matrix; the universal carrier for designs, responses,
/// coefficient matrices and noise.
pub type DenseMatrix = DMatrix<f64>;

/// Rejects NaN/Inf entries. All public operations call this on their matrix
/// arguments so that non-finite values never reach a decomposition.
pub fn ensure_finite(name: &'static str, m: &DenseMatrix) -> Result<()> {
    for col in 0..m.ncols() {
        for row in 0..m.nrows() {
            if !m[(row, col)].is_finite() {
                return Err(Error::NonFinite { name, row, col });
            }
        }
    }
    Ok(())
}

/// Squared Frobenius norm.
pub fn frob_sq(m: &DenseMatrix) -> f64 {
    m.norm_squared()
}

/// Largest absolute asymmetry `max |m_ij - m_ji|` of a square matrix.
pub fn max_asymmetry(m: &DenseMatrix) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// `(m + m') / 2`, the symmetric part of a square matrix.
pub fn symmetrize(m: &DenseMatrix) -> DenseMatrix {
    let mut s = m.clone();
    let n = m.nrows();
    for i in 0..n {
        for j in 0..n {
            s[(i, j)] = 0.5 * (m[(i, j)] + m[(j, i)]);
        }
    }
    s
}

/// Checks that `a * b` conforms, returning a descriptive error otherwise.
pub fn ensure_conformable(context: &'static str, a: &DenseMatrix, b: &DenseMatrix) -> Result<()> {
    if a.ncols() != b.nrows() {
        return Err(Error::DimensionMismatch {
            context,
            left_rows: a.nrows(),
            left_cols: a.ncols(),
            right_rows: b.nrows(),
            right_cols: b.ncols(),
        });
    }
    Ok(())
}
