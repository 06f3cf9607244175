//! Dense linear-algebra primitives: thin SVD, symmetric eigendecomposition,
//! Moore-Penrose inverse and the design summary (Gram matrix, its
//! pseudo-inverse, the column-space projector and the numerical rank).
//!
//! Decompositions are delegated to `nalgebra` and wrapped so that results are
//! deterministic: singular values and eigenvalues are returned nonincreasing,
//! and every singular vector / eigenvector is normalized so that its first
//! component of non-negligible magnitude is positive. Factor comparisons in
//! tests are stable under this convention.

use nalgebra::{DVector, SymmetricEigen, SVD};

use crate::error::{Error, Result};
use crate::matrix::{ensure_finite, max_asymmetry, symmetrize, DenseMatrix};

/// Iteration cap handed to nalgebra's iterative decompositions.
const DECOMP_MAX_ITER: usize = 10_000;

/// Relative magnitude below which a vector component does not decide the sign
/// convention. Vectors are unit length, so their largest entry is at least
/// `1/sqrt(dim)`; anything under this threshold is rounding noise.
const SIGN_EPS: f64 = 1e-12;

/// Default relative tolerance for numerical rank decisions:
/// `max(rows, cols) * machine epsilon`. Callers multiply by the largest
/// singular value of the matrix in question.
pub fn default_rank_tol(rows: usize, cols: usize) -> f64 {
    rows.max(cols) as f64 * f64::EPSILON
}

/// Thin singular value decomposition `a = u * diag(d) * vt`.
#[derive(Debug, Clone)]
pub struct SvdFactors {
    /// Left singular vectors, `rows x k` with `k = min(rows, cols)`.
    pub u: DenseMatrix,
    /// Singular values, nonincreasing and non-negative.
    pub d: Vec<f64>,
    /// Transposed right singular vectors, `k x cols`.
    pub vt: DenseMatrix,
}

impl SvdFactors {
    /// `u * diag(d) * vt`.
    pub fn reconstruct(&self) -> DenseMatrix {
        &self.u * DenseMatrix::from_diagonal(&DVector::from_vec(self.d.clone())) * &self.vt
    }

    /// Numerical rank: count of singular values above `tol * d_1`.
    pub fn rank(&self, tol: f64) -> usize {
        let d1 = self.d.first().copied().unwrap_or(0.0);
        self.d.iter().filter(|&&s| s > tol * d1).count()
    }
}

/// Summary of a design matrix `X`: Gram matrix `M = X'X`, its Moore-Penrose
/// inverse, the projector `P` onto the column space of `X`, the rank
/// `q = r(X)` and the extreme nonzero spectrum of the design.
#[derive(Debug, Clone)]
pub struct DesignSummary {
    /// `M = X'X`, `p x p`.
    pub gram: DenseMatrix,
    /// `M^-`, the Moore-Penrose inverse of the Gram matrix.
    pub pinv_gram: DenseMatrix,
    /// `P = X M^- X'`, the `m x m` orthogonal projector onto the column
    /// space of `X` (assembled from the singular basis of `X`, which is the
    /// same matrix up to rounding).
    pub projector: DenseMatrix,
    /// Numerical rank of `X`.
    pub rank_q: usize,
    /// `d_1(X)`, the largest singular value of the design.
    pub top_singular_value: f64,
    /// Smallest eigenvalue of `M` above the rank cutoff, i.e. `d_q(X)^2`.
    pub min_nonzero_eigenvalue: f64,
}

/// Thin SVD with deterministic ordering and sign convention.
///
/// Returns factors with `k = min(rows, cols)` singular triplets, singular
/// values sorted nonincreasing, and each left singular vector's first
/// non-negligible component positive.
pub fn thin_svd(a: &DenseMatrix) -> Result<SvdFactors> {
    ensure_finite("a", a)?;
    let svd = SVD::try_new(a.clone(), true, true, f64::EPSILON, DECOMP_MAX_ITER)
        .ok_or_else(|| Error::NumericalFailure("SVD did not converge".into()))?;
    let mut u = svd.u.expect("u requested");
    let mut vt = svd.v_t.expect("v_t requested");
    let mut d: Vec<f64> = svd.singular_values.iter().copied().collect();

    // nalgebra sorts, but we do not rely on it: order and orient explicitly.
    let mut order: Vec<usize> = (0..d.len()).collect();
    order.sort_by(|&i, &j| d[j].partial_cmp(&d[i]).unwrap());
    if order.windows(2).any(|w| w[0] > w[1]) {
        let u_old = u.clone();
        let vt_old = vt.clone();
        let d_old = d.clone();
        for (new_idx, &old_idx) in order.iter().enumerate() {
            u.set_column(new_idx, &u_old.column(old_idx));
            vt.set_row(new_idx, &vt_old.row(old_idx));
            d[new_idx] = d_old[old_idx];
        }
    }
    for j in 0..d.len() {
        if leading_component_is_negative(u.column(j).iter()) {
            u.column_mut(j).neg_mut();
            vt.row_mut(j).neg_mut();
        }
    }
    Ok(SvdFactors { u, d, vt })
}

/// Singular values only (no vectors), nonincreasing. Cheaper than
/// [`thin_svd`] when the factors are not needed.
pub fn singular_values(a: &DenseMatrix) -> Result<Vec<f64>> {
    ensure_finite("a", a)?;
    let svd = SVD::try_new(a.clone(), false, false, f64::EPSILON, DECOMP_MAX_ITER)
        .ok_or_else(|| Error::NumericalFailure("SVD did not converge".into()))?;
    let mut d: Vec<f64> = svd.singular_values.iter().copied().collect();
    d.sort_by(|a, b| b.partial_cmp(a).unwrap());
    Ok(d)
}

/// Symmetric eigendecomposition with eigenvalues sorted nonincreasing and the
/// eigenvector sign convention applied. Eigenvectors are the columns of the
/// returned matrix.
///
/// The input must be symmetric up to `1e-10 * max(1, |m|_max)`; it is
/// symmetrized as `(m + m')/2` before decomposing.
pub fn sym_eigendecomp(m: &DenseMatrix) -> Result<(Vec<f64>, DenseMatrix)> {
    ensure_finite("m", m)?;
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch {
            context: "sym_eigendecomp requires a square matrix",
            left_rows: m.nrows(),
            left_cols: m.ncols(),
            right_rows: m.nrows(),
            right_cols: m.ncols(),
        });
    }
    let scale = m.iter().fold(1.0f64, |acc, &v| acc.max(v.abs()));
    let asymmetry = max_asymmetry(m);
    if asymmetry > 1e-10 * scale {
        return Err(Error::NotSymmetric { asymmetry });
    }
    let eigen = SymmetricEigen::try_new(symmetrize(m), f64::EPSILON, DECOMP_MAX_ITER)
        .ok_or_else(|| Error::NumericalFailure("symmetric eigendecomposition did not converge".into()))?;
    let mut values: Vec<f64> = eigen.eigenvalues.iter().copied().collect();
    let mut vectors = eigen.eigenvectors;

    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[j].partial_cmp(&values[i]).unwrap());
    let vec_old = vectors.clone();
    let val_old = values.clone();
    for (new_idx, &old_idx) in order.iter().enumerate() {
        vectors.set_column(new_idx, &vec_old.column(old_idx));
        values[new_idx] = val_old[old_idx];
    }
    for j in 0..values.len() {
        if leading_component_is_negative(vectors.column(j).iter()) {
            vectors.column_mut(j).neg_mut();
        }
    }
    Ok((values, vectors))
}

/// Moore-Penrose inverse of a square symmetric positive semi-definite matrix,
/// computed by inverting the eigenvalues above `tol * lambda_max` and zeroing
/// the rest.
pub fn moore_penrose(m: &DenseMatrix, tol: f64) -> Result<DenseMatrix> {
    let (values, vectors) = sym_eigendecomp(m)?;
    let lambda_max = values.first().copied().unwrap_or(0.0).max(0.0);
    let inverted: Vec<f64> = values
        .iter()
        .map(|&v| if v > tol * lambda_max { 1.0 / v } else { 0.0 })
        .collect();
    let diag = DenseMatrix::from_diagonal(&DVector::from_vec(inverted));
    Ok(&vectors * diag * vectors.transpose())
}

/// Builds the [`DesignSummary`] of a design matrix. `tol` is the relative
/// numerical-rank tolerance: singular values of `X` at or below
/// `tol * d_1(X)` count as zero.
pub fn design_summary(x: &DenseMatrix, tol: f64) -> Result<DesignSummary> {
    ensure_finite("x", x)?;
    if x.nrows() == 0 {
        return Err(Error::OutOfRange("design matrix must have at least one row".into()));
    }
    let p = x.ncols();
    let svd = thin_svd(x)?;
    let d1 = svd.d.first().copied().unwrap_or(0.0);
    let rank_q = svd.rank(tol);

    // P = U_q U_q' on the kept singular basis; equals X M^- X' up to rounding
    // and is symmetric idempotent by construction.
    let u_q = svd.u.columns(0, rank_q).into_owned();
    let projector = &u_q * u_q.transpose();

    let gram = x.transpose() * x;
    let pinv_gram = moore_penrose(&gram, default_rank_tol(p, p))?;

    let min_nonzero_eigenvalue = if rank_q > 0 { svd.d[rank_q - 1].powi(2) } else { 0.0 };

    Ok(DesignSummary {
        gram,
        pinv_gram,
        projector,
        rank_q,
        top_singular_value: d1,
        min_nonzero_eigenvalue,
    })
}

fn leading_component_is_negative<'a>(components: impl Iterator<Item = &'a f64>) -> bool {
    for &c in components {
        if c.abs() > SIGN_EPS {
            return c < 0.0;
        }
    }
    false
}
