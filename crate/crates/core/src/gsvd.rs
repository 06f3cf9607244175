//! Generalized singular value decomposition under a PSD metric `M`.
//!
//! For a coefficient matrix `B0` and metric `M = X'X = N N`, the GSVD is
//! `B0 = U D V'` with `U'MU = I`, `V'V = I`. It is computed from the ordinary
//! SVD of `N B0`; the generalized singular values are the singular values of
//! `N B0`, which coincide with the singular values of `X B0`. Truncating the
//! decomposition to its `k` largest generalized singular values gives the
//! best rank-`k` approximation of `B0` in the seminorm `|X( . )|_F`, with
//! approximation error `sum_{j>k} d_j^2(X B0)`.
//!
//! The square root `N` is taken by eigendecomposition rather than Cholesky
//! because `M` is rank deficient whenever the design has more columns than
//! rows, and the pieces `N`, `N^-` must share one rank decision.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::linalg::{default_rank_tol, sym_eigendecomp, thin_svd};
use crate::matrix::{ensure_conformable, DenseMatrix};

/// GSVD of a matrix under a PSD metric: `u' * metric * u = I`, `v'v = I`,
/// and `N b0 = N u diag(d) v'` where `N` is the symmetric square root of the
/// metric. Zero generalized singular values are dropped, so `d.len()` is the
/// numerical rank of `N b0`.
#[derive(Debug, Clone)]
pub struct MetricGsvd {
    /// Left factor, `p x r`, orthonormal in the metric.
    pub u: DenseMatrix,
    /// Generalized singular values, positive and nonincreasing.
    pub d: Vec<f64>,
    /// Right factor, `n x r`, orthonormal.
    pub v: DenseMatrix,
    /// The metric the decomposition was taken under.
    pub metric: DenseMatrix,
}

impl MetricGsvd {
    /// Rank of the decomposition (number of retained singular values).
    pub fn rank(&self) -> usize {
        self.d.len()
    }
}

/// Symmetric PSD square root: returns symmetric `N` with `N N = m`.
///
/// Fails with a not-PSD error if `m` has an eigenvalue below
/// `-1e-10 * max(1, lambda_max)`; smaller negative eigenvalues are rounding
/// and are clamped to zero.
pub fn metric_sqrt(m: &DenseMatrix) -> Result<DenseMatrix> {
    psd_sqrt_pair(m).map(|(n, _)| n)
}

/// Both the square root `N` and its Moore-Penrose inverse `N^-`, from a
/// single eigendecomposition so the two share the same rank decision.
fn psd_sqrt_pair(m: &DenseMatrix) -> Result<(DenseMatrix, DenseMatrix)> {
    let (values, vectors) = sym_eigendecomp(m)?;
    let lambda_max = values.first().copied().unwrap_or(0.0).max(0.0);
    if let Some(&min) = values.last() {
        if min < -1e-10 * lambda_max.max(1.0) {
            return Err(Error::NotPsd { min_eigenvalue: min });
        }
    }
    let cut = default_rank_tol(m.nrows(), m.ncols()) * lambda_max;
    let mut sqrt = Vec::with_capacity(values.len());
    let mut inv_sqrt = Vec::with_capacity(values.len());
    for &v in &values {
        if v > cut {
            let s = v.sqrt();
            sqrt.push(s);
            inv_sqrt.push(1.0 / s);
        } else {
            sqrt.push(0.0);
            inv_sqrt.push(0.0);
        }
    }
    let form = |diag: Vec<f64>| {
        &vectors * DenseMatrix::from_diagonal(&DVector::from_vec(diag)) * vectors.transpose()
    };
    Ok((form(sqrt), form(inv_sqrt)))
}

/// GSVD of `b0` under the PSD metric `m`. `tol` is the relative tolerance for
/// the numerical rank of `N b0`; generalized singular values at or below
/// `tol * d_1(N b0)` are dropped.
pub fn gsvd_metric(b0: &DenseMatrix, m: &DenseMatrix, tol: f64) -> Result<MetricGsvd> {
    ensure_conformable("metric * coefficient matrix", m, b0)?;
    let (n_sqrt, n_pinv) = psd_sqrt_pair(m)?;
    let nb0 = &n_sqrt * b0;
    let svd = thin_svd(&nb0)?;
    let r = svd.rank(tol);
    let u_bar = svd.u.columns(0, r).into_owned();
    let v_bar_t = svd.vt.rows(0, r).into_owned();
    Ok(MetricGsvd {
        u: &n_pinv * u_bar,
        d: svd.d[..r].to_vec(),
        v: v_bar_t.transpose(),
        metric: m.clone(),
    })
}

/// Rank-`k` truncation `B_k = U_k D_k V_k'` of a metric GSVD, the best
/// rank-`k` approximation of the decomposed matrix under `|X( . )|_F`.
pub fn truncate_gsvd(g: &MetricGsvd, k: usize) -> Result<DenseMatrix> {
    if k > g.rank() {
        return Err(Error::OutOfRange(format!(
            "truncation rank {k} exceeds decomposition rank {}",
            g.rank()
        )));
    }
    let p = g.u.nrows();
    let n = g.v.nrows();
    let mut b_k = DenseMatrix::zeros(p, n);
    for j in 0..k {
        b_k += g.d[j] * g.u.column(j) * g.v.column(j).transpose();
    }
    Ok(b_k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::random_matrix;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn metric_sqrt_diagonal() {
        let m = DenseMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 9.0]));
        let n = metric_sqrt(&m).unwrap();
        assert!((&n * &n - &m).norm() <= 1e-12);
        assert!((n[(0, 0)] - 2.0).abs() <= 1e-12);
        assert!((n[(1, 1)] - 3.0).abs() <= 1e-12);
        assert!(n[(0, 1)].abs() <= 1e-12);
    }

    #[test]
    fn metric_sqrt_identity() {
        let m = DenseMatrix::identity(3, 3);
        let n = metric_sqrt(&m).unwrap();
        assert!((n - DenseMatrix::identity(3, 3)).norm() <= 1e-12);
    }

    #[test]
    fn metric_sqrt_squaring_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let b = random_matrix(6, 4, &mut rng);
        let m = &b * b.transpose();
        let n = metric_sqrt(&m).unwrap();
        assert!((&n * &n - &m).norm() <= 1e-8 * m.norm());
        assert!(crate::matrix::max_asymmetry(&n) <= 1e-10 * m.norm().max(1.0));
    }

    #[test]
    fn metric_sqrt_rejects_indefinite() {
        let m = DenseMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -0.5]));
        assert!(matches!(metric_sqrt(&m), Err(Error::NotPsd { .. })));
    }

    #[test]
    fn gsvd_identity_metric_reduces_to_svd() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let b0 = random_matrix(4, 3, &mut rng);
        let eye = DenseMatrix::identity(4, 4);
        let g = gsvd_metric(&b0, &eye, default_rank_tol(4, 3)).unwrap();
        let svd = thin_svd(&b0).unwrap();
        for (a, b) in g.d.iter().zip(svd.d.iter()) {
            assert!((a - b).abs() <= 1e-10 * svd.d[0]);
        }
        let full = truncate_gsvd(&g, g.rank()).unwrap();
        assert!((&full - &b0).norm() <= 1e-10 * b0.norm());
    }

    #[test]
    fn gsvd_zero_matrix_has_empty_factors() {
        let b0 = DenseMatrix::zeros(4, 3);
        let m = DenseMatrix::identity(4, 4);
        let g = gsvd_metric(&b0, &m, 1e-12).unwrap();
        assert_eq!(g.rank(), 0);
        assert_eq!(g.u.shape(), (4, 0));
        assert_eq!(g.v.shape(), (3, 0));
        let b0_back = truncate_gsvd(&g, 0).unwrap();
        assert_eq!(b0_back, DenseMatrix::zeros(4, 3));
    }

    #[test]
    fn generalized_singular_values_match_design_product() {
        // d_j of the GSVD under X'X are the singular values of X * B0.
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let x = random_matrix(8, 5, &mut rng);
        let b0 = random_matrix(5, 4, &mut rng);
        let m = x.transpose() * &x;
        let g = gsvd_metric(&b0, &m, default_rank_tol(5, 4)).unwrap();
        let xb0 = thin_svd(&(&x * &b0)).unwrap();
        assert_eq!(g.rank(), 4);
        for j in 0..4 {
            assert!((g.d[j] - xb0.d[j]).abs() <= 1e-8 * xb0.d[0]);
        }
        // Metric orthonormality of the factors.
        let r = g.rank();
        let eye = DenseMatrix::identity(r, r);
        assert!((g.u.transpose() * &m * &g.u - &eye).norm() <= 1e-8);
        assert!((g.v.transpose() * &g.v - &eye).norm() <= 1e-8);
        // N B0 = N U D V'.
        let n = metric_sqrt(&m).unwrap();
        let d = DenseMatrix::from_diagonal(&DVector::from_vec(g.d.clone()));
        assert!((&n * &b0 - &n * &g.u * d * g.v.transpose()).norm() <= 1e-8 * b0.norm().max(1.0));
    }

    #[test]
    fn truncate_full_rank_is_exact_in_seminorm() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let x = random_matrix(7, 4, &mut rng);
        let b0 = random_matrix(4, 5, &mut rng);
        let m = x.transpose() * &x;
        let g = gsvd_metric(&b0, &m, default_rank_tol(4, 5)).unwrap();
        let b_full = truncate_gsvd(&g, g.rank()).unwrap();
        assert!((&x * &b0 - &x * &b_full).norm() <= 1e-8 * (&x * &b0).norm());
    }

    #[test]
    fn truncate_diagonal_case() {
        // X = I, B0 = diag(3,2,1), k = 1: residual^2 = 4 + 1 = 5.
        let x = DenseMatrix::identity(3, 3);
        let b0 = DenseMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 2.0, 1.0]));
        let m = x.transpose() * &x;
        let g = gsvd_metric(&b0, &m, 1e-12).unwrap();
        let b1 = truncate_gsvd(&g, 1).unwrap();
        let resid = (&x * &b0 - &x * &b1).norm_squared();
        assert!((resid - 5.0).abs() <= 1e-10);
    }

    #[test]
    fn truncate_rejects_out_of_range() {
        let m = DenseMatrix::identity(2, 2);
        let b0 = DenseMatrix::identity(2, 2);
        let g = gsvd_metric(&b0, &m, 1e-12).unwrap();
        assert!(truncate_gsvd(&g, 3).is_err());
    }

    #[test]
    fn truncation_error_matches_tail_of_singular_values() {
        // Approximation identity: |X B0 - X B_k|_F^2 = sum_{j>k} d_j^2(X B0),
        // with the right side from an independent SVD of X B0.
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let x = random_matrix(9, 6, &mut rng);
        let b0 = random_matrix(6, 5, &mut rng);
        let m = x.transpose() * &x;
        let g = gsvd_metric(&b0, &m, default_rank_tol(6, 5)).unwrap();
        let d_xb0 = thin_svd(&(&x * &b0)).unwrap().d;
        let total: f64 = d_xb0.iter().map(|d| d * d).sum();
        for k in 0..=g.rank() {
            let b_k = truncate_gsvd(&g, k).unwrap();
            let resid = (&x * &b0 - &x * b_k).norm_squared();
            let tail: f64 = d_xb0[k..].iter().map(|d| d * d).sum();
            assert!(
                (resid - tail).abs() <= 1e-6 * total.max(1.0),
                "k = {k}: residual {resid} vs tail {tail}"
            );
        }
    }

    #[test]
    fn eckart_young_lower_bound_over_random_competitors() {
        // No rank-k matrix beats the truncated GSVD in the X-seminorm.
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let x = random_matrix(6, 4, &mut rng);
        let b0 = random_matrix(4, 3, &mut rng);
        let d_xb0 = thin_svd(&(&x * &b0)).unwrap().d;
        for _ in 0..500 {
            let k = rng.random_range(1..=2usize);
            let left = random_matrix(4, k, &mut rng);
            let right = random_matrix(k, 3, &mut rng);
            let b = left * right;
            let tail: f64 = d_xb0[k..].iter().map(|d| d * d).sum();
            let err = (&x * &b0 - &x * b).norm_squared();
            assert!(err >= tail - 1e-6, "rank-{k} competitor beat the tail bound");
        }
    }
}
