//! The rank selection criterion estimator.
//!
//! The estimator minimizes `|Y - XB|_F^2 + mu * rank(B)` over all `p x n`
//! coefficient matrices. The minimizer has a closed form: compute the
//! eigendecomposition of `Y'PY` (`P` the projector onto the column space of
//! `X`), select the rank as the number of eigenvalues at or above `mu`, and
//! take the restricted-rank least squares fit at that rank. The restricted
//! fit itself follows the three-step construction: eigenvectors `V` of
//! `Y'PY`, least squares `B^ = M^- X'Y`, then `B^_k = W_k G_k` with
//! `W = B^ V`, `G = V'`.
//!
//! Ties `lambda_k = mu` are selected (the thresholding inequality is
//! non-strict), and eigenvalues below the numerical-rank tolerance of `Y'PY`
//! are zeroed before thresholding so that floating-point noise in a rank
//! deficient projection cannot inflate the selected rank.

use crate::error::{Error, Result};
use crate::linalg::{default_rank_tol, design_summary, sym_eigendecomp, DesignSummary};
use crate::matrix::{ensure_finite, DenseMatrix};

/// Restricted-rank least squares fit `B^_k = W_k G_k`.
#[derive(Debug, Clone)]
pub struct RankKFit {
    /// The rank the fit was restricted to.
    pub k: usize,
    /// Coefficients, `p x n`, of rank at most `k`.
    pub b_k: DenseMatrix,
    /// Left factor `W_k = (M^- X'Y) V_k`, `p x k`; `W_k' M W_k` is diagonal.
    pub w_k: DenseMatrix,
    /// Right factor `G_k = V_k'`, `k x n`, with orthonormal rows.
    pub g_k: DenseMatrix,
    /// Fitted responses `X B^_k`, `m x n`.
    pub fitted: DenseMatrix,
}

impl RankKFit {
    /// The rank-zero (empty model) fit: all-zero coefficients and factors
    /// with zero columns/rows.
    pub fn zero(m: usize, p: usize, n: usize) -> Self {
        Self {
            k: 0,
            b_k: DenseMatrix::zeros(p, n),
            w_k: DenseMatrix::zeros(p, 0),
            g_k: DenseMatrix::zeros(0, n),
            fitted: DenseMatrix::zeros(m, n),
        }
    }
}

/// Result of the penalized fit: coefficients, selected rank, the penalty and
/// the eigenvalues of `Y'PY` the selection was read off from.
#[derive(Debug, Clone)]
pub struct RscFit {
    /// Estimated coefficient matrix, `p x n`.
    pub coefficients: DenseMatrix,
    /// Selected rank: the number of eigenvalues of `Y'PY` at or above `mu`.
    pub selected_rank: usize,
    /// The penalty level, in squared-signal units.
    pub mu: f64,
    /// Eigenvalues of `Y'PY`, nonincreasing, zeroed below the rank tolerance.
    pub eigenvalues: Vec<f64>,
    /// `|Y - X A^|_F^2 + mu * selected_rank`.
    pub objective: f64,
}

/// Penalty-level parameters. `theta` and `xi` are the slack factors of the
/// high-probability penalties, `delta` the separation factor of the effective
/// rank, and `constant` the multiplier of the practical adaptive penalty
/// `constant * S^2 * (n + q)`.
#[derive(Debug, Clone, Copy)]
pub struct PenaltyConfig {
    pub theta: f64,
    pub xi: f64,
    pub delta: f64,
    pub constant: f64,
}

impl Default for PenaltyConfig {
    fn default() -> Self {
        Self { theta: 1.0, xi: 1.0, delta: 1.0, constant: 2.0 }
    }
}

impl PenaltyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.theta > 0.0) {
            return Err(Error::OutOfRange(format!("theta must be > 0, got {}", self.theta)));
        }
        if !(self.xi >= 0.0) {
            return Err(Error::OutOfRange(format!("xi must be >= 0, got {}", self.xi)));
        }
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return Err(Error::OutOfRange(format!("delta must be in (0, 1], got {}", self.delta)));
        }
        if !(self.constant > 0.0) {
            return Err(Error::OutOfRange(format!("constant must be > 0, got {}", self.constant)));
        }
        Ok(())
    }

    /// Penalty guaranteeing effective-rank recovery:
    /// `(1 + theta)^2 sigma^2 (sqrt(n) + sqrt(q))^2 / delta^2`.
    pub fn mu_rank_recovery(&self, sigma2: f64, n: usize, q: usize) -> f64 {
        let root = (n as f64).sqrt() + (q as f64).sqrt();
        (1.0 + self.theta).powi(2) * sigma2 * root * root / (self.delta * self.delta)
    }

    /// Per-rank penalty of the known-variance oracle inequality:
    /// `(1 + theta)(1 + xi)^2 sigma^2 (sqrt(n) + sqrt(q))^2`.
    pub fn mu_oracle(&self, sigma2: f64, n: usize, q: usize) -> f64 {
        let root = (n as f64).sqrt() + (q as f64).sqrt();
        (1.0 + self.theta) * (1.0 + self.xi).powi(2) * sigma2 * root * root
    }

    /// Per-rank penalty of the estimated-variance oracle inequality:
    /// `(1 + theta)/(1 - delta) (1 + xi)^2 (sqrt(n) + sqrt(q))^2 S^2`.
    /// Requires `delta < 1`.
    pub fn mu_oracle_estimated(&self, s2: f64, n: usize, q: usize) -> Result<f64> {
        if self.delta >= 1.0 {
            return Err(Error::OutOfRange(
                "the estimated-variance penalty requires delta < 1".into(),
            ));
        }
        let root = (n as f64).sqrt() + (q as f64).sqrt();
        Ok((1.0 + self.theta) / (1.0 - self.delta) * (1.0 + self.xi).powi(2) * s2 * root * root)
    }
}

/// One point of a solution path: penalty level, selected rank, and the fit
/// error `|X A^ - X A|_F^2` when the signal `XA` was supplied.
#[derive(Debug, Clone)]
pub struct PathPoint {
    pub mu: f64,
    pub selected_rank: usize,
    pub fit_error: Option<f64>,
}

/// Precomputed pieces of one regression instance `(X, Y)` shared by all
/// penalty levels and ranks: the design summary, the least squares
/// coefficients, and the eigendecomposition of `Y'PY`.
#[derive(Debug, Clone)]
pub struct RscProblem {
    design: DesignSummary,
    /// `B^ = M^- X' Y`.
    bhat: DenseMatrix,
    /// Eigenvalues of `Y'PY`, nonincreasing, zeroed below the rank tolerance.
    eigenvalues: Vec<f64>,
    /// Eigenvectors of `Y'PY` (columns), under the deterministic sign
    /// convention; the factors `W`, `G` are built from these.
    eigenvectors: DenseMatrix,
    /// `|Y - PY|_F^2`, the residual the projection leaves behind.
    residual_sq: f64,
    x: DenseMatrix,
    y: DenseMatrix,
}

impl RscProblem {
    pub fn new(x: &DenseMatrix, y: &DenseMatrix) -> Result<Self> {
        let design = design_summary(x, default_rank_tol(x.nrows(), x.ncols()))?;
        Self::with_design(design, x, y)
    }

    /// Builds the problem around an existing design summary of `x`.
    pub fn with_design(design: DesignSummary, x: &DenseMatrix, y: &DenseMatrix) -> Result<Self> {
        ensure_finite("x", x)?;
        ensure_finite("y", y)?;
        if y.nrows() != x.nrows() {
            return Err(Error::DimensionMismatch {
                context: "X and Y must have the same number of rows",
                left_rows: x.nrows(),
                left_cols: x.ncols(),
                right_rows: y.nrows(),
                right_cols: y.ncols(),
            });
        }
        let py = &design.projector * y;
        let residual_sq = (y - &py).norm_squared();
        let ytpy = y.transpose() * &py;
        let (mut eigenvalues, eigenvectors) = sym_eigendecomp(&ytpy)?;
        // Numerical rank cut for Y'PY: eigenvalues within rounding of zero
        // are zeroed so thresholding sees the true rank of PY.
        let n = y.ncols();
        let cut = default_rank_tol(n, n) * eigenvalues.first().copied().unwrap_or(0.0).max(0.0);
        for v in eigenvalues.iter_mut() {
            if *v <= cut {
                *v = 0.0;
            }
        }
        let bhat = &design.pinv_gram * x.transpose() * y;
        Ok(Self {
            design,
            bhat,
            eigenvalues,
            eigenvectors,
            residual_sq,
            x: x.clone(),
            y: y.clone(),
        })
    }

    pub fn design(&self) -> &DesignSummary {
        &self.design
    }

    /// Eigenvalues of `Y'PY`, nonincreasing.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// The least squares coefficients `B^ = M^- X' Y`.
    pub fn least_squares(&self) -> &DenseMatrix {
        &self.bhat
    }

    /// `|Y - PY|_F^2`.
    pub fn projection_residual_sq(&self) -> f64 {
        self.residual_sq
    }

    /// Largest admissible restriction rank, `min(n, p)`.
    pub fn max_rank(&self) -> usize {
        self.y.ncols().min(self.x.ncols())
    }

    /// The restricted-rank fit `B^_k = W_k G_k`.
    pub fn restricted(&self, k: usize) -> Result<RankKFit> {
        if k < 1 || k > self.max_rank() {
            return Err(Error::OutOfRange(format!(
                "restriction rank {k} outside 1..={}",
                self.max_rank()
            )));
        }
        Ok(self.restricted_unchecked(k))
    }

    /// Restricted fit for `k = 0` (the empty model) through `max_rank`.
    pub fn restricted_or_zero(&self, k: usize) -> Result<RankKFit> {
        if k == 0 {
            Ok(RankKFit::zero(self.y.nrows(), self.x.ncols(), self.y.ncols()))
        } else {
            self.restricted(k)
        }
    }

    fn restricted_unchecked(&self, k: usize) -> RankKFit {
        let v_k = self.eigenvectors.columns(0, k).into_owned();
        let w_k = &self.bhat * &v_k;
        let g_k = v_k.transpose();
        let b_k = &w_k * &g_k;
        let fitted = &self.x * &b_k;
        RankKFit { k, b_k, w_k, g_k, fitted }
    }

    /// The penalized fit at level `mu`.
    pub fn fit(&self, mu: f64) -> Result<RscFit> {
        if !(mu > 0.0) {
            return Err(Error::OutOfRange(format!("mu must be > 0, got {mu}")));
        }
        let k_hat = select_rank(&self.eigenvalues, mu).min(self.max_rank());
        let fit = self.restricted_or_zero(k_hat)?;
        let objective = (&self.y - &fit.fitted).norm_squared() + mu * k_hat as f64;
        Ok(RscFit {
            coefficients: fit.b_k,
            selected_rank: k_hat,
            mu,
            eigenvalues: self.eigenvalues.clone(),
            objective,
        })
    }

    /// Ranks and fit errors along an increasing penalty grid. When the signal
    /// `XA` is supplied, each point carries `|X A^(mu) - XA|_F^2`.
    pub fn solution_path(&self, mu_grid: &[f64], signal: Option<&DenseMatrix>) -> Result<Vec<PathPoint>> {
        if mu_grid.is_empty() {
            return Err(Error::OutOfRange("penalty grid must be nonempty".into()));
        }
        if mu_grid.iter().any(|&mu| !(mu > 0.0)) {
            return Err(Error::OutOfRange("penalty grid must be positive".into()));
        }
        if mu_grid.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::OutOfRange("penalty grid must be nondecreasing".into()));
        }
        if let Some(xa) = signal {
            if xa.shape() != self.y.shape() {
                return Err(Error::DimensionMismatch {
                    context: "signal matrix must have the shape of Y",
                    left_rows: self.y.nrows(),
                    left_cols: self.y.ncols(),
                    right_rows: xa.nrows(),
                    right_cols: xa.ncols(),
                });
            }
        }
        let mut errors_by_rank: Vec<Option<f64>> = vec![None; self.max_rank() + 1];
        let mut path = Vec::with_capacity(mu_grid.len());
        for &mu in mu_grid {
            let k = select_rank(&self.eigenvalues, mu).min(self.max_rank());
            let fit_error = match signal {
                None => None,
                Some(xa) => Some(match errors_by_rank[k] {
                    Some(e) => e,
                    None => {
                        let fit = self.restricted_or_zero(k)?;
                        let e = (&fit.fitted - xa).norm_squared();
                        errors_by_rank[k] = Some(e);
                        e
                    }
                }),
            };
            path.push(PathPoint { mu, selected_rank: k, fit_error });
        }
        Ok(path)
    }
}

/// Least squares coefficients `B^ = M^- X' Y`.
pub fn least_squares(design: &DesignSummary, x: &DenseMatrix, y: &DenseMatrix) -> Result<DenseMatrix> {
    ensure_finite("x", x)?;
    ensure_finite("y", y)?;
    if x.nrows() != y.nrows() || x.ncols() != design.gram.nrows() {
        return Err(Error::DimensionMismatch {
            context: "least squares: X is m x p, Y is m x n, design is of X",
            left_rows: x.nrows(),
            left_cols: x.ncols(),
            right_rows: y.nrows(),
            right_cols: y.ncols(),
        });
    }
    Ok(&design.pinv_gram * x.transpose() * y)
}

/// Restricted-rank least squares: the best fit of rank `k`.
pub fn restricted_rank(design: &DesignSummary, x: &DenseMatrix, y: &DenseMatrix, k: usize) -> Result<RankKFit> {
    RscProblem::with_design(design.clone(), x, y)?.restricted(k)
}

/// Number of eigenvalues at or above `mu` (ties included). `eigenvalues`
/// must be nonincreasing and non-negative.
pub fn select_rank(eigenvalues: &[f64], mu: f64) -> usize {
    debug_assert!(eigenvalues.windows(2).all(|w| w[0] >= w[1]));
    eigenvalues.iter().take_while(|&&v| v >= mu).count()
}

/// The penalized estimator: selects the rank by thresholding the eigenvalues
/// of `Y'PY` at `mu` and returns the restricted fit at that rank. A selected
/// rank of zero yields all-zero coefficients.
pub fn rsc_fit(x: &DenseMatrix, y: &DenseMatrix, mu: f64) -> Result<RscFit> {
    RscProblem::new(x, y)?.fit(mu)
}

/// Unbiased noise-variance estimator `S^2 = |Y - PY|_F^2 / (mn - qn)`.
///
/// Requires residual degrees of freedom: errors when `m = rank(X)`.
pub fn noise_variance(design: &DesignSummary, y: &DenseMatrix) -> Result<f64> {
    ensure_finite("y", y)?;
    let m = y.nrows();
    let n = y.ncols();
    if design.projector.nrows() != m {
        return Err(Error::DimensionMismatch {
            context: "projector and response row counts differ",
            left_rows: design.projector.nrows(),
            left_cols: design.projector.ncols(),
            right_rows: m,
            right_cols: n,
        });
    }
    let q = design.rank_q;
    if m <= q {
        return Err(Error::DegenerateDesign { m, rank_q: q });
    }
    let resid = y - &design.projector * y;
    Ok(resid.norm_squared() / ((m - q) * n) as f64)
}

/// The practical adaptive penalty `constant * s2 * (n + q)`.
pub fn adaptive_mu(s2: f64, n: usize, q: usize, constant: f64) -> f64 {
    constant * s2 * (n + q) as f64
}

/// The effective rank at penalty `mu` and separation `delta`: the unique
/// index `s` with `d_s > (1 + delta) sqrt(mu)` and
/// `d_{s+1} < (1 - delta) sqrt(mu)` (strictly, with `d_{s+1} = 0` past the
/// end of the spectrum), or `None` when no index separates the spectrum.
///
/// `signal_singular_values` are the singular values of the signal `XA`,
/// nonincreasing. `Some(0)` means every singular value sits below the noise
/// threshold.
pub fn effective_rank(signal_singular_values: &[f64], mu: f64, delta: f64) -> Option<usize> {
    assert!(mu > 0.0, "mu must be positive");
    assert!(delta > 0.0 && delta <= 1.0, "delta must be in (0, 1]");
    let root_mu = mu.sqrt();
    let upper = (1.0 + delta) * root_mu;
    let lower = (1.0 - delta) * root_mu;
    let d = signal_singular_values;
    for s in 0..=d.len() {
        let above = s == 0 || d[s - 1] > upper;
        let next = if s < d.len() { d[s] } else { 0.0 };
        if above && next < lower {
            return Some(s);
        }
    }
    None
}

/// Convenience wrapper building the path from raw matrices; see
/// [`RscProblem::solution_path`].
pub fn solution_path(
    x: &DenseMatrix,
    y: &DenseMatrix,
    mu_grid: &[f64],
    signal: Option<&DenseMatrix>,
) -> Result<Vec<PathPoint>> {
    RscProblem::new(x, y)?.solution_path(mu_grid, signal)
}
