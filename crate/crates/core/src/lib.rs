//! Reduced-rank multivariate regression with data-driven rank selection.
//!
//! The crate fits the model `Y = X A + E` (responses `Y`: m x n, design `X`:
//! m x p, coefficients `A`: p x n) with two families of low-rank estimators:
//!
//! * [`rsc`] — penalized least squares with a penalty proportional to the
//!   rank of the coefficient matrix. The minimizer is obtained in closed form
//!   by thresholding the eigenvalues of `Y'PY`, where `P` projects onto the
//!   column space of `X`; the selected rank is the number of eigenvalues at
//!   or above the penalty level. Includes the adaptive penalty built from the
//!   unbiased noise-variance estimator `S^2`.
//! * [`nnp`] — nuclear-norm penalized least squares solved by accelerated
//!   proximal gradient with singular-value soft-thresholding, plus the
//!   calibrated rank estimate obtained by thresholding the singular values
//!   of `M A~` at twice the penalty.
//!
//! Supporting modules: [`linalg`] (SVD, symmetric eigendecomposition,
//! pseudo-inverse, projector), [`gsvd`] (generalized SVD under the metric
//! `M = X'X`, which underlies the restricted-rank fits), [`simulate`] (data
//! generation, the replication engine and summary statistics) and [`bounds`]
//! (Monte Carlo verification of the probabilistic guarantees the estimators
//! rely on).

// Scalar validation guards are written `if !(x > 0.0)` so NaN fails closed.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod error;
pub mod gsvd;
pub mod io;
pub mod linalg;
pub mod matrix;
pub mod nnp;
pub mod rng;
pub mod rsc;
pub mod simulate;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};
pub use matrix::DenseMatrix;
