//! Random matrix helpers shared by unit tests.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::matrix::DenseMatrix;

/// Matrix with i.i.d. standard normal entries.
pub fn random_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> DenseMatrix {
    DenseMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// Random symmetric PSD matrix of the given rank: `B B'` with `B` `n x rank`.
pub fn random_psd(n: usize, rank: usize, rng: &mut impl Rng) -> DenseMatrix {
    let b = random_matrix(n, rank, rng);
    &b * b.transpose()
}
