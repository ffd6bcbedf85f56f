//! Dense small-matrix linear algebra: the [`Matrix`] carrier, symmetric
//! eigendecomposition, Cholesky factorization and triangular inversion.

mod cholesky;
mod eigen;
mod matrix;

pub use cholesky::{cholesky, tri_lower_inverse, SINGULAR_DIAGONAL};
pub use eigen::{
    sym_eig, sym_eig_with, EigenDecomposition, EigenSolver, JACOBI_MAX_DIM, JACOBI_MAX_SWEEPS,
    JACOBI_TOLERANCE, SYMMETRY_TOLERANCE,
};
pub use matrix::{diag_embed, diag_extract, frobenius_norm, matmul, trace, transpose, Matrix};
