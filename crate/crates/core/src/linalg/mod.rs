//! Dense and sparse matrices and direct solvers.

mod dense;
mod solve;
mod sparse;

pub use dense::{gemm, DenseMatrix};
pub use solve::{
    factor_lu, factor_spd, factor_spd_dense, reverse_cuthill_mckee, DenseCholesky, DenseLu, EnvelopeCholesky,
    Factorization, SYMMETRY_TOL,
};
pub use sparse::SparseMatrix;
