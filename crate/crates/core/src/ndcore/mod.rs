//! Dense linear algebra, seeded random streams and spectral helpers.

mod matrix;
mod rng;
mod spectral;

pub(crate) use matrix::ensure_same_len;
pub use matrix::{axpy, dot, gemm, gemm_into, max_abs_diff, norm2, MatRef, Matrix, Vector};
pub use rng::Rng;
pub use spectral::{
    canonical_sign, cholesky_solve, orthonormal_columns, power_iteration, power_iteration_from,
    sample_unit_sphere, symmetric_eigen, Eigenpair, PowerIterOptions, SymmetricEigen,
};
