//! Dense linear algebra: matrices, Jacobi SVD, projections and seeded sampling.

mod matrix;
mod projection;
mod sampling;
mod svd;

pub use matrix::Matrix;
pub use projection::{full_column_rank_svd, least_squares, orthonormal_basis, projection_onto_range, FULL_RANK_TOL};
pub use sampling::{sample_indices, seeded_rng, IndexSubset, SamplingScheme, SeededRng};
pub use svd::{numerical_rank, svd, SvdFactors};
