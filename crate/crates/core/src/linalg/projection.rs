use super::matrix::Matrix;
use super::svd::{svd, SvdFactors};
use crate::error::{Error, Result};

/// Columns whose singular value falls below this fraction of the largest
/// make a design matrix count as rank deficient.
pub const FULL_RANK_TOL: f64 = 1e-10;

/// SVD of `x` after checking it has full column rank.
pub fn full_column_rank_svd(x: &Matrix) -> Result<SvdFactors> {
    if x.rows() < x.cols() {
        return Err(Error::Singular {
            index: x.rows(),
            value: 0.0,
            largest: 0.0,
        });
    }
    let f = svd(x)?;
    let largest = f.sigma[0];
    if let Some((index, &value)) = f
        .sigma
        .iter()
        .enumerate()
        .find(|(_, &s)| largest == 0.0 || s <= FULL_RANK_TOL * largest)
    {
        return Err(Error::Singular { index, value, largest });
    }
    Ok(f)
}

/// Orthonormal basis (n×d) of the column space of a full-column-rank `x`.
pub fn orthonormal_basis(x: &Matrix) -> Result<Matrix> {
    Ok(full_column_rank_svd(x)?.u)
}

/// Orthogonal projector onto range(`x`), built as `Q Qᵀ` from an orthonormal basis.
pub fn projection_onto_range(x: &Matrix) -> Result<Matrix> {
    let q = orthonormal_basis(x)?;
    q.matmul_nt(&q)
}

/// Least-squares solution `(XᵀX)⁻¹XᵀY`, computed from the SVD of `x`
/// rather than the normal equations.
pub fn least_squares(x: &Matrix, y: &Matrix) -> Result<Matrix> {
    if x.rows() != y.rows() {
        return Err(Error::shape("least_squares", x.shape(), y.shape()));
    }
    let f = full_column_rank_svd(x)?;
    let inv_sigma: Vec<f64> = f.sigma.iter().map(|s| 1.0 / s).collect();
    let uty = f.u.matmul_tn(y)?;
    f.v.matmul(&uty.scale_rows(&inv_sigma)?)
}
