//! Thin singular value decomposition by one-sided (Hestenes) Jacobi rotations.
//!
//! The kernel orthogonalizes the columns of a working copy of the input,
//! accumulating the rotations into `V`. Column norms of the converged
//! working matrix are the singular values and the normalized columns are
//! the left singular vectors.

use super::matrix::{dot, Matrix};
use crate::error::{Error, Result};

const MAX_SWEEPS: usize = 60;

/// Pairs whose normalized inner product is below this are left alone.
const ROTATION_TOL: f64 = 1e-15;

/// Left vectors whose singular value is below this fraction of the largest
/// are re-orthogonalized against the rest of the basis.
const REORTHO_TOL: f64 = 1e-8;

/// Thin SVD `W = U · diag(sigma) · Vᵀ` with `sigma` sorted descending.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdFactors {
    /// M×K, orthonormal columns.
    pub u: Matrix,
    /// K non-negative values, descending.
    pub sigma: Vec<f64>,
    /// N×K, orthonormal columns.
    pub v: Matrix,
}

impl SvdFactors {
    pub fn len(&self) -> usize {
        self.sigma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigma.is_empty()
    }

    pub fn reconstruct(&self) -> Matrix {
        self.u
            .scale_cols(&self.sigma)
            .and_then(|us| us.matmul_nt(&self.v))
            .expect("factor shapes are consistent by construction")
    }

    /// Best rank-`rank` approximation (Eckart–Young).
    pub fn truncated(&self, rank: usize) -> Matrix {
        let mut sigma = self.sigma.clone();
        sigma.iter_mut().skip(rank).for_each(|s| *s = 0.0);
        self.u
            .scale_cols(&sigma)
            .and_then(|us| us.matmul_nt(&self.v))
            .expect("factor shapes are consistent by construction")
    }

    /// Count of singular values above `rel_tol · σ_max`. Zero for the zero matrix.
    pub fn numerical_rank(&self, rel_tol: f64) -> usize {
        let largest = self.sigma.first().copied().unwrap_or(0.0);
        if largest == 0.0 {
            return 0;
        }
        self.sigma.iter().filter(|&&s| s > rel_tol * largest).count()
    }
}

/// Computes the thin SVD of `w`.
///
/// Output is deterministic: singular values are sorted descending (ties by
/// original column order) and each left singular vector is signed so that
/// its largest-magnitude entry is positive, lowest row index winning ties.
pub fn svd(w: &Matrix) -> Result<SvdFactors> {
    if !w.is_finite() {
        return Err(Error::InvalidInput("svd input contains non-finite entries".into()));
    }
    let mut f = if w.rows() >= w.cols() {
        let (cols, sigma, vt) = jacobi_tall(w);
        sort_and_normalize(cols, sigma, vt)
    } else {
        let (cols, sigma, vt) = jacobi_tall(&w.transpose());
        let t = sort_and_normalize(cols, sigma, vt);
        SvdFactors {
            u: t.v,
            sigma: t.sigma,
            v: t.u,
        }
    };
    fix_signs(&mut f);
    Ok(f)
}

/// Flips (u_j, v_j) pairs so the largest-magnitude entry of each u_j is positive.
fn fix_signs(f: &mut SvdFactors) {
    for j in 0..f.sigma.len() {
        let mut pivot = 0;
        for i in 1..f.u.rows() {
            if f.u[(i, j)].abs() > f.u[(pivot, j)].abs() {
                pivot = i;
            }
        }
        if f.u[(pivot, j)] < 0.0 {
            for i in 0..f.u.rows() {
                f.u[(i, j)] = -f.u[(i, j)];
            }
            for i in 0..f.v.rows() {
                f.v[(i, j)] = -f.v[(i, j)];
            }
        }
    }
}

/// Numerical rank of `m` at relative threshold `rel_tol`.
pub fn numerical_rank(m: &Matrix, rel_tol: f64) -> Result<usize> {
    Ok(svd(m)?.numerical_rank(rel_tol))
}

/// One-sided Jacobi on a matrix with at least as many rows as columns.
/// Returns (U: M×N, sigma, V: N×N) unsorted.
fn jacobi_tall(w: &Matrix) -> (Matrix, Vec<f64>, Matrix) {
    let n = w.cols();
    // Rows of `cols` are the columns of W; rows of `vt` are the columns of V.
    let mut cols = w.transpose();
    let mut vt = Matrix::identity(n);

    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n.saturating_sub(1) {
            for q in p + 1..n {
                let alpha = dot(cols.row(p), cols.row(p));
                let beta = dot(cols.row(q), cols.row(q));
                let gamma = dot(cols.row(p), cols.row(q));
                if gamma == 0.0 || gamma.abs() <= ROTATION_TOL * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_rows(&mut cols, p, q, c, s);
                rotate_rows(&mut vt, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }

    let sigma: Vec<f64> = (0..n).map(|j| dot(cols.row(j), cols.row(j)).sqrt()).collect();
    (cols, sigma, vt)
}

fn rotate_rows(mat: &mut Matrix, p: usize, q: usize, c: f64, s: f64) {
    let cols = mat.cols();
    let data = mat.data_mut();
    let (head, tail) = data.split_at_mut(q * cols);
    let row_p = &mut head[p * cols..(p + 1) * cols];
    let row_q = &mut tail[..cols];
    for (x, y) in row_p.iter_mut().zip(row_q.iter_mut()) {
        let (xp, yq) = (*x, *y);
        *x = c * xp - s * yq;
        *y = s * xp + c * yq;
    }
}

/// Sorts and normalizes raw Jacobi output. `cols` and `vt` hold
/// the working columns and V's columns as rows.
fn sort_and_normalize(cols: Matrix, sigma: Vec<f64>, vt: Matrix) -> SvdFactors {
    let k = sigma.len();
    let m = cols.cols();
    let n = vt.cols();

    let mut order: Vec<usize> = (0..k).collect();
    // Stable sort keeps ties in original column order.
    order.sort_by(|&a, &b| sigma[b].total_cmp(&sigma[a]));
    let largest = order.first().map_or(0.0, |&i| sigma[i]);

    let mut u_rows: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut v_rows: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut sorted_sigma = Vec::with_capacity(k);
    for &j in &order {
        let s = sigma[j];
        let mut u: Vec<f64> = if s > 0.0 {
            cols.row(j).iter().map(|v| v / s).collect()
        } else {
            vec![0.0; m]
        };
        if s <= REORTHO_TOL * largest || largest == 0.0 {
            u = complete_basis(&u_rows, u, m);
        }
        u_rows.push(u);
        v_rows.push(vt.row(j).to_vec());
        sorted_sigma.push(s);
    }

    let u = Matrix::new(k, m, u_rows.concat()).expect("finite by construction").transpose();
    let v = Matrix::new(k, n, v_rows.concat()).expect("finite by construction").transpose();
    SvdFactors {
        u,
        sigma: sorted_sigma,
        v,
    }
}

/// Orthogonalizes `candidate` against `basis` (two Gram–Schmidt passes).
/// Falls back to standard basis vectors when the candidate collapses.
fn complete_basis(basis: &[Vec<f64>], candidate: Vec<f64>, dim: usize) -> Vec<f64> {
    let orthogonalize = |mut x: Vec<f64>| -> (Vec<f64>, f64) {
        for _ in 0..2 {
            for b in basis {
                let proj = dot(&x, b);
                x.iter_mut().zip(b).for_each(|(xi, bi)| *xi -= proj * bi);
            }
        }
        let norm = dot(&x, &x).sqrt();
        (x, norm)
    };

    let (x, norm) = orthogonalize(candidate);
    if norm > 0.5 {
        return x.into_iter().map(|v| v / norm).collect();
    }
    for e in 0..dim {
        let mut unit = vec![0.0; dim];
        unit[e] = 1.0;
        let (x, norm) = orthogonalize(unit);
        if norm > 0.5 {
            return x.into_iter().map(|v| v / norm).collect();
        }
    }
    unreachable!("a basis of size < dim always admits a completion")
}
