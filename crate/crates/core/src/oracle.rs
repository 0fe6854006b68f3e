//! Closed-form analysis of rank-constrained fine-tuning on linear least squares.
//!
//! For `min_W ‖XW − Y‖²_F` started from a pre-trained `W₀`:
//! - the best single rank-`R` update (reduced-rank regression) is
//!   `ΔW = (W_ls − W₀)·V_R V_Rᵀ`, where `W_ls` is the least-squares solution and
//!   `V_R` holds the top-`R` right singular vectors of `Π_X Y − X W₀`;
//! - any rank-`R` update therefore leaves at least
//!   `Σ_{i>R} σ_i(Π_X Y − X W₀)²` above the irreducible `‖Π_X Y − Y‖²_F`;
//! - repeating the optimal rank-`R` step from the current weight peels off
//!   `R` singular directions per step, so the residual vanishes after
//!   `⌈rank(X W₀ − Π_X Y) / R⌉` steps.

use crate::error::{Error, Result};
use crate::linalg::{full_column_rank_svd, numerical_rank, seeded_rng, svd, Matrix};

/// Relative threshold for counting residual rank.
pub const RESIDUAL_RANK_TOL: f64 = 1e-9;

/// Least-squares fine-tuning instance.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionProblem {
    x: Matrix,
    y: Matrix,
    w0: Matrix,
    /// `(XᵀX)⁻¹XᵀY`
    w_ls: Matrix,
    /// `Π_X Y`
    projected_y: Matrix,
}

impl RegressionProblem {
    pub fn new(x: Matrix, y: Matrix, w0: Matrix) -> Result<Self> {
        if x.rows() != y.rows() {
            return Err(Error::shape("regression_problem", x.shape(), y.shape()));
        }
        if w0.shape() != (x.cols(), y.cols()) {
            return Err(Error::shape("regression_problem", (x.cols(), y.cols()), w0.shape()));
        }
        let f = full_column_rank_svd(&x)?;
        let uty = f.u.matmul_tn(&y)?;
        let inv_sigma: Vec<f64> = f.sigma.iter().map(|s| 1.0 / s).collect();
        let w_ls = f.v.matmul(&uty.scale_rows(&inv_sigma)?)?;
        let projected_y = f.u.matmul(&uty)?;
        Ok(Self {
            x,
            y,
            w0,
            w_ls,
            projected_y,
        })
    }

    /// Same data, different starting weight.
    pub fn with_start(&self, w0: Matrix) -> Result<Self> {
        if w0.shape() != self.w0.shape() {
            return Err(Error::shape("with_start", self.w0.shape(), w0.shape()));
        }
        Ok(Self { w0, ..self.clone() })
    }

    pub fn x(&self) -> &Matrix {
        &self.x
    }

    pub fn y(&self) -> &Matrix {
        &self.y
    }

    pub fn w0(&self) -> &Matrix {
        &self.w0
    }

    pub fn least_squares_weight(&self) -> &Matrix {
        &self.w_ls
    }

    pub fn projected_y(&self) -> &Matrix {
        &self.projected_y
    }

    /// `min(d, p)`: the largest meaningful update rank.
    pub fn max_rank(&self) -> usize {
        self.w0.rows().min(self.w0.cols())
    }

    /// `‖XW − Y‖²_F`
    pub fn squared_error(&self, w: &Matrix) -> Result<f64> {
        Ok(self.x.matmul(w)?.sub(&self.y)?.frobenius_norm_sq())
    }

    /// `‖Π_X Y − Y‖²_F`, the error no weight can remove.
    pub fn irreducible_error(&self) -> f64 {
        self.projected_y.sub(&self.y).expect("same shape").frobenius_norm_sq()
    }

    /// `Π_X Y − X W₀`
    pub fn projected_residual(&self) -> Matrix {
        let xw0 = self.x.matmul(&self.w0).expect("shapes checked at construction");
        self.projected_y.sub(&xw0).expect("same shape")
    }

    fn check_rank(&self, rank: usize) -> Result<()> {
        let bound = self.max_rank();
        if rank == 0 || rank > bound {
            return Err(Error::RankTooLarge { rank, bound });
        }
        Ok(())
    }
}

/// Factors of a rank-`R` weight update `A·B`.
#[derive(Debug, Clone, PartialEq)]
pub struct RankUpdate {
    /// d×R
    pub a: Matrix,
    /// R×p
    pub b: Matrix,
}

impl RankUpdate {
    pub fn product(&self) -> Matrix {
        self.a.matmul(&self.b).expect("factor shapes agree")
    }
}

/// Globally optimal rank-`rank` update from `prob.w0()`.
pub fn rrr_optimum(prob: &RegressionProblem, rank: usize) -> Result<RankUpdate> {
    prob.check_rank(rank)?;
    let f = svd(&prob.projected_residual())?;
    let top: Vec<usize> = (0..rank).collect();
    let v_r = f.v.select_columns(&top);
    let a = prob.w_ls.sub(&prob.w0)?.matmul(&v_r)?;
    Ok(RankUpdate { a, b: v_r.transpose() })
}

/// `Σ_{i=R+1}^{min(d,p)} σ_i(Π_X Y − X W₀)²`: excess error any rank-`R`
/// update must leave on top of [`RegressionProblem::irreducible_error`].
pub fn lora_error_lower_bound(prob: &RegressionProblem, rank: usize) -> Result<f64> {
    prob.check_rank(rank)?;
    let f = svd(&prob.projected_residual())?;
    Ok(f.sigma
        .iter()
        .take(prob.max_rank())
        .skip(rank)
        .map(|s| s * s)
        .sum())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceStep {
    pub weight: Matrix,
    pub error: f64,
}

/// Iterates of the exact ROSA recursion, starting with `t = 0` (the pre-trained weight).
#[derive(Debug, Clone, PartialEq)]
pub struct RosaTrace {
    pub steps: Vec<TraceStep>,
    /// `⌈numerical_rank(X W₀ − Π_X Y) / R⌉`
    pub t_predicted: usize,
    pub irreducible_error: f64,
    /// `‖Y‖²_F`, the scale for relative errors.
    pub target_energy: f64,
}

impl RosaTrace {
    pub fn errors(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.error).collect()
    }

    /// `(error_t − irreducible) / ‖Y‖²_F`
    pub fn relative_excess(&self, t: usize) -> f64 {
        (self.steps[t].error - self.irreducible_error) / self.target_energy.max(f64::MIN_POSITIVE)
    }

    /// First step whose relative excess error is at most `rel_tol`.
    pub fn converged_at(&self, rel_tol: f64) -> Option<usize> {
        (0..self.steps.len()).find(|&t| self.relative_excess(t) <= rel_tol)
    }
}

/// `W_t = W_{t−1} + A_t B_t` with `(A_t, B_t)` the exact rank-`rank` optimum at
/// `W_{t−1}`, for `max_steps` steps.
pub fn rosa_exact_iterate(prob: &RegressionProblem, rank: usize, max_steps: usize) -> Result<RosaTrace> {
    prob.check_rank(rank)?;
    let residual_rank = numerical_rank(&prob.projected_residual(), RESIDUAL_RANK_TOL)?;
    let t_predicted = residual_rank.div_ceil(rank);

    let mut current = prob.clone();
    let mut steps = vec![TraceStep {
        weight: prob.w0.clone(),
        error: prob.squared_error(&prob.w0)?,
    }];
    for _ in 0..max_steps {
        let update = rrr_optimum(&current, rank)?;
        let next = current.w0.add(&update.product())?;
        let error = prob.squared_error(&next)?;
        let previous = steps.last().map_or(f64::INFINITY, |s| s.error);
        // Each step solves its subproblem exactly, so error cannot grow
        // beyond rounding.
        if error > previous * (1.0 + 1e-12) + 1e-12 * prob.y.frobenius_norm_sq() {
            return Err(Error::Contract(format!(
                "exact iteration increased the error from {previous:e} to {error:e}"
            )));
        }
        steps.push(TraceStep {
            weight: next.clone(),
            error: error.min(previous),
        });
        current = current.with_start(next)?;
    }
    Ok(RosaTrace {
        steps,
        t_predicted,
        irreducible_error: prob.irreducible_error(),
        target_energy: prob.y.frobenius_norm_sq(),
    })
}

/// Non-recursive form of the `t`-th iterate:
/// `W_t = W₀ + (W_ls − W₀)·Σ_{i ≤ tR} v_i v_iᵀ`, with `v_i` the right singular
/// vectors of the initial projected residual.
pub fn closed_form_iterate(prob: &RegressionProblem, rank: usize, t: usize) -> Result<Matrix> {
    prob.check_rank(rank)?;
    let f = svd(&prob.projected_residual())?;
    let keep = (t * rank).min(f.v.cols());
    if keep == 0 {
        return Ok(prob.w0.clone());
    }
    let idx: Vec<usize> = (0..keep).collect();
    let v = f.v.select_columns(&idx);
    let delta = prob.w_ls.sub(&prob.w0)?.matmul(&v)?.matmul_nt(&v)?;
    prob.w0.add(&delta)
}

/// Instance with a zero-error solution `W*` and `rank(W* − W₀) = residual_rank`.
pub fn realizable_instance(n: usize, d: usize, p: usize, residual_rank: usize, seed: u64) -> Result<RegressionProblem> {
    if n == 0 || d == 0 || p == 0 {
        return Err(Error::InvalidInput("dimensions must be positive".into()));
    }
    if n < d {
        return Err(Error::InvalidInput(format!("need n >= d for full column rank, got n={n}, d={d}")));
    }
    if residual_rank > d.min(p) {
        return Err(Error::InvalidInput(format!(
            "residual rank {residual_rank} exceeds min(d, p) = {}",
            d.min(p)
        )));
    }
    let mut rng = seeded_rng(seed);
    let x = Matrix::random_normal(n, d, 1.0, &mut rng);
    let w_star = Matrix::random_normal(d, p, 1.0, &mut rng);
    let w0 = if residual_rank == 0 {
        w_star.clone()
    } else {
        let left = Matrix::random_normal(d, residual_rank, 1.0, &mut rng);
        let right = Matrix::random_normal(residual_rank, p, 1.0, &mut rng);
        w_star.sub(&left.matmul(&right)?)?
    };
    let y = x.matmul(&w_star)?;
    RegressionProblem::new(x, y, w0)
}

/// Adds `scale`-sized Gaussian noise to `Y`, projected onto the orthogonal
/// complement of range(X), making the instance non-realizable without
/// changing `Π_X Y`.
pub fn add_orthogonal_noise(prob: &RegressionProblem, scale: f64, seed: u64) -> Result<RegressionProblem> {
    let mut rng = seeded_rng(seed);
    let noise = Matrix::random_normal(prob.y.rows(), prob.y.cols(), scale, &mut rng);
    let q = full_column_rank_svd(&prob.x)?.u;
    let in_range = q.matmul(&q.matmul_tn(&noise)?)?;
    let y = prob.y.add(&noise.sub(&in_range)?)?;
    RegressionProblem::new(prob.x.clone(), y, prob.w0.clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn already_optimal_start() {
        let prob = realizable_instance(12, 5, 4, 0, 1).unwrap();
        let upd = rrr_optimum(&prob, 2).unwrap();
        assert!(upd.product().max_abs() <= 1e-12);
        assert!(prob.squared_error(&prob.w0().add(&upd.product()).unwrap()).unwrap() <= 1e-20);
        assert!(lora_error_lower_bound(&prob, 2).unwrap() <= 1e-20);
    }

    #[test]
    fn full_rank_bound_is_empty_sum() {
        let prob = realizable_instance(12, 5, 4, 3, 2).unwrap();
        assert_eq!(lora_error_lower_bound(&prob, 4).unwrap(), 0.0);
    }

    #[test]
    fn rank_arguments_checked() {
        let prob = realizable_instance(12, 5, 4, 3, 2).unwrap();
        assert_eq!(rrr_optimum(&prob, 5), Err(Error::RankTooLarge { rank: 5, bound: 4 }));
        assert!(lora_error_lower_bound(&prob, 0).is_err());
        assert!(rosa_exact_iterate(&prob, 0, 3).is_err());
    }

    #[test]
    fn instance_validation() {
        assert!(realizable_instance(4, 5, 3, 1, 0).is_err());
        assert!(realizable_instance(10, 5, 3, 4, 0).is_err());
        let rank_deficient = Matrix::from_rows(&[&[1.0, 1.0], &[1.0, 1.0], &[2.0, 2.0]]).unwrap();
        assert!(matches!(
            RegressionProblem::new(rank_deficient, Matrix::zeros(3, 1), Matrix::zeros(2, 1)),
            Err(Error::Singular { .. })
        ));
    }

    #[test]
    fn predicted_steps_is_ceiling() {
        let prob = realizable_instance(30, 10, 8, 5, 3).unwrap();
        assert_eq!(rosa_exact_iterate(&prob, 2, 0).unwrap().t_predicted, 3);
        assert_eq!(rosa_exact_iterate(&prob, 1, 0).unwrap().t_predicted, 5);
        assert_eq!(rosa_exact_iterate(&prob, 5, 0).unwrap().t_predicted, 1);
    }

    #[test]
    fn orthogonal_noise_keeps_projection() {
        let prob = realizable_instance(20, 6, 3, 2, 4).unwrap();
        let noisy = add_orthogonal_noise(&prob, 0.5, 9).unwrap();
        assert!(noisy.projected_y().max_abs_diff(prob.projected_y()).unwrap() <= 1e-10);
        assert!(noisy.irreducible_error() > 1.0);
    }
}
