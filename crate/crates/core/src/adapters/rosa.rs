use crate::error::{Error, Result};
use crate::linalg::{sample_indices, svd, Matrix, SamplingScheme, SeededRng};

/// ROSA layer: `W = W_fixed + A·B` where `(A, B)` is a slice of the SVD of
/// the merged weight, periodically merged back and resampled.
#[derive(Debug, Clone, PartialEq)]
pub struct RosaAdapter {
    w_fixed: Matrix,
    a: Matrix,
    b: Matrix,
    rank: usize,
    scheme: SamplingScheme,
    steps_since_factorize: u64,
    original: Matrix,
}

/// Columns of `U·Σ` and rows of `Vᵀ` for the selected singular positions.
fn svd_slice(w: &Matrix, rank: usize, scheme: SamplingScheme, rng: &mut SeededRng) -> Result<(Matrix, Matrix)> {
    let bound = w.rows().min(w.cols());
    let subset = sample_indices(rank, bound, scheme, rng)?;
    let f = svd(w)?;
    let idx = subset.as_slice();
    let sigma: Vec<f64> = idx.iter().map(|&i| f.sigma[i]).collect();
    let a = f.u.select_columns(idx).scale_cols(&sigma)?;
    let b = f.v.select_columns(idx).transpose();
    Ok((a, b))
}

fn check_rank(w: &Matrix, rank: usize) -> Result<()> {
    let bound = w.rows().min(w.cols());
    if rank == 0 || rank > bound {
        return Err(Error::RankTooLarge { rank, bound });
    }
    Ok(())
}

impl RosaAdapter {
    /// Factorizes `w` immediately, so the adapter trains from the first step
    /// while the effective weight still equals `w`.
    pub fn new(w: &Matrix, rank: usize, scheme: SamplingScheme, rng: &mut SeededRng) -> Result<Self> {
        let mut adapter = Self::new_deferred(w, rank, scheme)?;
        adapter.factorize_step(rng)?;
        Ok(adapter)
    }

    /// Zero-initialized adapter (`A = B = 0`, `W_fixed = W`). Both factors
    /// receive zero gradients until the first [`factorize_step`](Self::factorize_step).
    pub fn new_deferred(w: &Matrix, rank: usize, scheme: SamplingScheme) -> Result<Self> {
        check_rank(w, rank)?;
        Ok(Self {
            w_fixed: w.clone(),
            a: Matrix::zeros(w.rows(), rank),
            b: Matrix::zeros(rank, w.cols()),
            rank,
            scheme,
            steps_since_factorize: 0,
            original: w.clone(),
        })
    }

    /// SVD-initialized adapter added on top of the untouched weight, so the
    /// effective weight becomes `W + U_R Σ_R V_Rᵀ`. Used by the init-only ablation.
    pub fn new_additive(w: &Matrix, rank: usize, scheme: SamplingScheme, rng: &mut SeededRng) -> Result<Self> {
        check_rank(w, rank)?;
        let (a, b) = svd_slice(w, rank, scheme, rng)?;
        Ok(Self {
            w_fixed: w.clone(),
            a,
            b,
            rank,
            scheme,
            steps_since_factorize: 0,
            original: w.clone(),
        })
    }

    /// Reassembles an adapter from stored tensors.
    pub fn from_parts(
        w_fixed: Matrix,
        a: Matrix,
        b: Matrix,
        scheme: SamplingScheme,
        steps_since_factorize: u64,
        original: Matrix,
    ) -> Result<Self> {
        let (m, n) = w_fixed.shape();
        let rank = a.cols();
        if a.rows() != m || b.shape() != (rank, n) {
            return Err(Error::shape("rosa_from_parts", a.shape(), b.shape()));
        }
        if original.shape() != (m, n) {
            return Err(Error::shape("rosa_from_parts", w_fixed.shape(), original.shape()));
        }
        check_rank(&w_fixed, rank)?;
        Ok(Self {
            w_fixed,
            a,
            b,
            rank,
            scheme,
            steps_since_factorize,
            original,
        })
    }

    /// Merges `A·B` into the fixed weight, takes a fresh SVD, draws a new
    /// subspace and splits it back out. The represented map is unchanged.
    pub fn factorize_step(&mut self, rng: &mut SeededRng) -> Result<()> {
        let merged = self.effective_weight();
        let (a, b) = svd_slice(&merged, self.rank, self.scheme, rng)?;
        self.w_fixed = merged.sub(&a.matmul(&b)?)?;
        self.a = a;
        self.b = b;
        self.steps_since_factorize = 0;
        Ok(())
    }

    /// `W_fixed·x + A·(B·x)` for a column batch `x` (N×batch).
    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        if x.rows() != self.w_fixed.cols() {
            return Err(Error::shape("rosa_forward", self.w_fixed.shape(), x.shape()));
        }
        let mut out = self.w_fixed.matmul(x)?;
        out.add_assign(&self.a.matmul(&self.b.matmul(x)?)?)?;
        Ok(out)
    }

    pub fn effective_weight(&self) -> Matrix {
        let ab = self.a.matmul(&self.b).expect("adapter factors are shape-consistent");
        self.w_fixed.add(&ab).expect("adapter factors are shape-consistent")
    }

    /// Effective weight minus the weight the adapter was built from.
    pub fn residual(&self) -> Matrix {
        self.effective_weight().sub(&self.original).expect("same shape")
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn scheme(&self) -> SamplingScheme {
        self.scheme
    }

    pub fn steps_since_factorize(&self) -> u64 {
        self.steps_since_factorize
    }

    /// Records one optimizer step since the last factorization.
    pub fn tick(&mut self) {
        self.steps_since_factorize += 1;
    }

    pub fn w_fixed(&self) -> &Matrix {
        &self.w_fixed
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn b(&self) -> &Matrix {
        &self.b
    }

    pub fn original(&self) -> &Matrix {
        &self.original
    }

    pub fn a_mut(&mut self) -> &mut Matrix {
        &mut self.a
    }

    pub fn b_mut(&mut self) -> &mut Matrix {
        &mut self.b
    }

    pub fn factors_mut(&mut self) -> (&mut Matrix, &mut Matrix) {
        (&mut self.a, &mut self.b)
    }

    /// Trainable scalars: `R·(M+N)`.
    pub fn trainable_count(&self) -> usize {
        self.rank * (self.w_fixed.rows() + self.w_fixed.cols())
    }
}
