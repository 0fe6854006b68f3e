use crate::error::{Error, Result};
use crate::linalg::{Matrix, SeededRng};

/// LoRA layer: `φ(x) = W·x + A·(B·x)` with `W` frozen.
#[derive(Debug, Clone, PartialEq)]
pub struct LoraAdapter {
    w_frozen: Matrix,
    a: Matrix,
    b: Matrix,
    rank: usize,
}

impl LoraAdapter {
    /// `A ~ N(0, 1/R)`, `B = 0`, so `A·B = 0` exactly at init.
    pub fn new(w: &Matrix, rank: usize, rng: &mut SeededRng) -> Result<Self> {
        let bound = w.rows().min(w.cols());
        if rank == 0 || rank > bound {
            return Err(Error::RankTooLarge { rank, bound });
        }
        let a = Matrix::random_normal(w.rows(), rank, (1.0 / rank as f64).sqrt(), rng);
        Ok(Self {
            w_frozen: w.clone(),
            a,
            b: Matrix::zeros(rank, w.cols()),
            rank,
        })
    }

    pub fn from_parts(w_frozen: Matrix, a: Matrix, b: Matrix) -> Result<Self> {
        let (m, n) = w_frozen.shape();
        let rank = a.cols();
        if a.rows() != m || b.shape() != (rank, n) {
            return Err(Error::shape("lora_from_parts", a.shape(), b.shape()));
        }
        if rank > m.min(n) {
            return Err(Error::RankTooLarge { rank, bound: m.min(n) });
        }
        Ok(Self { w_frozen, a, b, rank })
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        if x.rows() != self.w_frozen.cols() {
            return Err(Error::shape("lora_forward", self.w_frozen.shape(), x.shape()));
        }
        let mut out = self.w_frozen.matmul(x)?;
        out.add_assign(&self.a.matmul(&self.b.matmul(x)?)?)?;
        Ok(out)
    }

    pub fn effective_weight(&self) -> Matrix {
        let ab = self.a.matmul(&self.b).expect("adapter factors are shape-consistent");
        self.w_frozen.add(&ab).expect("adapter factors are shape-consistent")
    }

    /// `A·B`, the only part of the weight that training can change.
    pub fn residual(&self) -> Matrix {
        self.a.matmul(&self.b).expect("adapter factors are shape-consistent")
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn w_frozen(&self) -> &Matrix {
        &self.w_frozen
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn b(&self) -> &Matrix {
        &self.b
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

    pub fn trainable_count(&self) -> usize {
        self.rank * (self.w_frozen.rows() + self.w_frozen.cols())
    }
}
