use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// (IA)³ layer: a learned per-output-unit rescaling `diag(s)·W·x`.
#[derive(Debug, Clone, PartialEq)]
pub struct Ia3Adapter {
    w_frozen: Matrix,
    /// M×1 column.
    scale: Matrix,
}

impl Ia3Adapter {
    pub fn new(w: &Matrix) -> Self {
        Self {
            w_frozen: w.clone(),
            scale: Matrix::new(w.rows(), 1, vec![1.0; w.rows()]).expect("positive size"),
        }
    }

    pub fn from_parts(w_frozen: Matrix, scale: Matrix) -> Result<Self> {
        if scale.shape() != (w_frozen.rows(), 1) {
            return Err(Error::shape("ia3_from_parts", w_frozen.shape(), scale.shape()));
        }
        Ok(Self { w_frozen, scale })
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        if x.rows() != self.w_frozen.cols() {
            return Err(Error::shape("ia3_forward", self.w_frozen.shape(), x.shape()));
        }
        self.w_frozen.matmul(x)?.scale_rows(self.scale.data())
    }

    pub fn effective_weight(&self) -> Matrix {
        self.w_frozen.scale_rows(self.scale.data()).expect("scale has M entries")
    }

    pub fn residual(&self) -> Matrix {
        self.effective_weight().sub(&self.w_frozen).expect("same shape")
    }

    pub fn w_frozen(&self) -> &Matrix {
        &self.w_frozen
    }

    pub fn scale(&self) -> &Matrix {
        &self.scale
    }

    pub fn scale_mut(&mut self) -> &mut Matrix {
        &mut self.scale
    }

    pub fn trainable_count(&self) -> usize {
        self.w_frozen.rows()
    }
}
