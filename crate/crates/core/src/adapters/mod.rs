//! Per-layer adapter state for ROSA, LoRA, (IA)³ and plain full fine-tuning.
//!
//! Every variant exposes the same surface: a forward map on column batches,
//! the effective dense weight, and the residual against the weight it was
//! built from. The residual is what distinguishes the methods: LoRA's is
//! `A·B` and so has rank at most `R`, while ROSA's accumulates across
//! resampling cycles and is not rank limited.

mod ia3;
mod lora;
mod rosa;

use std::fmt;

pub use ia3::Ia3Adapter;
pub use lora::LoraAdapter;
pub use rosa::RosaAdapter;

pub use crate::linalg::SamplingScheme;

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Plain trainable dense weight (full fine-tuning).
#[derive(Debug, Clone, PartialEq)]
pub struct FullAdapter {
    weight: Matrix,
    original: Matrix,
}

impl FullAdapter {
    pub fn new(w: &Matrix) -> Self {
        Self {
            weight: w.clone(),
            original: w.clone(),
        }
    }

    pub fn from_parts(weight: Matrix, original: Matrix) -> Result<Self> {
        if weight.shape() != original.shape() {
            return Err(Error::shape("full_from_parts", weight.shape(), original.shape()));
        }
        Ok(Self { weight, original })
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        if x.rows() != self.weight.cols() {
            return Err(Error::shape("full_forward", self.weight.shape(), x.shape()));
        }
        self.weight.matmul(x)
    }

    pub fn weight(&self) -> &Matrix {
        &self.weight
    }

    pub fn weight_mut(&mut self) -> &mut Matrix {
        &mut self.weight
    }

    pub fn original(&self) -> &Matrix {
        &self.original
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AdapterKind {
    Full,
    Rosa,
    Lora,
    Ia3,
}

impl AdapterKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AdapterKind::Full => "full",
            AdapterKind::Rosa => "rosa",
            AdapterKind::Lora => "lora",
            AdapterKind::Ia3 => "ia3",
        }
    }
}

impl fmt::Display for AdapterKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The weight-bearing part of a dense layer.
#[derive(Debug, Clone, PartialEq)]
pub enum AdapterState {
    Full(FullAdapter),
    Rosa(RosaAdapter),
    Lora(LoraAdapter),
    Ia3(Ia3Adapter),
}

impl AdapterState {
    pub fn kind(&self) -> AdapterKind {
        match self {
            AdapterState::Full(_) => AdapterKind::Full,
            AdapterState::Rosa(_) => AdapterKind::Rosa,
            AdapterState::Lora(_) => AdapterKind::Lora,
            AdapterState::Ia3(_) => AdapterKind::Ia3,
        }
    }

    /// (M, N) of the represented weight.
    pub fn shape(&self) -> (usize, usize) {
        match self {
            AdapterState::Full(f) => f.weight().shape(),
            AdapterState::Rosa(r) => r.w_fixed().shape(),
            AdapterState::Lora(l) => l.w_frozen().shape(),
            AdapterState::Ia3(i) => i.w_frozen().shape(),
        }
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        match self {
            AdapterState::Full(f) => f.forward(x),
            AdapterState::Rosa(r) => r.forward(x),
            AdapterState::Lora(l) => l.forward(x),
            AdapterState::Ia3(i) => i.forward(x),
        }
    }

    pub fn effective_weight(&self) -> Matrix {
        match self {
            AdapterState::Full(f) => f.weight().clone(),
            AdapterState::Rosa(r) => r.effective_weight(),
            AdapterState::Lora(l) => l.effective_weight(),
            AdapterState::Ia3(i) => i.effective_weight(),
        }
    }

    /// Effective weight minus the weight the adapter was constructed from.
    pub fn residual(&self) -> Matrix {
        match self {
            AdapterState::Full(f) => f.weight().sub(f.original()).expect("same shape"),
            AdapterState::Rosa(r) => r.residual(),
            AdapterState::Lora(l) => l.residual(),
            AdapterState::Ia3(i) => i.residual(),
        }
    }

    /// Trainable scalars in the weight part (bias excluded).
    pub fn trainable_count(&self) -> usize {
        match self {
            AdapterState::Full(f) => f.weight().rows() * f.weight().cols(),
            AdapterState::Rosa(r) => r.trainable_count(),
            AdapterState::Lora(l) => l.trainable_count(),
            AdapterState::Ia3(i) => i.trainable_count(),
        }
    }

    /// Tensors that training never writes to (between factorizations for ROSA).
    pub fn frozen_tensors(&self) -> Vec<&Matrix> {
        match self {
            AdapterState::Full(_) => vec![],
            AdapterState::Rosa(r) => vec![r.w_fixed()],
            AdapterState::Lora(l) => vec![l.w_frozen()],
            AdapterState::Ia3(i) => vec![i.w_frozen()],
        }
    }
}

/// Ratio of full fine-tuning parameters to adapter parameters, `MN / (R(M+N))`.
pub fn trainable_reduction(m: usize, n: usize, rank: usize) -> f64 {
    (m as f64 * n as f64) / (rank as f64 * (m + n) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::seeded_rng;

    #[test]
    fn reduction_ratio() {
        assert_eq!(trainable_reduction(768, 768, 8), 48.0);
        assert_eq!(trainable_reduction(1024, 1024, 4), 128.0);
        // R = MN / (M+N) = 2 for a 4x4 weight.
        assert_eq!(trainable_reduction(4, 4, 2), 1.0);
    }

    #[test]
    fn parameter_counts_match_ratio() {
        let mut rng = seeded_rng(0);
        let w = Matrix::random_normal(12, 20, 1.0, &mut rng);
        let full = AdapterState::Full(FullAdapter::new(&w));
        let rosa = AdapterState::Rosa(RosaAdapter::new(&w, 3, SamplingScheme::Random, &mut rng).unwrap());
        let lora = AdapterState::Lora(LoraAdapter::new(&w, 3, &mut rng).unwrap());
        let ia3 = AdapterState::Ia3(Ia3Adapter::new(&w));
        assert_eq!(full.trainable_count(), 240);
        assert_eq!(rosa.trainable_count(), 96);
        assert_eq!(lora.trainable_count(), 96);
        assert_eq!(ia3.trainable_count(), 12);
        let ratio = full.trainable_count() as f64 / rosa.trainable_count() as f64;
        assert_eq!(ratio, trainable_reduction(12, 20, 3));
    }

    #[test]
    fn untrained_residuals_are_zero() {
        let mut rng = seeded_rng(1);
        let w = Matrix::random_normal(4, 5, 1.0, &mut rng);
        let states = [
            AdapterState::Full(FullAdapter::new(&w)),
            AdapterState::Lora(LoraAdapter::new(&w, 2, &mut rng).unwrap()),
            AdapterState::Ia3(Ia3Adapter::new(&w)),
        ];
        for s in &states {
            assert_eq!(s.residual(), Matrix::zeros(4, 5), "{}", s.kind());
        }
        let rosa = AdapterState::Rosa(RosaAdapter::new(&w, 2, SamplingScheme::Top, &mut rng).unwrap());
        assert!(rosa.residual().max_abs() <= 1e-12);
    }
}
