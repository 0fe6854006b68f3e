//! Random subspace adaptation (ROSA) with LoRA and (IA)³ baselines.
//!
//! The crate is split into:
//! - [`linalg`]: dense matrices, Jacobi SVD, projections, seeded sampling;
//! - [`adapters`]: ROSA / LoRA / (IA)³ layer state;
//! - [`network`]: a small MLP whose gradients flow only into adapter parameters;
//! - [`optim`]: SGD and AdamW;
//! - [`oracle`]: closed-form reduced-rank regression and the exact ROSA iteration.

pub mod adapters;
pub mod error;
pub mod linalg;
pub mod network;
pub mod optim;
pub mod oracle;

pub use error::{Error, Result};
pub use linalg::{Matrix, SamplingScheme, SeededRng, SvdFactors};
