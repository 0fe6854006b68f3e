//! First-order optimizers over the trainable tensors of a network.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::network::{GradientSet, ParamKey, ParamKind, ParamRef};

pub trait Optimizer {
    /// Applies one update. `grads` must list the same keys, in the same
    /// order and with the same shapes, as `params`.
    fn step(&mut self, params: &mut [ParamRef<'_>], grads: &GradientSet) -> Result<()>;

    /// Drops per-parameter state held for the low-rank factors `A`, `B` of
    /// `layer`. Other tensors of the layer keep theirs.
    fn reset_factors(&mut self, layer: usize);

    fn learning_rate(&self) -> f64;
}

fn check_alignment(params: &[ParamRef<'_>], grads: &GradientSet) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::Contract(format!(
            "{} parameters but {} gradients",
            params.len(),
            grads.len()
        )));
    }
    for (p, (key, g)) in params.iter().zip(grads.iter()) {
        if p.key != *key {
            return Err(Error::Contract(format!("gradient {key} does not line up with parameter {}", p.key)));
        }
        if p.value.shape() != g.shape() {
            return Err(Error::Contract(format!(
                "gradient {key} has shape {:?}, parameter has {:?}",
                g.shape(),
                p.value.shape()
            )));
        }
    }
    Ok(())
}

fn check_learning_rate(lr: f64) -> Result<()> {
    if !lr.is_finite() || lr < 0.0 {
        return Err(Error::InvalidInput(format!("learning rate must be finite and >= 0, got {lr}")));
    }
    Ok(())
}

/// Plain gradient descent, `p ← p − lr·g`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sgd {
    learning_rate: f64,
}

impl Sgd {
    pub fn new(learning_rate: f64) -> Result<Self> {
        check_learning_rate(learning_rate)?;
        Ok(Self { learning_rate })
    }
}

impl Optimizer for Sgd {
    fn step(&mut self, params: &mut [ParamRef<'_>], grads: &GradientSet) -> Result<()> {
        check_alignment(params, grads)?;
        for (p, (_, g)) in params.iter_mut().zip(grads.iter()) {
            for (v, &gi) in p.value.data_mut().iter_mut().zip(g.data()) {
                *v -= self.learning_rate * gi;
            }
        }
        Ok(())
    }

    fn reset_factors(&mut self, _layer: usize) {}

    fn learning_rate(&self) -> f64 {
        self.learning_rate
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2e-3,
            beta1: 0.9,
            beta2: 0.98,
            epsilon: 1e-6,
            weight_decay: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Moments {
    first: Matrix,
    second: Matrix,
    steps: i32,
}

/// Adam with decoupled weight decay and bias correction.
///
/// Moments and the bias-correction step count are tracked per parameter,
/// so [`reset_factors`](Optimizer::reset_factors) restarts a subspace cleanly.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    config: AdamWConfig,
    moments: BTreeMap<ParamKey, Moments>,
}

impl AdamW {
    pub fn new(config: AdamWConfig) -> Result<Self> {
        check_learning_rate(config.learning_rate)?;
        for (name, beta) in [("beta1", config.beta1), ("beta2", config.beta2)] {
            if !(0.0..1.0).contains(&beta) {
                return Err(Error::InvalidInput(format!("{name} must lie in [0, 1), got {beta}")));
            }
        }
        if !(config.epsilon > 0.0) || !(config.weight_decay >= 0.0) {
            return Err(Error::InvalidInput("epsilon must be > 0 and weight_decay >= 0".into()));
        }
        Ok(Self {
            config,
            moments: BTreeMap::new(),
        })
    }

    pub fn config(&self) -> &AdamWConfig {
        &self.config
    }

    /// Keys that currently hold moment buffers.
    pub fn tracked(&self) -> Vec<ParamKey> {
        self.moments.keys().copied().collect()
    }
}

impl Optimizer for AdamW {
    fn step(&mut self, params: &mut [ParamRef<'_>], grads: &GradientSet) -> Result<()> {
        check_alignment(params, grads)?;
        let AdamWConfig {
            learning_rate: lr,
            beta1,
            beta2,
            epsilon,
            weight_decay,
        } = self.config;
        for (p, (key, g)) in params.iter_mut().zip(grads.iter()) {
            let state = self.moments.entry(*key).or_insert_with(|| Moments {
                first: Matrix::zeros(g.rows(), g.cols()),
                second: Matrix::zeros(g.rows(), g.cols()),
                steps: 0,
            });
            state.steps += 1;
            let c1 = 1.0 - beta1.powi(state.steps);
            let c2 = 1.0 - beta2.powi(state.steps);
            let values = p.value.data_mut();
            let m = state.first.data_mut();
            let v = state.second.data_mut();
            for i in 0..values.len() {
                let gi = g.data()[i];
                values[i] -= lr * weight_decay * values[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                values[i] -= lr * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }

    fn reset_factors(&mut self, layer: usize) {
        self.moments
            .retain(|k, _| k.layer != layer || !matches!(k.kind, ParamKind::A | ParamKind::B));
    }

    fn learning_rate(&self) -> f64 {
        self.config.learning_rate
    }
}
