//! Minibatch training loop with periodic ROSA merge/resample.

use rand::seq::SliceRandom;
use rosa_core::adapters::{AdapterState, FullAdapter, Ia3Adapter, LoraAdapter, RosaAdapter};
use rosa_core::linalg::{numerical_rank, seeded_rng};
use rosa_core::network::{mse_grad, mse_loss, Mlp};
use rosa_core::optim::{AdamW, Optimizer, Sgd};
use rosa_core::SeededRng;
use serde::Serialize;

use crate::config::{Ablation, FactorizeUnit, Method, OptimizerKind, TrainConfig};
use crate::error::{ExpError, Result};
use crate::synthetic::{Dataset, SyntheticData};

/// Relative threshold for counting residual singular values.
pub const RESIDUAL_RANK_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRecord {
    /// Optimizer steps taken so far.
    pub step: u64,
    /// One-based epoch index.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub trainable_param_count: usize,
    /// Numerical rank of `effective − initial` per layer.
    pub cumulative_residual_rank: Vec<usize>,
    /// Whether a merge/resample happened during this epoch.
    pub factorize_event: bool,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub records: Vec<MetricsRecord>,
    /// Network after adapter construction, before the first update.
    pub initial: Mlp,
    pub final_net: Mlp,
    pub initial_train_loss: f64,
    pub initial_val_loss: f64,
    pub factorize_events: usize,
    /// Layer-level moment resets performed on factorize.
    pub moment_resets: usize,
}

impl RunOutput {
    pub fn final_record(&self) -> &MetricsRecord {
        self.records.last().expect("a run has at least one epoch")
    }

    pub fn final_val_loss(&self) -> f64 {
        self.final_record().val_loss
    }
}

pub fn build_adapted(config: &TrainConfig, base: &Mlp, rng: &mut SeededRng) -> Result<Mlp> {
    let mut net = base.clone();
    let rank = config.rank.unwrap_or(0);
    net.adapt(|_, w| {
        Ok(match config.method {
            Method::Ft => AdapterState::Full(FullAdapter::new(w)),
            Method::Ia3 => AdapterState::Ia3(Ia3Adapter::new(w)),
            Method::Lora => AdapterState::Lora(LoraAdapter::new(w, rank, rng)?),
            Method::Rosa => AdapterState::Rosa(match config.ablation() {
                Ablation::SvdInitOnly => RosaAdapter::new_additive(w, rank, config.scheme, rng)?,
                _ if config.deferred_init => RosaAdapter::new_deferred(w, rank, config.scheme)?,
                _ => RosaAdapter::new(w, rank, config.scheme, rng)?,
            }),
        })
    })?;
    Ok(net)
}

fn build_optimizer(config: &TrainConfig) -> Result<Box<dyn Optimizer>> {
    Ok(match config.optimizer {
        OptimizerKind::Sgd => Box::new(Sgd::new(config.lr)?),
        OptimizerKind::Adamw => Box::new(AdamW::new(config.adamw())?),
    })
}

fn loss_on(net: &Mlp, data: &Dataset) -> Result<f64> {
    Ok(mse_loss(&net.predict(&data.x)?, &data.y)?)
}

fn residual_ranks(net: &Mlp, reference: &Mlp) -> Result<Vec<usize>> {
    net.layers()
        .iter()
        .zip(reference.layers())
        .map(|(l, r)| {
            let diff = l.adapter.effective_weight().sub(&r.adapter.effective_weight())?;
            Ok(numerical_rank(&diff, RESIDUAL_RANK_TOL)?)
        })
        .collect()
}

fn check_finite(loss: f64, what: &str, epoch: usize) -> Result<f64> {
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(ExpError::Numeric(format!("{what} loss is {loss} at epoch {epoch}")))
    }
}

/// Trains an adapted copy of `data.base` on `data.train`.
///
/// Residual ranks are measured against `data.base`. For LoRA runs the
/// final residual rank of every layer is checked against the adapter rank
/// and a violation is reported as a numeric failure.
pub fn run_training(config: &TrainConfig, data: &SyntheticData) -> Result<RunOutput> {
    config.validate()?;
    if data.base.in_dim() != config.data.layer_dims[0] || data.train.x.rows() != data.base.in_dim() {
        return Err(ExpError::config("data", "dataset does not match the configured layer widths"));
    }
    let mut rng = seeded_rng(config.seed);
    let mut net = build_adapted(config, &data.base, &mut rng)?;
    let initial = net.clone();
    let mut optimizer = build_optimizer(config)?;

    let initial_train_loss = check_finite(loss_on(&net, &data.train)?, "train", 0)?;
    let initial_val_loss = check_finite(loss_on(&net, &data.val)?, "validation", 0)?;

    let resample = config.resamples();
    let period = config.factorize_every as u64;
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut records = Vec::with_capacity(config.epochs);
    let mut step = 0u64;
    let mut factorize_events = 0;
    let mut moment_resets = 0;

    let mut factorize = |net: &mut Mlp, optimizer: &mut dyn Optimizer, rng: &mut SeededRng| -> Result<()> {
        let layers = net.factorize_rosa_layers(rng)?;
        if config.reset_moments_on_factorize {
            for &layer in &layers {
                optimizer.reset_factors(layer);
            }
            moment_resets += layers.len();
        }
        factorize_events += 1;
        Ok(())
    };

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut event = false;
        for chunk in order.chunks(config.batch_size) {
            let batch = data.train.batch(chunk);
            let (pred, cache) = net.forward(&batch.x)?;
            let grads = net.backward(&cache, &mse_grad(&pred, &batch.y)?)?;
            optimizer.step(&mut net.params_mut(), &grads)?;
            net.record_step();
            step += 1;
            if resample && config.factorize_unit == FactorizeUnit::Steps && step % period == 0 {
                factorize(&mut net, optimizer.as_mut(), &mut rng)?;
                event = true;
            }
        }
        if resample && config.factorize_unit == FactorizeUnit::Epochs && epoch as u64 % period == 0 {
            factorize(&mut net, optimizer.as_mut(), &mut rng)?;
            event = true;
        }
        records.push(MetricsRecord {
            step,
            epoch,
            train_loss: check_finite(loss_on(&net, &data.train)?, "train", epoch)?,
            val_loss: check_finite(loss_on(&net, &data.val)?, "validation", epoch)?,
            trainable_param_count: net.trainable_count(),
            cumulative_residual_rank: residual_ranks(&net, &data.base)?,
            factorize_event: event,
        });
    }

    if let (Method::Lora, Some(rank)) = (config.method, config.rank) {
        let last = &records[records.len() - 1].cumulative_residual_rank;
        if let Some(layer) = last.iter().position(|&r| r > rank) {
            return Err(ExpError::Numeric(format!(
                "LoRA residual of layer {layer} has rank {} above the adapter rank {rank}",
                last[layer]
            )));
        }
    }

    Ok(RunOutput {
        records,
        initial,
        final_net: net,
        initial_train_loss,
        initial_val_loss,
        factorize_events,
        moment_resets,
    })
}
