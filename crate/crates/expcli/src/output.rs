//! Run artifacts: per-epoch metrics CSV and the JSON summary.

use std::path::Path;

use rosa_core::adapters::{trainable_reduction, AdapterState};
use rosa_core::network::Mlp;
use serde::Serialize;

use crate::config::TrainConfig;
use crate::error::{ExpError, Result};
use crate::train::{MetricsRecord, RunOutput};

pub const METRICS_HEADER: &str =
    "step,epoch,train_loss,val_loss,trainable_param_count,cumulative_residual_rank,factorize_event";

/// Losses are written with the shortest representation that parses back to
/// the same `f64`. Residual ranks are `;`-separated per layer.
pub fn metrics_csv(records: &[MetricsRecord]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in records {
        let ranks: Vec<String> = r.cumulative_residual_rank.iter().map(|k| k.to_string()).collect();
        out.push_str(&format!(
            "{},{},{:e},{:e},{},{},{}\n",
            r.step,
            r.epoch,
            r.train_loss,
            r.val_loss,
            r.trainable_param_count,
            ranks.join(";"),
            r.factorize_event
        ));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerAccount {
    pub layer: usize,
    pub kind: String,
    /// (M, N) = (out, in).
    pub shape: (usize, usize),
    pub adapter_params: usize,
    pub bias_params: usize,
    /// `MN / adapter_params`, the reduction against training the full weight.
    pub reduction: f64,
}

pub fn layer_accounts(net: &Mlp) -> Vec<LayerAccount> {
    net.layers()
        .iter()
        .enumerate()
        .map(|(layer, l)| {
            let (m, n) = l.adapter.shape();
            let adapter_params = l.adapter.trainable_count();
            let reduction = match &l.adapter {
                AdapterState::Rosa(r) => trainable_reduction(m, n, r.rank()),
                AdapterState::Lora(a) => trainable_reduction(m, n, a.rank()),
                _ => (m * n) as f64 / adapter_params as f64,
            };
            LayerAccount {
                layer,
                kind: l.adapter.kind().to_string(),
                shape: (m, n),
                adapter_params,
                bias_params: l.bias.rows(),
                reduction,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub config: TrainConfig,
    pub epochs: usize,
    pub steps: u64,
    pub initial_train_loss: f64,
    pub initial_val_loss: f64,
    pub final_train_loss: f64,
    pub final_val_loss: f64,
    pub best_val_loss: f64,
    pub trainable_param_count: usize,
    pub layers: Vec<LayerAccount>,
    pub factorize_events: usize,
    /// Layer-level optimizer moment resets caused by factorization.
    pub moment_resets: usize,
    pub final_residual_ranks: Vec<usize>,
}

impl RunSummary {
    pub fn new(config: &TrainConfig, run: &RunOutput) -> Self {
        let last = run.final_record();
        Self {
            config: config.clone(),
            epochs: last.epoch,
            steps: last.step,
            initial_train_loss: run.initial_train_loss,
            initial_val_loss: run.initial_val_loss,
            final_train_loss: last.train_loss,
            final_val_loss: last.val_loss,
            best_val_loss: run.records.iter().map(|r| r.val_loss).fold(f64::INFINITY, f64::min),
            trainable_param_count: last.trainable_param_count,
            layers: layer_accounts(&run.final_net),
            factorize_events: run.factorize_events,
            moment_resets: run.moment_resets,
            final_residual_ranks: last.cumulative_residual_rank.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("summary is plain data")
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| ExpError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rosa_core::adapters::{FullAdapter, Ia3Adapter, LoraAdapter, RosaAdapter};
    use rosa_core::linalg::seeded_rng;
    use rosa_core::network::Activation;
    use rosa_core::SamplingScheme;

    #[test]
    fn csv_round_trips_losses_exactly() {
        let rec = MetricsRecord {
            step: 3,
            epoch: 1,
            train_loss: 0.1 + 0.2,
            val_loss: 1.0 / 3.0,
            trainable_param_count: 42,
            cumulative_residual_rank: vec![3, 5],
            factorize_event: true,
        };
        let csv = metrics_csv(&[rec.clone()]);
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some(METRICS_HEADER));
        let fields: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(fields[2].parse::<f64>().unwrap().to_bits(), rec.train_loss.to_bits());
        assert_eq!(fields[3].parse::<f64>().unwrap().to_bits(), rec.val_loss.to_bits());
        assert_eq!(fields[5], "3;5");
        assert_eq!(fields[6], "true");
    }

    #[test]
    fn accounting_per_adapter_kind() {
        let mut rng = seeded_rng(0);
        let mut net = Mlp::random(&[10, 6, 6, 6, 4], &[Activation::Identity; 4], &mut rng).unwrap();
        net.adapt(|i, w| {
            Ok(match i {
                0 => AdapterState::Rosa(RosaAdapter::new_deferred(w, 2, SamplingScheme::Random)?),
                1 => AdapterState::Lora(LoraAdapter::new(w, 3, &mut rng)?),
                2 => AdapterState::Ia3(Ia3Adapter::new(w)),
                _ => AdapterState::Full(FullAdapter::new(w)),
            })
        })
        .unwrap();
        let acc = layer_accounts(&net);
        let params: Vec<usize> = acc.iter().map(|a| a.adapter_params).collect();
        assert_eq!(params, vec![2 * 16, 3 * 12, 6, 24]);
        assert_eq!(acc[0].reduction, 60.0 / 32.0);
        assert_eq!(acc[2].reduction, 6.0);
        assert_eq!(acc[3].reduction, 1.0);
        let total: usize = acc.iter().map(|a| a.adapter_params + a.bias_params).sum();
        assert_eq!(total, net.trainable_count());
    }
}
