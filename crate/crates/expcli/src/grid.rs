//! Best-of-learning-rate comparisons across method variants and seeds.
//!
//! Every (variant, seed, learning rate) run is independent and single
//! threaded; runs are spread over the rayon pool. Diverged runs count as
//! an infinite final loss rather than aborting the grid.

use std::collections::BTreeMap;

use rayon::prelude::*;
use rosa_core::SamplingScheme;
use serde::Serialize;

use crate::config::{Ablation, Method, SyntheticSpec, TrainConfig};
use crate::error::{ExpError, Result};
use crate::synthetic::{generate_synthetic, SyntheticData};
use crate::train::{run_training, RunOutput};

#[derive(Debug, Clone)]
pub struct Variant {
    pub label: String,
    pub config: TrainConfig,
}

impl Variant {
    pub fn new(label: impl Into<String>, config: TrainConfig) -> Self {
        Self {
            label: label.into(),
            config,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridCell {
    pub variant: String,
    pub seed: u64,
    pub lr: f64,
    /// Infinite when the run failed.
    pub final_val_loss: f64,
    /// Per-layer residual ranks at the end of the run; empty when it failed.
    pub final_residual_ranks: Vec<usize>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariantSummary {
    pub variant: String,
    /// Best-of-grid final validation loss, one entry per seed.
    pub best_per_seed: Vec<f64>,
    pub best_lr_per_seed: Vec<f64>,
    pub mean_best: f64,
}

#[derive(Debug, Clone)]
pub struct Comparison {
    pub cells: Vec<GridCell>,
    pub summaries: Vec<VariantSummary>,
    /// Winning run per (variant, seed), in variant then seed order.
    pub best_runs: Vec<(String, u64, RunOutput)>,
}

impl Comparison {
    pub fn summary(&self, variant: &str) -> Option<&VariantSummary> {
        self.summaries.iter().find(|s| s.variant == variant)
    }

    pub fn best_run(&self, variant: &str, seed: u64) -> Option<&RunOutput> {
        self.best_runs
            .iter()
            .find(|(v, s, _)| v == variant && *s == seed)
            .map(|(_, _, r)| r)
    }

    /// Whether the mean best losses are non-decreasing in `order`.
    pub fn ordered(&self, order: &[&str]) -> bool {
        let means: Vec<f64> = order
            .iter()
            .map(|v| self.summary(v).map_or(f64::NAN, |s| s.mean_best))
            .collect();
        means.windows(2).all(|w| w[0] <= w[1])
    }

    pub fn cells_csv(&self) -> String {
        let mut out = String::from("variant,seed,lr,final_val_loss,final_residual_ranks,error\n");
        for c in &self.cells {
            let err = c.error.as_deref().unwrap_or("").replace([',', '\n'], " ");
            let ranks: Vec<String> = c.final_residual_ranks.iter().map(|r| r.to_string()).collect();
            out.push_str(&format!(
                "{},{},{:e},{:e},{},{}\n",
                c.variant,
                c.seed,
                c.lr,
                c.final_val_loss,
                ranks.join(";"),
                err
            ));
        }
        out
    }

    pub fn summary_table(&self) -> String {
        let mut out = format!("{:<28} {:>14} {:>12}\n", "variant", "mean best val", "best lrs");
        for s in &self.summaries {
            let lrs: Vec<String> = s.best_lr_per_seed.iter().map(|lr| format!("{lr:e}")).collect();
            out.push_str(&format!("{:<28} {:>14.6e} {:>12}\n", s.variant, s.mean_best, lrs.join("/")));
        }
        out
    }
}

/// Runs every variant at every learning rate on every seed. A seed sets both
/// the data seed and the training seed.
pub fn compare(variants: &[Variant], lrs: &[f64], seeds: &[u64]) -> Result<Comparison> {
    if variants.is_empty() || lrs.is_empty() || seeds.is_empty() {
        return Err(ExpError::config("grid", "need at least one variant, learning rate and seed"));
    }
    for v in variants {
        v.config.validate()?;
    }
    // Variants with equal data specs share one generated dataset per seed.
    let owner = |vi: usize| {
        variants[..vi]
            .iter()
            .position(|o| o.config.data == variants[vi].config.data)
            .unwrap_or(vi)
    };
    let mut datasets: BTreeMap<(usize, u64), SyntheticData> = BTreeMap::new();
    for vi in 0..variants.len() {
        for &seed in seeds {
            if let std::collections::btree_map::Entry::Vacant(slot) = datasets.entry((owner(vi), seed)) {
                slot.insert(generate_synthetic(&SyntheticSpec {
                    seed,
                    ..variants[vi].config.data.clone()
                })?);
            }
        }
    }

    let jobs: Vec<(usize, u64, f64)> = (0..variants.len())
        .flat_map(|vi| seeds.iter().flat_map(move |&s| lrs.iter().map(move |&lr| (vi, s, lr))))
        .collect();
    let results: Vec<Result<RunOutput>> = jobs
        .par_iter()
        .map(|&(vi, seed, lr)| {
            let config = TrainConfig {
                lr,
                seed,
                data: SyntheticSpec {
                    seed,
                    ..variants[vi].config.data.clone()
                },
                ..variants[vi].config.clone()
            };
            run_training(&config, &datasets[&(owner(vi), seed)])
        })
        .collect();

    let mut cells = Vec::with_capacity(jobs.len());
    let mut best: BTreeMap<(usize, u64), (f64, f64, Option<RunOutput>)> = BTreeMap::new();
    for (&(vi, seed, lr), result) in jobs.iter().zip(results) {
        let (loss, error, run) = match result {
            Ok(run) => (run.final_val_loss(), None, Some(run)),
            Err(ExpError::Numeric(msg)) => (f64::INFINITY, Some(msg), None),
            Err(ExpError::Core(e)) => (f64::INFINITY, Some(e.to_string()), None),
            Err(other) => return Err(other),
        };
        cells.push(GridCell {
            variant: variants[vi].label.clone(),
            seed,
            lr,
            final_val_loss: loss,
            final_residual_ranks: run
                .as_ref()
                .map_or_else(Vec::new, |r| r.final_record().cumulative_residual_rank.clone()),
            error,
        });
        let entry = best.entry((vi, seed)).or_insert((f64::INFINITY, lr, None));
        if run.is_some() && (entry.2.is_none() || loss < entry.0) {
            *entry = (loss, lr, run);
        }
    }

    let mut summaries = Vec::with_capacity(variants.len());
    let mut best_runs = Vec::new();
    for (vi, v) in variants.iter().enumerate() {
        let mut best_per_seed = Vec::new();
        let mut best_lr_per_seed = Vec::new();
        for &seed in seeds {
            let (loss, lr, run) = best.remove(&(vi, seed)).expect("every cell ran");
            best_per_seed.push(loss);
            best_lr_per_seed.push(lr);
            if let Some(run) = run {
                best_runs.push((v.label.clone(), seed, run));
            }
        }
        let mean_best = best_per_seed.iter().sum::<f64>() / best_per_seed.len() as f64;
        summaries.push(VariantSummary {
            variant: v.label.clone(),
            best_per_seed,
            best_lr_per_seed,
            mean_best,
        });
    }
    Ok(Comparison {
        cells,
        summaries,
        best_runs,
    })
}

pub const ABLATION_ORDER: [&str; 3] = ["rosa_full", "rosa_svd_init_factorize", "rosa_svd_init_only"];

/// LoRA at the base rank plus the three progressive ROSA variants.
pub fn ablation_variants(base: &TrainConfig) -> Vec<Variant> {
    let rank = base.rank.or(TrainConfig::default().rank);
    let mut out = vec![Variant::new(
        "lora",
        TrainConfig {
            method: Method::Lora,
            rank,
            ablation: None,
            deferred_init: false,
            ..base.clone()
        },
    )];
    for (label, ablation) in [
        ("rosa_svd_init_only", Ablation::SvdInitOnly),
        ("rosa_svd_init_factorize", Ablation::SvdInitFactorize),
        ("rosa_full", Ablation::Full),
    ] {
        out.push(Variant::new(
            label,
            TrainConfig {
                method: Method::Rosa,
                rank,
                ablation: Some(ablation),
                deferred_init: false,
                ..base.clone()
            },
        ));
    }
    out
}

/// Full ROSA under each subspace sampling scheme.
pub fn scheme_variants(base: &TrainConfig) -> Vec<Variant> {
    let rank = base.rank.or(TrainConfig::default().rank);
    SamplingScheme::ALL
        .iter()
        .map(|&scheme| {
            Variant::new(
                format!("rosa_{}", scheme.as_str()),
                TrainConfig {
                    method: Method::Rosa,
                    rank,
                    scheme,
                    ablation: None,
                    ..base.clone()
                },
            )
        })
        .collect()
}

/// Full fine-tuning plus ROSA and LoRA at each rank.
pub fn rank_sweep_variants(base: &TrainConfig, ranks: &[usize]) -> Vec<Variant> {
    let mut out = vec![Variant::new(
        "ft",
        TrainConfig {
            method: Method::Ft,
            rank: None,
            ablation: None,
            deferred_init: false,
            ..base.clone()
        },
    )];
    for &r in ranks {
        for (label, method) in [("rosa", Method::Rosa), ("lora", Method::Lora)] {
            out.push(Variant::new(
                format!("{label}{r}"),
                TrainConfig {
                    method,
                    rank: Some(r),
                    ablation: None,
                    deferred_init: false,
                    ..base.clone()
                },
            ));
        }
    }
    out
}
