//! Command-line front end.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rosa_core::SamplingScheme;

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::config::{Ablation, FactorizeUnit, Method, TrainConfig, DEFAULT_LR_GRID};
use crate::error::{ExpError, Result};
use crate::grid::{ablation_variants, compare, scheme_variants, Comparison, Variant, ABLATION_ORDER};
use crate::output::{metrics_csv, write_text, RunSummary};
use crate::spectrum::spectrum_report;
use crate::synthetic::generate_synthetic;
use crate::theorem::{run_theorem_suite, TheoremSuiteConfig};
use crate::train::run_training;

#[derive(Debug, Parser)]
#[command(name = "rosa", version, about = "Low-rank adapter experiments on synthetic data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one configuration and write metrics, summary, spectrum and checkpoints.
    Train(TrainArgs),
    /// Run the exact low-rank regression suite.
    Theorem(TheoremArgs),
    /// Residual spectrum between two checkpoints.
    Spectrum(SpectrumArgs),
    /// Compare LoRA with the progressive ROSA ablations over an LR grid.
    Ablate(GridArgs),
    /// Compare ROSA subspace sampling schemes over an LR grid.
    Schemes(GridArgs),
}

/// Flags that override values from `--config`.
#[derive(Debug, Default, Args)]
pub struct Overrides {
    /// JSON file with `TrainConfig` fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// ft, lora, rosa or ia3.
    #[arg(long)]
    pub method: Option<Method>,
    #[arg(long)]
    pub rank: Option<usize>,
    #[arg(long)]
    pub factorize_every: Option<usize>,
    /// steps or epochs.
    #[arg(long)]
    pub factorize_unit: Option<FactorizeUnit>,
    /// random, top or bottom.
    #[arg(long)]
    pub scheme: Option<SamplingScheme>,
    /// svd-init-only, svd-init-factorize or full.
    #[arg(long)]
    pub ablation: Option<Ablation>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
}

impl Overrides {
    pub fn resolve(&self) -> Result<TrainConfig> {
        let mut c = match &self.config {
            Some(path) => TrainConfig::from_json_file(path)?,
            None => TrainConfig::default(),
        };
        if let Some(method) = self.method {
            c.method = method;
            if !method.takes_rank() && self.rank.is_none() {
                c.rank = None;
            }
            if method != Method::Rosa && self.ablation.is_none() {
                c.ablation = None;
                c.deferred_init = false;
            }
        }
        if let Some(seed) = self.seed {
            c.seed = seed;
        }
        if self.rank.is_some() {
            c.rank = self.rank;
        }
        if let Some(k) = self.factorize_every {
            c.factorize_every = k;
        }
        if let Some(unit) = self.factorize_unit {
            c.factorize_unit = unit;
        }
        if let Some(scheme) = self.scheme {
            c.scheme = scheme;
        }
        if self.ablation.is_some() {
            c.ablation = self.ablation;
        }
        if let Some(lr) = self.lr {
            c.lr = lr;
        }
        if let Some(epochs) = self.epochs {
            c.epochs = epochs;
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub overrides: Overrides,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TheoremArgs {
    /// Number of random instances (seeds 0..n).
    #[arg(long, default_value_t = 1)]
    pub seeds: u64,
    /// Scale of the out-of-range noise for the non-realizable rows; 0 skips them.
    #[arg(long, default_value_t = 0.5)]
    pub noise: f64,
    /// Directory for `theorem.csv`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SpectrumArgs {
    #[arg(long)]
    pub initial: PathBuf,
    #[arg(long = "final")]
    pub final_path: PathBuf,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    #[command(flatten)]
    pub overrides: Overrides,
    /// Number of seeds (0..n); each sets the data and training seed.
    #[arg(long, default_value_t = 1)]
    pub seeds: u64,
    /// Comma-separated learning rates; `--lr` alone restricts the grid to one value.
    #[arg(long, value_delimiter = ',')]
    pub lrs: Vec<f64>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| ExpError::io(dir, e))
}

fn train(args: &TrainArgs) -> Result<()> {
    let config = args.overrides.resolve()?;
    create_dir(&args.out)?;
    let data = generate_synthetic(&config.data)?;
    let run = run_training(&config, &data)?;
    let summary = RunSummary::new(&config, &run);
    write_text(&args.out.join("metrics.csv"), &metrics_csv(&run.records))?;
    write_text(&args.out.join("summary.json"), &summary.to_json())?;
    let spectrum = spectrum_report(&data.base, &run.final_net)?;
    write_text(&args.out.join("spectrum.csv"), &spectrum.to_csv())?;
    save_checkpoint(&data.base, &args.out.join("initial.rsa1"))?;
    save_checkpoint(&run.final_net, &args.out.join("model.rsa1"))?;
    println!(
        "{} rank={} epochs={} final train {:.6e} val {:.6e} trainable={} factorize_events={} residual_ranks={:?}",
        config.method,
        config.rank.map_or("-".to_string(), |r| r.to_string()),
        summary.epochs,
        summary.final_train_loss,
        summary.final_val_loss,
        summary.trainable_param_count,
        summary.factorize_events,
        summary.final_residual_ranks
    );
    Ok(())
}

fn theorem(args: &TheoremArgs) -> Result<()> {
    let config = TheoremSuiteConfig {
        seeds: (0..args.seeds.max(1)).collect(),
        noise_scale: args.noise,
        ..TheoremSuiteConfig::default()
    };
    let report = run_theorem_suite(&config)?;
    println!(
        "{:>4} {:>4} {:>10} {:>6} {:>8} {:>12} {:>12} {:>12} {:>6}",
        "seed", "R", "realizable", "T", "observed", "excess@T", "excess@T-1", "lora bound", "ok"
    );
    for r in &report.rows {
        println!(
            "{:>4} {:>4} {:>10} {:>6} {:>8} {:>12.3e} {:>12} {:>12.4e} {:>6}",
            r.seed,
            r.rank,
            r.realizable,
            r.t_predicted,
            r.observed_step.map_or("-".to_string(), |s| s.to_string()),
            r.excess_at_t,
            r.excess_before_t.map_or("-".to_string(), |e| format!("{e:.3e}")),
            r.lora_lower_bound,
            r.passed()
        );
    }
    if let Some(dir) = &args.out {
        create_dir(dir)?;
        write_text(&dir.join("theorem.csv"), &report.to_csv())?;
    }
    if report.passed() {
        Ok(())
    } else {
        Err(ExpError::Numeric("one or more suite checks failed".into()))
    }
}

fn spectrum(args: &SpectrumArgs) -> Result<()> {
    let initial = load_checkpoint(&args.initial)?;
    let final_net = load_checkpoint(&args.final_path)?;
    let report = spectrum_report(&initial, &final_net)?;
    create_dir(&args.out)?;
    write_text(&args.out.join("spectrum.csv"), &report.to_csv())?;
    for l in &report.layers {
        let top = l.singular_values.first().copied().unwrap_or(0.0);
        println!("layer {}: numerical rank {}, largest {:.4e}", l.layer, l.numerical_rank, top);
    }
    Ok(())
}

fn grid(args: &GridArgs, variants: fn(&TrainConfig) -> Vec<Variant>, name: &str) -> Result<Comparison> {
    let config = args.overrides.resolve()?;
    let lrs = match (args.lrs.is_empty(), args.overrides.lr) {
        (false, _) => args.lrs.clone(),
        (true, Some(lr)) => vec![lr],
        (true, None) => DEFAULT_LR_GRID.to_vec(),
    };
    let seeds: Vec<u64> = (0..args.seeds.max(1)).collect();
    let cmp = compare(&variants(&config), &lrs, &seeds)?;
    create_dir(&args.out)?;
    write_text(&args.out.join(format!("{name}.csv")), &cmp.cells_csv())?;
    let summaries = serde_json::to_string_pretty(&cmp.summaries).expect("plain data");
    write_text(&args.out.join(format!("{name}_summary.json")), &summaries)?;
    print!("{}", cmp.summary_table());
    Ok(cmp)
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Train(a) => train(a),
        Command::Theorem(a) => theorem(a),
        Command::Spectrum(a) => spectrum(a),
        Command::Ablate(a) => {
            let cmp = grid(a, ablation_variants, "ablate")?;
            let verdict = if cmp.ordered(&ABLATION_ORDER) { "holds" } else { "does not hold" };
            println!("ordering {}: {verdict}", ABLATION_ORDER.join(" <= "));
            Ok(())
        }
        Command::Schemes(a) => grid(a, scheme_variants, "schemes").map(|_| ()),
    }
}
