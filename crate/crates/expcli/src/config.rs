//! Run configuration. The JSON form mirrors the struct field names; every
//! field has a default so partial documents are accepted.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rosa_core::optim::AdamWConfig;
use rosa_core::SamplingScheme;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{ExpError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Ft,
    Lora,
    Rosa,
    Ia3,
}

impl Method {
    pub fn takes_rank(self) -> bool {
        matches!(self, Method::Lora | Method::Rosa)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Ft => "ft",
            Method::Lora => "lora",
            Method::Rosa => "rosa",
            Method::Ia3 => "ia3",
        })
    }
}

impl FromStr for Method {
    type Err = ExpError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ft" | "full" => Ok(Method::Ft),
            "lora" => Ok(Method::Lora),
            "rosa" => Ok(Method::Rosa),
            "ia3" => Ok(Method::Ia3),
            other => Err(ExpError::config("method", format!("unknown method {other:?}"))),
        }
    }
}

/// Progressive ROSA ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    /// `W + U_R Σ_R V_R` with nothing subtracted, never resampled.
    SvdInitOnly,
    /// `W_fixed + AB` factorization at init, never resampled.
    SvdInitFactorize,
    /// Factorize at init and merge/resample every period.
    #[default]
    Full,
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Ablation::SvdInitOnly => "svd_init_only",
            Ablation::SvdInitFactorize => "svd_init_factorize",
            Ablation::Full => "full",
        })
    }
}

impl FromStr for Ablation {
    type Err = ExpError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "svd_init_only" => Ok(Ablation::SvdInitOnly),
            "svd_init_factorize" => Ok(Ablation::SvdInitFactorize),
            "full" => Ok(Ablation::Full),
            other => Err(ExpError::config("ablation", format!("unknown ablation {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FactorizeUnit {
    Steps,
    #[default]
    Epochs,
}

impl FromStr for FactorizeUnit {
    type Err = ExpError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "steps" | "step" => Ok(FactorizeUnit::Steps),
            "epochs" | "epoch" => Ok(FactorizeUnit::Epochs),
            other => Err(ExpError::config("factorize_unit", format!("unknown unit {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    #[default]
    Adamw,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HiddenActivation {
    Identity,
    #[default]
    Relu,
}

mod scheme_serde {
    use super::*;

    pub fn serialize<S: Serializer>(scheme: &SamplingScheme, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(scheme.as_str())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<SamplingScheme, D::Error> {
        let raw = String::deserialize(d)?;
        raw.parse().map_err(serde::de::Error::custom)
    }
}

/// Synthetic teacher/student setup: a random base network `f` and a target
/// `f*` obtained by adding random low-rank matrices to each weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    /// Widths from input to output; one layer per adjacent pair.
    pub layer_dims: Vec<usize>,
    /// Activation after every layer except the last.
    pub activation: HiddenActivation,
    pub target_adapter_rank: usize,
    /// Inputs are drawn from `N(0, input_sigma · I)`.
    pub input_sigma: f64,
    pub n_train: usize,
    pub n_val: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            layer_dims: vec![64, 64, 64],
            activation: HiddenActivation::Relu,
            target_adapter_rank: 24,
            input_sigma: 1.0,
            n_train: 2048,
            n_val: 512,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.layer_dims.len() < 2 || self.layer_dims.contains(&0) {
            return Err(ExpError::config(
                "data.layer_dims",
                "need at least two positive widths",
            ));
        }
        let min_dim = self.layer_dims.iter().copied().min().unwrap_or(0);
        if self.target_adapter_rank > min_dim {
            return Err(ExpError::config(
                "data.target_adapter_rank",
                format!("{} exceeds the smallest layer width {min_dim}", self.target_adapter_rank),
            ));
        }
        if !(self.input_sigma > 0.0 && self.input_sigma.is_finite()) {
            return Err(ExpError::config("data.input_sigma", "must be positive and finite"));
        }
        if self.n_train == 0 || self.n_val == 0 {
            return Err(ExpError::config("data.n_train", "train and validation sizes must be positive"));
        }
        Ok(())
    }

    /// Smallest `min(M, N)` over the layers.
    pub fn max_layer_rank(&self) -> usize {
        self.layer_dims
            .windows(2)
            .map(|w| w[0].min(w[1]))
            .min()
            .unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub method: Method,
    /// Adapter rank; required for LoRA and ROSA, rejected otherwise.
    pub rank: Option<usize>,
    pub factorize_every: usize,
    pub factorize_unit: FactorizeUnit,
    #[serde(with = "scheme_serde")]
    pub scheme: SamplingScheme,
    /// ROSA only; `None` means the full method.
    pub ablation: Option<Ablation>,
    /// ROSA only: start from `A = B = 0` and factorize first at the end of
    /// the first period, instead of factorizing at initialization.
    pub deferred_init: bool,
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub reset_moments_on_factorize: bool,
    pub data: SyntheticSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamWConfig::default();
        Self {
            method: Method::Rosa,
            rank: Some(8),
            factorize_every: 2,
            factorize_unit: FactorizeUnit::Epochs,
            scheme: SamplingScheme::Random,
            ablation: None,
            deferred_init: false,
            optimizer: OptimizerKind::Adamw,
            lr: adam.learning_rate,
            beta1: adam.beta1,
            beta2: adam.beta2,
            epsilon: adam.epsilon,
            weight_decay: 0.0,
            epochs: 300,
            batch_size: 8,
            seed: 0,
            reset_moments_on_factorize: true,
            data: SyntheticSpec::default(),
        }
    }
}

/// Learning rates searched by the grid commands.
pub const DEFAULT_LR_GRID: [f64; 4] = [2e-2, 2e-3, 2e-4, 2e-5];

impl TrainConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| ExpError::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| ExpError::config("config", e.to_string()))
    }

    pub fn ablation(&self) -> Ablation {
        self.ablation.unwrap_or_default()
    }

    /// Whether the run merges and resamples ROSA subspaces during training.
    pub fn resamples(&self) -> bool {
        self.method == Method::Rosa && self.ablation() == Ablation::Full
    }

    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            learning_rate: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
            weight_decay: self.weight_decay,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        match (self.method.takes_rank(), self.rank) {
            (true, None) => return Err(ExpError::config("rank", format!("required for method {}", self.method))),
            (false, Some(_)) => {
                return Err(ExpError::config("rank", format!("not applicable to method {}", self.method)))
            }
            (true, Some(r)) => {
                let bound = self.data.max_layer_rank();
                if r == 0 || r > bound {
                    return Err(ExpError::config("rank", format!("must lie in [1, {bound}], got {r}")));
                }
            }
            (false, None) => {}
        }
        if self.method != Method::Rosa {
            if self.ablation.is_some() {
                return Err(ExpError::config("ablation", "only applies to method rosa"));
            }
            if self.deferred_init {
                return Err(ExpError::config("deferred_init", "only applies to method rosa"));
            }
        }
        if self.deferred_init && self.ablation() != Ablation::Full {
            return Err(ExpError::config(
                "deferred_init",
                "a zero-initialized adapter never trains without resampling",
            ));
        }
        if self.factorize_every == 0 {
            return Err(ExpError::config("factorize_every", "must be at least 1"));
        }
        if self.epochs == 0 {
            return Err(ExpError::config("epochs", "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(ExpError::config("batch_size", "must be at least 1"));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(ExpError::config("lr", "must be finite and >= 0"));
        }
        if self.optimizer == OptimizerKind::Adamw {
            for (field, beta) in [("beta1", self.beta1), ("beta2", self.beta2)] {
                if !(0.0..1.0).contains(&beta) {
                    return Err(ExpError::config(field, "must lie in [0, 1)"));
                }
            }
            if !(self.epsilon > 0.0) {
                return Err(ExpError::config("epsilon", "must be positive"));
            }
            if !(self.weight_decay >= 0.0) {
                return Err(ExpError::config("weight_decay", "must be >= 0"));
            }
        }
        Ok(())
    }
}
