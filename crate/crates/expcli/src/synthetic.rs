//! Teacher/student data: a random base network `f`, a target `f*` that adds
//! a random low-rank matrix to every weight, and i.i.d. Gaussian inputs
//! labelled by `f*`.

use rosa_core::adapters::{AdapterState, FullAdapter};
use rosa_core::network::{Activation, Mlp};
use rosa_core::linalg::seeded_rng;
use rosa_core::Matrix;

use crate::config::{HiddenActivation, SyntheticSpec};
use crate::error::Result;

/// Column-major sample set: `x` is `d_in × n`, `y` is `d_out × n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Matrix,
    pub y: Matrix,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.x.cols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn batch(&self, indices: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select_columns(indices),
            y: self.y.select_columns(indices),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub train: Dataset,
    pub val: Dataset,
    /// The starting network `f`.
    pub base: Mlp,
    /// The network `f*` that generated the labels.
    pub target: Mlp,
}

pub fn layer_activations(spec: &SyntheticSpec) -> Vec<Activation> {
    let hidden = match spec.activation {
        HiddenActivation::Identity => Activation::Identity,
        HiddenActivation::Relu => Activation::Relu,
    };
    let layers = spec.layer_dims.len() - 1;
    (0..layers)
        .map(|i| if i + 1 == layers { Activation::Identity } else { hidden })
        .collect()
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let mut rng = seeded_rng(spec.seed);
    let base = Mlp::random(&spec.layer_dims, &layer_activations(spec), &mut rng)?;

    let r = spec.target_adapter_rank;
    let mut target = base.clone();
    target.adapt(|_, w| {
        let (m, n) = w.shape();
        if r == 0 {
            return Ok(AdapterState::Full(FullAdapter::new(w)));
        }
        // Entry variance of P·Q is r; rescale to the He variance 2/fan_in
        // so the shift is as large as the weight itself.
        let p = Matrix::random_normal(m, r, 1.0, &mut rng);
        let q = Matrix::random_normal(r, n, (2.0 / (n * r) as f64).sqrt(), &mut rng);
        Ok(AdapterState::Full(FullAdapter::new(&w.add(&p.matmul(&q)?)?)))
    })?;

    let input_std = spec.input_sigma.sqrt();
    let mut sample = |count: usize| -> Result<Dataset> {
        let x = Matrix::random_normal(spec.layer_dims[0], count, input_std, &mut rng);
        let y = target.predict(&x)?;
        Ok(Dataset { x, y })
    };
    let train = sample(spec.n_train)?;
    let val = sample(spec.n_val)?;
    Ok(SyntheticData {
        train,
        val,
        base,
        target,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rosa_core::linalg::numerical_rank;
    use rosa_core::network::mse_loss;

    fn small(rank: usize, seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            layer_dims: vec![12, 10, 8],
            target_adapter_rank: rank,
            n_train: 40,
            n_val: 20,
            seed,
            ..SyntheticSpec::default()
        }
    }

    #[test]
    fn zero_rank_target_equals_base() {
        let data = generate_synthetic(&small(0, 3)).unwrap();
        let pred = data.base.predict(&data.train.x).unwrap();
        assert!(mse_loss(&pred, &data.train.y).unwrap() < 1e-24);
    }

    #[test]
    fn weight_shift_has_target_rank() {
        for rank in [1, 3, 8] {
            let data = generate_synthetic(&small(rank, 11)).unwrap();
            for (wb, wt) in data.base.effective_weights().iter().zip(data.target.effective_weights()) {
                assert_eq!(numerical_rank(&wt.sub(wb).unwrap(), 1e-8).unwrap(), rank);
            }
        }
    }

    #[test]
    fn same_seed_same_data() {
        let a = generate_synthetic(&small(4, 5)).unwrap();
        let b = generate_synthetic(&small(4, 5)).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.val, b.val);
        assert_eq!(a.target, b.target);
        let c = generate_synthetic(&small(4, 6)).unwrap();
        assert_ne!(a.train, c.train);
    }

    #[test]
    fn infeasible_rank_rejected() {
        assert!(generate_synthetic(&small(9, 0)).is_err());
    }

    #[test]
    fn output_layer_is_linear() {
        let acts = layer_activations(&small(1, 0));
        assert_eq!(acts, vec![Activation::Relu, Activation::Identity]);
    }
}
