//! Singular spectra of per-layer weight residuals.

use rosa_core::linalg::svd;
use rosa_core::network::Mlp;
use serde::Serialize;

use crate::error::Result;
use crate::train::RESIDUAL_RANK_TOL;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerSpectrum {
    pub layer: usize,
    /// Descending singular values of `W_final − W_initial`.
    pub singular_values: Vec<f64>,
    /// Running sums of `singular_values` divided by their total; all zero
    /// when the residual vanishes.
    pub cumulative: Vec<f64>,
    /// Count of singular values above `1e-8 · σ_max`.
    pub numerical_rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectrumReport {
    pub layers: Vec<LayerSpectrum>,
}

impl SpectrumReport {
    pub fn ranks(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.numerical_rank).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("layer,index,singular_value,cumulative_fraction\n");
        for l in &self.layers {
            for (i, (s, c)) in l.singular_values.iter().zip(&l.cumulative).enumerate() {
                out.push_str(&format!("{},{},{:e},{:e}\n", l.layer, i, s, c));
            }
        }
        out
    }
}

pub fn spectrum_report(initial: &Mlp, final_net: &Mlp) -> Result<SpectrumReport> {
    let (a, b) = (initial.layers(), final_net.layers());
    if a.len() != b.len() {
        return Err(rosa_core::Error::Shape {
            op: "spectrum_layers",
            left: (a.len(), 0),
            right: (b.len(), 0),
        }
        .into());
    }
    let layers = a
        .iter()
        .zip(b)
        .enumerate()
        .map(|(layer, (li, lf))| {
            let residual = lf.adapter.effective_weight().sub(&li.adapter.effective_weight())?;
            let f = svd(&residual)?;
            let total: f64 = f.sigma.iter().sum();
            let mut running = 0.0;
            let cumulative = f
                .sigma
                .iter()
                .map(|s| {
                    running += s;
                    if total > 0.0 {
                        running / total
                    } else {
                        0.0
                    }
                })
                .collect();
            Ok(LayerSpectrum {
                layer,
                numerical_rank: f.numerical_rank(RESIDUAL_RANK_TOL),
                singular_values: f.sigma,
                cumulative,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SpectrumReport { layers })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rosa_core::adapters::{AdapterState, LoraAdapter};
    use rosa_core::linalg::seeded_rng;
    use rosa_core::network::Activation;
    use rosa_core::Matrix;

    fn net(seed: u64) -> Mlp {
        Mlp::random(&[6, 5, 4], &[Activation::Relu, Activation::Identity], &mut seeded_rng(seed)).unwrap()
    }

    #[test]
    fn identical_networks_give_zero_spectrum() {
        let n = net(1);
        let report = spectrum_report(&n, &n).unwrap();
        for l in &report.layers {
            assert!(l.singular_values.iter().all(|&s| s == 0.0));
            assert!(l.cumulative.iter().all(|&c| c == 0.0));
            assert_eq!(l.numerical_rank, 0);
        }
    }

    #[test]
    fn low_rank_adapter_limits_rank_and_cumulative_ends_at_one() {
        let base = net(2);
        let mut rng = seeded_rng(3);
        let mut tuned = base.clone();
        tuned
            .adapt(|_, w| {
                let mut l = LoraAdapter::new(w, 2, &mut rng)?;
                *l.b_mut() = Matrix::random_normal(2, w.cols(), 1.0, &mut rng);
                Ok(AdapterState::Lora(l))
            })
            .unwrap();
        let report = spectrum_report(&base, &tuned).unwrap();
        assert_eq!(report.ranks(), vec![2, 2]);
        for l in &report.layers {
            assert!((l.cumulative.last().unwrap() - 1.0).abs() <= 1e-12);
            assert!(l.cumulative.windows(2).all(|w| w[0] <= w[1]));
        }
        assert_eq!(report.to_csv().lines().count(), 1 + 5 + 4);
    }

    #[test]
    fn architecture_mismatch_is_a_shape_error() {
        let other = Mlp::random(&[6, 5], &[Activation::Identity], &mut seeded_rng(0)).unwrap();
        assert!(spectrum_report(&net(1), &other).is_err());
        let wider = Mlp::random(&[6, 7, 4], &[Activation::Relu, Activation::Identity], &mut seeded_rng(0)).unwrap();
        assert!(spectrum_report(&net(1), &wider).is_err());
    }
}
