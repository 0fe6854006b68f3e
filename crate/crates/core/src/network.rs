//! Small feed-forward network whose reverse pass produces gradients only for
//! trainable tensors: adapter factors (or the full weight), plus biases.
//!
//! Batches are column-major in the sense that each column of an input
//! matrix is one sample: a layer maps N×batch to M×batch.

use std::fmt;

use crate::adapters::{AdapterState, FullAdapter};
use crate::error::{Error, Result};
use crate::linalg::{Matrix, SeededRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Identity,
    Relu,
}

impl Activation {
    pub fn code(self) -> u8 {
        match self {
            Activation::Identity => 0,
            Activation::Relu => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Activation::Identity),
            1 => Some(Activation::Relu),
            _ => None,
        }
    }

    fn apply(self, z: &Matrix) -> Matrix {
        match self {
            Activation::Identity => z.clone(),
            Activation::Relu => z.map(|v| v.max(0.0)),
        }
    }
}

/// Which tensor of a layer a parameter or gradient refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamKind {
    Weight,
    A,
    B,
    Scale,
    Bias,
}

impl fmt::Display for ParamKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ParamKind::Weight => "weight",
            ParamKind::A => "a",
            ParamKind::B => "b",
            ParamKind::Scale => "scale",
            ParamKind::Bias => "bias",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamKey {
    pub layer: usize,
    pub kind: ParamKind,
}

impl ParamKey {
    pub fn new(layer: usize, kind: ParamKind) -> Self {
        Self { layer, kind }
    }
}

impl fmt::Display for ParamKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "layer{}.{}", self.layer, self.kind)
    }
}

/// Mutable handle on one trainable tensor.
#[derive(Debug)]
pub struct ParamRef<'a> {
    pub key: ParamKey,
    pub value: &'a mut Matrix,
}

/// Gradients for exactly the trainable tensors of a network, in parameter order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GradientSet {
    entries: Vec<(ParamKey, Matrix)>,
}

impl GradientSet {
    pub fn new(entries: Vec<(ParamKey, Matrix)>) -> Self {
        Self { entries }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ParamKey, &Matrix)> {
        self.entries.iter().map(|(k, g)| (k, g))
    }

    pub fn get(&self, key: ParamKey) -> Option<&Matrix> {
        self.entries.iter().find(|(k, _)| *k == key).map(|(_, g)| g)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn keys(&self) -> Vec<ParamKey> {
        self.entries.iter().map(|(k, _)| *k).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.entries.iter().fold(0.0, |m, (_, g)| m.max(g.max_abs()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub adapter: AdapterState,
    /// M×1.
    pub bias: Matrix,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn new(adapter: AdapterState, bias: Matrix, activation: Activation) -> Result<Self> {
        let (m, _) = adapter.shape();
        if bias.shape() != (m, 1) {
            return Err(Error::shape("dense_layer", adapter.shape(), bias.shape()));
        }
        Ok(Self {
            adapter,
            bias,
            activation,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.adapter.shape().1
    }

    pub fn out_dim(&self) -> usize {
        self.adapter.shape().0
    }

    fn pre_activation(&self, x: &Matrix) -> Result<Matrix> {
        let mut z = self.adapter.forward(x)?;
        z.add_column_broadcast(&self.bias)?;
        Ok(z)
    }

    fn params_mut(&mut self, layer: usize) -> Vec<ParamRef<'_>> {
        let key = |kind| ParamKey::new(layer, kind);
        let mut out = match &mut self.adapter {
            AdapterState::Full(f) => vec![ParamRef {
                key: key(ParamKind::Weight),
                value: f.weight_mut(),
            }],
            AdapterState::Rosa(r) => {
                let (a, b) = r.factors_mut();
                vec![
                    ParamRef {
                        key: key(ParamKind::A),
                        value: a,
                    },
                    ParamRef {
                        key: key(ParamKind::B),
                        value: b,
                    },
                ]
            }
            AdapterState::Lora(l) => {
                let (a, b) = l.factors_mut();
                vec![
                    ParamRef {
                        key: key(ParamKind::A),
                        value: a,
                    },
                    ParamRef {
                        key: key(ParamKind::B),
                        value: b,
                    },
                ]
            }
            AdapterState::Ia3(i) => vec![ParamRef {
                key: key(ParamKind::Scale),
                value: i.scale_mut(),
            }],
        };
        out.push(ParamRef {
            key: key(ParamKind::Bias),
            value: &mut self.bias,
        });
        out
    }
}

/// Per-layer activations recorded by [`Mlp::forward`] for the reverse pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    version: u64,
    inputs: Vec<Matrix>,
    pre_activations: Vec<Matrix>,
}

/// Ordered stack of dense layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<DenseLayer>,
    /// Bumped on every mutable access; forward caches from older versions are stale.
    version: u64,
}

impl Mlp {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidInput("network needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::shape(
                    "mlp_layers",
                    pair[0].adapter.shape(),
                    pair[1].adapter.shape(),
                ));
            }
        }
        Ok(Self { layers, version: 0 })
    }

    /// Fully trainable network with He-initialized weights (`N(0, 2/fan_in)`)
    /// and zero biases. `dims` lists layer widths from input to output.
    pub fn random(dims: &[usize], activations: &[Activation], rng: &mut SeededRng) -> Result<Self> {
        if dims.len() < 2 || activations.len() != dims.len() - 1 {
            return Err(Error::InvalidInput(format!(
                "need one activation per layer: {} dims, {} activations",
                dims.len(),
                activations.len()
            )));
        }
        if dims.contains(&0) {
            return Err(Error::InvalidInput("layer widths must be positive".into()));
        }
        let layers = dims
            .windows(2)
            .zip(activations)
            .map(|(d, &act)| {
                let std = (2.0 / d[0] as f64).sqrt();
                let w = Matrix::random_normal(d[1], d[0], std, rng);
                DenseLayer::new(AdapterState::Full(FullAdapter::new(&w)), Matrix::zeros(d[1], 1), act)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(layers)
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn layer_mut(&mut self, index: usize) -> &mut DenseLayer {
        self.version += 1;
        &mut self.layers[index]
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    /// Replaces each layer's adapter with `f(layer_index, effective_weight)`.
    pub fn adapt(&mut self, mut f: impl FnMut(usize, &Matrix) -> Result<AdapterState>) -> Result<()> {
        self.version += 1;
        for (i, layer) in self.layers.iter_mut().enumerate() {
            let w = layer.adapter.effective_weight();
            let adapter = f(i, &w)?;
            if adapter.shape() != w.shape() {
                return Err(Error::shape("adapt", w.shape(), adapter.shape()));
            }
            layer.adapter = adapter;
        }
        Ok(())
    }

    /// Output for a column batch, without recording a cache.
    pub fn predict(&self, x: &Matrix) -> Result<Matrix> {
        let mut h = x.clone();
        for layer in &self.layers {
            h = layer.activation.apply(&layer.pre_activation(&h)?);
        }
        Ok(h)
    }

    pub fn forward(&self, x: &Matrix) -> Result<(Matrix, ForwardCache)> {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for layer in &self.layers {
            let z = layer.pre_activation(&h)?;
            let next = layer.activation.apply(&z);
            inputs.push(h);
            pre_activations.push(z);
            h = next;
        }
        let cache = ForwardCache {
            version: self.version,
            inputs,
            pre_activations,
        };
        Ok((h, cache))
    }

    /// Reverse pass given `dL/d(output)`.
    pub fn backward(&self, cache: &ForwardCache, loss_grad: &Matrix) -> Result<GradientSet> {
        if cache.version != self.version || cache.inputs.len() != self.layers.len() {
            return Err(Error::Contract(format!(
                "forward cache from network version {} used with version {}",
                cache.version, self.version
            )));
        }
        let last = &cache.pre_activations[self.layers.len() - 1];
        if loss_grad.shape() != last.shape() {
            return Err(Error::shape("backward", last.shape(), loss_grad.shape()));
        }

        let mut per_layer: Vec<Vec<(ParamKey, Matrix)>> = Vec::with_capacity(self.layers.len());
        let mut upstream = loss_grad.clone();
        for (idx, layer) in self.layers.iter().enumerate().rev() {
            let z = &cache.pre_activations[idx];
            let x = &cache.inputs[idx];
            let dz = match layer.activation {
                Activation::Identity => upstream,
                Activation::Relu => {
                    let mask = z.map(|v| if v > 0.0 { 1.0 } else { 0.0 });
                    upstream.hadamard(&mask)?
                }
            };
            let key = |kind| ParamKey::new(idx, kind);
            let need_dx = idx > 0;
            let mut grads = Vec::with_capacity(3);
            let dx = match &layer.adapter {
                AdapterState::Full(f) => {
                    grads.push((key(ParamKind::Weight), dz.matmul_nt(x)?));
                    need_dx.then(|| f.weight().matmul_tn(&dz)).transpose()?
                }
                AdapterState::Rosa(r) => {
                    low_rank_backward(r.w_fixed(), r.a(), r.b(), x, &dz, idx, need_dx, &mut grads)?
                }
                AdapterState::Lora(l) => {
                    low_rank_backward(l.w_frozen(), l.a(), l.b(), x, &dz, idx, need_dx, &mut grads)?
                }
                AdapterState::Ia3(i) => {
                    let wx = i.w_frozen().matmul(x)?;
                    grads.push((key(ParamKind::Scale), dz.hadamard(&wx)?.row_sums()));
                    need_dx
                        .then(|| i.w_frozen().matmul_tn(&dz.scale_rows(i.scale().data())?))
                        .transpose()?
                }
            };
            grads.push((key(ParamKind::Bias), dz.row_sums()));
            per_layer.push(grads);
            match dx {
                Some(dx) => upstream = dx,
                None => break,
            }
        }
        per_layer.reverse();
        Ok(GradientSet::new(per_layer.into_iter().flatten().collect()))
    }

    /// Handles to every trainable tensor, in layer order.
    pub fn params_mut(&mut self) -> Vec<ParamRef<'_>> {
        self.version += 1;
        self.layers
            .iter_mut()
            .enumerate()
            .flat_map(|(i, l)| l.params_mut(i))
            .collect()
    }

    /// Runs a ROSA factorization on every ROSA layer; returns the indices of
    /// the layers that were factorized.
    pub fn factorize_rosa_layers(&mut self, rng: &mut SeededRng) -> Result<Vec<usize>> {
        self.version += 1;
        let mut done = Vec::new();
        for (i, layer) in self.layers.iter_mut().enumerate() {
            if let AdapterState::Rosa(r) = &mut layer.adapter {
                r.factorize_step(rng)?;
                done.push(i);
            }
        }
        Ok(done)
    }

    /// Advances ROSA step counters after an optimizer update.
    pub fn record_step(&mut self) {
        for layer in &mut self.layers {
            if let AdapterState::Rosa(r) = &mut layer.adapter {
                r.tick();
            }
        }
    }

    /// Trainable scalars per layer: (adapter part, bias part).
    pub fn trainable_counts(&self) -> Vec<(usize, usize)> {
        self.layers
            .iter()
            .map(|l| (l.adapter.trainable_count(), l.bias.rows()))
            .collect()
    }

    pub fn trainable_count(&self) -> usize {
        self.trainable_counts().iter().map(|(w, b)| w + b).sum()
    }

    pub fn effective_weights(&self) -> Vec<Matrix> {
        self.layers.iter().map(|l| l.adapter.effective_weight()).collect()
    }

    /// Copies of every frozen tensor, for immutability checks.
    pub fn frozen_snapshot(&self) -> Vec<Matrix> {
        self.layers
            .iter()
            .flat_map(|l| l.adapter.frozen_tensors().into_iter().cloned())
            .collect()
    }
}

#[allow(clippy::too_many_arguments)]
fn low_rank_backward(
    w: &Matrix,
    a: &Matrix,
    b: &Matrix,
    x: &Matrix,
    dz: &Matrix,
    layer: usize,
    need_dx: bool,
    grads: &mut Vec<(ParamKey, Matrix)>,
) -> Result<Option<Matrix>> {
    let bx = b.matmul(x)?;
    let at_dz = a.matmul_tn(dz)?;
    grads.push((ParamKey::new(layer, ParamKind::A), dz.matmul_nt(&bx)?));
    grads.push((ParamKey::new(layer, ParamKind::B), at_dz.matmul_nt(x)?));
    if !need_dx {
        return Ok(None);
    }
    let mut dx = w.matmul_tn(dz)?;
    dx.add_assign(&b.matmul_tn(&at_dz)?)?;
    Ok(Some(dx))
}

/// Mean of squared differences over all entries.
pub fn mse_loss(pred: &Matrix, target: &Matrix) -> Result<f64> {
    let diff = pred.sub(target).map_err(|_| Error::shape("mse_loss", pred.shape(), target.shape()))?;
    Ok(diff.frobenius_norm_sq() / diff.data().len() as f64)
}

/// Gradient of [`mse_loss`] with respect to `pred`.
pub fn mse_grad(pred: &Matrix, target: &Matrix) -> Result<Matrix> {
    let diff = pred.sub(target).map_err(|_| Error::shape("mse_grad", pred.shape(), target.shape()))?;
    let count = diff.data().len() as f64;
    Ok(diff.scale(2.0 / count))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapters::{Ia3Adapter, LoraAdapter, RosaAdapter, SamplingScheme};
    use crate::linalg::seeded_rng;

    fn single_full(w: &Matrix, act: Activation) -> Mlp {
        let layer = DenseLayer::new(AdapterState::Full(FullAdapter::new(w)), Matrix::zeros(w.rows(), 1), act).unwrap();
        Mlp::new(vec![layer]).unwrap()
    }

    #[test]
    fn identity_layer_is_matmul() {
        let mut rng = seeded_rng(0);
        let w = Matrix::random_normal(3, 4, 1.0, &mut rng);
        let x = Matrix::random_normal(4, 5, 1.0, &mut rng);
        let net = single_full(&w, Activation::Identity);
        assert_eq!(net.predict(&x).unwrap(), w.matmul(&x).unwrap());
    }

    #[test]
    fn relu_clamps_negative_preactivations() {
        let w = Matrix::identity(3).scale(-1.0);
        let x = Matrix::new(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let net = single_full(&w, Activation::Relu);
        assert_eq!(net.predict(&x).unwrap(), Matrix::zeros(3, 2));
    }

    #[test]
    fn mse_basics() {
        let a = Matrix::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(mse_loss(&a, &a).unwrap(), 0.0);
        let b = a.map(|v| v + 1.0);
        assert_eq!(mse_loss(&b, &a).unwrap(), 1.0);
        assert!(matches!(mse_loss(&a, &Matrix::zeros(1, 4)), Err(Error::Shape { .. })));
    }

    #[test]
    fn zero_loss_grad_gives_zero_gradients() {
        let mut rng = seeded_rng(1);
        let net = Mlp::random(&[4, 5, 3], &[Activation::Relu, Activation::Identity], &mut rng).unwrap();
        let x = Matrix::random_normal(4, 6, 1.0, &mut rng);
        let (out, cache) = net.forward(&x).unwrap();
        let grads = net.backward(&cache, &Matrix::zeros(out.rows(), out.cols())).unwrap();
        assert_eq!(grads.max_abs(), 0.0);
        assert_eq!(grads.len(), 4);
    }

    #[test]
    fn lora_at_init_has_no_a_gradient() {
        let mut rng = seeded_rng(2);
        let mut net = Mlp::random(&[4, 3], &[Activation::Identity], &mut rng).unwrap();
        net.adapt(|_, w| Ok(AdapterState::Lora(LoraAdapter::new(w, 2, &mut rng)?)))
            .unwrap();
        let x = Matrix::random_normal(4, 5, 1.0, &mut rng);
        let y = Matrix::random_normal(3, 5, 1.0, &mut rng);
        let (out, cache) = net.forward(&x).unwrap();
        let grads = net.backward(&cache, &mse_grad(&out, &y).unwrap()).unwrap();
        assert_eq!(grads.get(ParamKey::new(0, ParamKind::A)).unwrap().max_abs(), 0.0);
        assert!(grads.get(ParamKey::new(0, ParamKind::B)).unwrap().max_abs() > 0.0);
    }

    #[test]
    fn gradients_only_for_trainable_tensors() {
        let mut rng = seeded_rng(3);
        let mut net = Mlp::random(&[4, 4, 4, 4], &[Activation::Relu; 3], &mut rng).unwrap();
        net.adapt(|i, w| {
            Ok(match i {
                0 => AdapterState::Rosa(RosaAdapter::new(w, 2, SamplingScheme::Random, &mut rng)?),
                1 => AdapterState::Lora(LoraAdapter::new(w, 2, &mut rng)?),
                _ => AdapterState::Ia3(Ia3Adapter::new(w)),
            })
        })
        .unwrap();
        let x = Matrix::random_normal(4, 3, 1.0, &mut rng);
        let (out, cache) = net.forward(&x).unwrap();
        let grads = net.backward(&cache, &out).unwrap();
        use ParamKind::*;
        let expected: Vec<ParamKey> = [(0, A), (0, B), (0, Bias), (1, A), (1, B), (1, Bias), (2, Scale), (2, Bias)]
            .into_iter()
            .map(|(l, k)| ParamKey::new(l, k))
            .collect();
        assert_eq!(grads.keys(), expected);
        let param_keys: Vec<ParamKey> = net.params_mut().iter().map(|p| p.key).collect();
        assert_eq!(param_keys, expected);
    }

    #[test]
    fn stale_cache_is_rejected() {
        let mut rng = seeded_rng(4);
        let mut net = Mlp::random(&[3, 2], &[Activation::Identity], &mut rng).unwrap();
        let x = Matrix::random_normal(3, 2, 1.0, &mut rng);
        let (out, cache) = net.forward(&x).unwrap();
        net.params_mut();
        assert!(matches!(net.backward(&cache, &out), Err(Error::Contract(_))));
    }

    #[test]
    fn incompatible_layers_rejected() {
        let l1 = DenseLayer::new(
            AdapterState::Full(FullAdapter::new(&Matrix::zeros(3, 2))),
            Matrix::zeros(3, 1),
            Activation::Relu,
        )
        .unwrap();
        let l2 = DenseLayer::new(
            AdapterState::Full(FullAdapter::new(&Matrix::zeros(2, 4))),
            Matrix::zeros(2, 1),
            Activation::Identity,
        )
        .unwrap();
        assert!(Mlp::new(vec![l1, l2]).is_err());
    }
}
