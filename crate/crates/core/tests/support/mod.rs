//! Independent reference routines shared by the integration and acceptance
//! suites. Nothing here calls into the code paths it is used to check.
#![allow(dead_code)]

use rosa_core::adapters::{AdapterState, Ia3Adapter, LoraAdapter, RosaAdapter, SamplingScheme};
use rosa_core::linalg::{seeded_rng, Matrix, SeededRng};
use rosa_core::network::{mse_grad, mse_loss, Activation, Mlp, ParamKey};

pub const FD_STEP: f64 = 1e-5;
pub const FD_REL_TOL: f64 = 1e-5;
pub const FD_ABS_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Full,
    Rosa,
    Lora,
    Ia3,
    Mixed,
}

pub const VARIANTS: [Variant; 5] = [Variant::Full, Variant::Rosa, Variant::Lora, Variant::Ia3, Variant::Mixed];

fn adapter_for(variant: Variant, layer: usize, w: &Matrix, rng: &mut SeededRng) -> AdapterState {
    let rank = 2.min(w.rows().min(w.cols()));
    let pick = match variant {
        Variant::Mixed => [Variant::Rosa, Variant::Lora, Variant::Ia3, Variant::Full][layer % 4],
        v => v,
    };
    match pick {
        Variant::Full | Variant::Mixed => AdapterState::Full(rosa_core::adapters::FullAdapter::new(w)),
        Variant::Rosa => AdapterState::Rosa(RosaAdapter::new(w, rank, SamplingScheme::Random, rng).unwrap()),
        Variant::Lora => {
            let mut l = LoraAdapter::new(w, rank, rng).unwrap();
            // Non-zero B so both factor paths carry gradient.
            *l.b_mut() = Matrix::random_normal(rank, w.cols(), 0.5, rng);
            AdapterState::Lora(l)
        }
        Variant::Ia3 => {
            let scale = Matrix::random_normal(w.rows(), 1, 0.5, rng).map(|v| 1.0 + v);
            AdapterState::Ia3(Ia3Adapter::from_parts(w.clone(), scale).unwrap())
        }
    }
}

/// Random 6 → 4 → 3 net (ReLU hidden) with the given adapter variant,
/// random biases, and an input batch kept away from ReLU kinks.
pub fn toy_problem(variant: Variant, seed: u64) -> (Mlp, Matrix, Matrix) {
    let mut rng = seeded_rng(seed);
    let mut net = Mlp::random(&[6, 4, 3], &[Activation::Relu, Activation::Identity], &mut rng).unwrap();
    net.adapt(|i, w| Ok(adapter_for(variant, i, w, &mut rng))).unwrap();
    for i in 0..net.layers().len() {
        let rows = net.layers()[i].bias.rows();
        net.layer_mut(i).bias = Matrix::random_normal(rows, 1, 0.1, &mut rng);
    }
    loop {
        let x = Matrix::random_normal(6, 5, 1.0, &mut rng);
        if min_relu_margin(&net, &x) > 1e-3 {
            let y = Matrix::random_normal(3, 5, 1.0, &mut rng);
            return (net, x, y);
        }
    }
}

/// Smallest |pre-activation| feeding a ReLU, computed with a plain loop.
fn min_relu_margin(net: &Mlp, x: &Matrix) -> f64 {
    let mut h = x.clone();
    let mut margin = f64::INFINITY;
    for layer in net.layers() {
        let w = layer.adapter.effective_weight();
        let mut z = Matrix::zeros(w.rows(), h.cols());
        for i in 0..w.rows() {
            for j in 0..h.cols() {
                let mut acc = layer.bias[(i, 0)];
                for k in 0..w.cols() {
                    acc += w[(i, k)] * h[(k, j)];
                }
                z[(i, j)] = acc;
            }
        }
        if layer.activation == Activation::Relu {
            margin = z.data().iter().fold(margin, |m, v| m.min(v.abs()));
            z = z.map(|v| v.max(0.0));
        }
        h = z;
    }
    margin
}

fn loss_at(net: &Mlp, x: &Matrix, y: &Matrix) -> f64 {
    mse_loss(&net.predict(x).unwrap(), y).unwrap()
}

fn perturbed_loss(net: &Mlp, key: ParamKey, entry: usize, delta: f64, x: &Matrix, y: &Matrix) -> f64 {
    let mut probe = net.clone();
    {
        let mut params = probe.params_mut();
        let p = params.iter_mut().find(|p| p.key == key).expect("key exists");
        p.value.data_mut()[entry] += delta;
    }
    loss_at(&probe, x, y)
}

/// Compares every analytic gradient entry with a central difference.
/// Returns the worst scaled error `|g − fd| / (FD_REL_TOL·max(|g|,|fd|) + FD_ABS_FLOOR)`;
/// values ≤ 1 pass.
pub fn gradcheck(net: &Mlp, x: &Matrix, y: &Matrix) -> (f64, String) {
    let (out, cache) = net.forward(x).unwrap();
    let grads = net.backward(&cache, &mse_grad(&out, y).unwrap()).unwrap();
    let mut worst = 0.0f64;
    let mut worst_at = String::new();
    for (key, g) in grads.iter() {
        for (entry, &analytic) in g.data().iter().enumerate() {
            let plus = perturbed_loss(net, *key, entry, FD_STEP, x, y);
            let minus = perturbed_loss(net, *key, entry, -FD_STEP, x, y);
            let fd = (plus - minus) / (2.0 * FD_STEP);
            let scaled = (analytic - fd).abs() / (FD_REL_TOL * analytic.abs().max(fd.abs()) + FD_ABS_FLOOR);
            if scaled > worst {
                worst = scaled;
                worst_at = format!("{key}[{entry}]: analytic {analytic:e} vs fd {fd:e}");
            }
        }
    }
    (worst, worst_at)
}

/// Squared error `‖X(W0 + AB) − Y‖²_F`.
pub fn rank_update_error(x: &Matrix, y: &Matrix, w0: &Matrix, a: &Matrix, b: &Matrix) -> f64 {
    let w = w0.add(&a.matmul(b).unwrap()).unwrap();
    x.matmul(&w).unwrap().sub(y).unwrap().frobenius_norm_sq()
}

/// Plain gradient descent with Armijo backtracking on the factors (A, B),
/// restarted from `restarts` random initializations. Returns the best error.
///
/// Iterates work on the Gram form `tr(Wᵀ(XᵀX W − 2XᵀY)) + ‖Y‖²`; a restart
/// ends after 50k iterations, at a vanishing gradient, or once 500
/// iterations gain less than 1e-12 relative (the remaining budget could then
/// improve the error by at most ~1e-10 relative). The returned error is
/// re-evaluated directly.
pub fn descent_baseline(x: &Matrix, y: &Matrix, w0: &Matrix, rank: usize, restarts: usize, seed: u64) -> f64 {
    const MAX_ITERS: usize = 50_000;
    const WINDOW: usize = 500;
    let mut rng = seeded_rng(seed);
    let (d, p) = w0.shape();
    let gram = x.matmul_tn(x).unwrap();
    let cross = x.matmul_tn(y).unwrap();
    let energy = y.frobenius_norm_sq();
    let gram_error = |a: &Matrix, b: &Matrix| -> (f64, Matrix) {
        let w = w0.add(&a.matmul(b).unwrap()).unwrap();
        let gw = gram.matmul(&w).unwrap();
        let quad: f64 = w.data().iter().zip(gw.data()).map(|(u, v)| u * v).sum();
        let lin: f64 = w.data().iter().zip(cross.data()).map(|(u, v)| u * v).sum();
        // Gradient of the error with respect to W.
        (quad - 2.0 * lin + energy, gw.sub(&cross).unwrap().scale(2.0))
    };
    let mut best = f64::INFINITY;
    for _ in 0..restarts {
        let mut a = Matrix::random_normal(d, rank, 0.5, &mut rng);
        let mut b = Matrix::random_normal(rank, p, 0.5, &mut rng);
        let (mut err, mut gw) = gram_error(&a, &b);
        let mut step = 1e-2;
        let mut window_start = err;
        for iter in 1..=MAX_ITERS {
            let ga = gw.matmul_nt(&b).unwrap();
            let gb = a.matmul_tn(&gw).unwrap();
            let gnorm = ga.frobenius_norm_sq() + gb.frobenius_norm_sq();
            if gnorm < 1e-24 {
                break;
            }
            step *= 2.0;
            loop {
                let na = a.sub(&ga.scale(step)).unwrap();
                let nb = b.sub(&gb.scale(step)).unwrap();
                let (nerr, ngw) = gram_error(&na, &nb);
                if nerr <= err - 0.5 * step * gnorm {
                    a = na;
                    b = nb;
                    err = nerr;
                    gw = ngw;
                    break;
                }
                step *= 0.5;
                if step < 1e-20 {
                    break;
                }
            }
            if step < 1e-20 {
                break;
            }
            if iter % WINDOW == 0 {
                if window_start - err <= 1e-12 * err.abs().max(1e-300) {
                    break;
                }
                window_start = err;
            }
        }
        best = best.min(rank_update_error(x, y, w0, &a, &b));
    }
    best
}
