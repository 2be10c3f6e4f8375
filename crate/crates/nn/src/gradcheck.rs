//! Central-difference gradient checks for layers and whole networks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::layer::{Layer, LayerSpec};
use crate::network::{Input, Network};
use crate::tensor::Tensor;
use crate::train::{mse, mse_grad};
use crate::Result;

pub const EPS: f64 = 1e-6;

/// Largest relative error found, per checked tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub errors: Vec<(String, f64)>,
}

impl GradCheck {
    pub fn max_error(&self) -> f64 {
        self.errors.iter().map(|e| e.1).fold(0.0, f64::max)
    }
}

/// `||a - n|| / (||a|| + ||n||)`, zero when both vanish.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, n)| (a - n) * (a - n)).sum::<f64>().sqrt();
    let na: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn: f64 = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    if na + nn == 0.0 {
        0.0
    } else {
        diff / (na + nn)
    }
}

fn central(f: &mut dyn FnMut(f64) -> f64, x: f64) -> f64 {
    (f(x + EPS) - f(x - EPS)) / (2.0 * EPS)
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

/// Values in `[-2, 2]` kept at least 0.05 away from zero so the ELU kink is
/// never straddled by a finite-difference step.
fn away_from_zero(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let v: f64 = rng.gen_range(0.05..2.0);
            if rng.gen_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect()
}

/// Checks one layer under the scalar loss `sum(r * layer(x))`.
pub fn check_layer(spec: LayerSpec, in_shape: &[usize], batch: usize, seed: u64) -> Result<GradCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layer = Layer::new(spec.clone(), in_shape)?;
    layer.weights = random_vec(&mut rng, layer.weights.len(), -1.0, 1.0);
    layer.bias = random_vec(&mut rng, layer.bias.len(), -0.5, 0.5);
    let mut xs = vec![batch];
    xs.extend_from_slice(in_shape);
    let n_in: usize = xs.iter().product();
    let x = Tensor::new(xs, away_from_zero(&mut rng, n_in))?;
    let aux = match spec {
        LayerSpec::ConcatAux { aux_dim } => Some(Tensor::new(vec![batch, aux_dim], random_vec(&mut rng, batch * aux_dim, -1.0, 1.0))?),
        _ => None,
    };
    let y = layer.forward(&x, aux.as_ref())?;
    let r = Tensor::new(y.shape().to_vec(), random_vec(&mut rng, y.len(), -1.0, 1.0))?;
    let back = layer.backward(&x, &y, &r, true)?;

    let loss = |l: &Layer, x: &Tensor, a: Option<&Tensor>| -> f64 {
        let y = l.forward(x, a).expect("shape fixed");
        y.data().iter().zip(r.data()).map(|(u, v)| u * v).sum()
    };
    let mut errors = Vec::new();

    let mut num = vec![0.0; layer.weights.len()];
    for (i, slot) in num.iter_mut().enumerate() {
        let mut l = layer.clone();
        *slot = central(
            &mut |v| {
                l.weights[i] = v;
                loss(&l, &x, aux.as_ref())
            },
            layer.weights[i],
        );
    }
    if !num.is_empty() {
        errors.push(("weights".into(), relative_error(&back.params.weights, &num)));
    }

    let mut num = vec![0.0; layer.bias.len()];
    for (i, slot) in num.iter_mut().enumerate() {
        let mut l = layer.clone();
        *slot = central(
            &mut |v| {
                l.bias[i] = v;
                loss(&l, &x, aux.as_ref())
            },
            layer.bias[i],
        );
    }
    if !num.is_empty() {
        errors.push(("bias".into(), relative_error(&back.params.bias, &num)));
    }

    let mut num = vec![0.0; x.len()];
    for (i, slot) in num.iter_mut().enumerate() {
        let mut xp = x.clone();
        *slot = central(
            &mut |v| {
                xp.data_mut()[i] = v;
                loss(&layer, &xp, aux.as_ref())
            },
            x.data()[i],
        );
    }
    let dx = back.input.expect("input gradient requested");
    errors.push(("input".into(), relative_error(dx.data(), &num)));

    if let (Some(a), Some(da)) = (&aux, &back.aux) {
        let mut num = vec![0.0; a.len()];
        for (i, slot) in num.iter_mut().enumerate() {
            let mut ap = a.clone();
            *slot = central(
                &mut |v| {
                    ap.data_mut()[i] = v;
                    loss(&layer, &x, Some(&ap))
                },
                a.data()[i],
            );
        }
        errors.push(("aux".into(), relative_error(da.data(), &num)));
    }
    Ok(GradCheck { errors })
}

/// Checks every parameter of a network under the MSE loss.
pub fn check_network(net: &Network, input: &Input, target: &Tensor) -> Result<GradCheck> {
    let trace = net.forward_traced(input)?;
    let out = trace.acts.last().expect("non-empty");
    let analytic = net.backward(&trace, &mse_grad(out, target), false)?.flat();
    let base = net.params_flat();
    let mut probe = net.clone();
    let mut num = vec![0.0; base.len()];
    for (i, slot) in num.iter_mut().enumerate() {
        let mut p = base.clone();
        *slot = central(
            &mut |v| {
                p[i] = v;
                probe.set_params_flat(&p).expect("same length");
                mse(&probe.forward(input).expect("shape fixed"), target).expect("shape fixed")
            },
            base[i],
        );
    }
    Ok(GradCheck {
        errors: vec![("network".into(), relative_error(&analytic, &num))],
    })
}
