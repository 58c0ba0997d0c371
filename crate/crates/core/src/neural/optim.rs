use ndarray::{Array, Array1, Array2, Dimension, Zip};
use serde::{Deserialize, Serialize};

use super::layers::Scalar;
use super::network::{Grads, LayerParams, Network};
use crate::error::{Error, Result};

/// Mean absolute error and its subgradient `sign(pred - target) / N`, with
/// `sign(0) = 0`.
pub fn loss_l1<T: Scalar, D: Dimension>(pred: &Array<T, D>, target: &Array<T, D>) -> Result<(f64, Array<T, D>)> {
    if pred.shape() != target.shape() {
        return Err(Error::invalid(format!(
            "loss shapes differ: {:?} vs {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let n = pred.len().max(1) as f64;
    let inv_n = T::from_f64(1.0 / n);
    let mut sum = 0.0;
    let mut grad = Array::zeros(pred.raw_dim());
    Zip::from(&mut grad).and(pred).and(target).for_each(|g, &p, &t| {
        let d = p - t;
        sum += d.to_f64().abs();
        *g = if d > T::zero() {
            inv_n
        } else if d < T::zero() {
            -inv_n
        } else {
            T::zero()
        };
    });
    Ok((sum / n, grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First and second moment estimates, shaped like the network parameters.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    pub step: u64,
    pub m: Grads<T>,
    pub v: Grads<T>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(net: &Network<T>) -> Self {
        Self {
            step: 0,
            m: net.zero_grads(),
            v: net.zero_grads(),
        }
    }
}

/// One bias-corrected Adam update. Gradients containing NaN or infinity abort
/// the step before anything is modified.
pub fn adam_step<T: Scalar>(net: &mut Network<T>, grads: &Grads<T>, state: &mut AdamState<T>, cfg: &AdamConfig) -> Result<()> {
    for (i, g) in grads.iter().enumerate().filter_map(|(i, g)| g.as_ref().map(|g| (i, g))) {
        if g.weight.iter().chain(g.bias.iter()).any(|v| !v.is_finite()) {
            return Err(Error::numeric(format!("non-finite gradient in layer {i}")));
        }
    }
    if state.m.len() != grads.len() || net.params().len() != grads.len() {
        return Err(Error::invalid("optimizer state does not match the network"));
    }
    state.step += 1;
    let t = state.step as i32;
    let b1 = T::from_f64(cfg.beta1);
    let b2 = T::from_f64(cfg.beta2);
    let c1 = T::from_f64(1.0 - cfg.beta1);
    let c2 = T::from_f64(1.0 - cfg.beta2);
    let lr_t = T::from_f64(cfg.learning_rate / (1.0 - cfg.beta1.powi(t)));
    let inv_bc2 = T::from_f64(1.0 / (1.0 - cfg.beta2.powi(t)));
    let eps = T::from_f64(cfg.epsilon);
    for (((p, g), m), v) in net
        .params_mut()
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        let (Some(p), Some(g), Some(m), Some(v)) = (p.as_mut(), g.as_ref(), m.as_mut(), v.as_mut()) else {
            continue;
        };
        let upd = |p: &mut T, g: T, m: &mut T, v: &mut T| {
            *m = b1 * *m + c1 * g;
            *v = b2 * *v + c2 * g * g;
            *p = *p - lr_t * *m / ((*v * inv_bc2).sqrt() + eps);
        };
        update2(&mut p.weight, &g.weight, &mut m.weight, &mut v.weight, upd);
        update1(&mut p.bias, &g.bias, &mut m.bias, &mut v.bias, upd);
    }
    Ok(())
}

fn update2<T: Scalar>(p: &mut Array2<T>, g: &Array2<T>, m: &mut Array2<T>, v: &mut Array2<T>, f: impl Fn(&mut T, T, &mut T, &mut T)) {
    Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| f(p, g, m, v));
}

fn update1<T: Scalar>(p: &mut Array1<T>, g: &Array1<T>, m: &mut Array1<T>, v: &mut Array1<T>, f: impl Fn(&mut T, T, &mut T, &mut T)) {
    Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| f(p, g, m, v));
}

/// Multiply every gradient by `s` (e.g. to average over a batch).
pub fn scale_grads<T: Scalar>(grads: &mut Grads<T>, s: T) {
    for LayerParams { weight, bias } in grads.iter_mut().flatten() {
        weight.mapv_inplace(|v| v * s);
        bias.mapv_inplace(|v| v * s);
    }
}
