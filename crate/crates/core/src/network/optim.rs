//! AdamW with bias correction and decoupled weight decay.

use serde::{Deserialize, Serialize};

use super::{Gradients, QNetwork};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::config(format!("learner.{name}"), format!("must be finite and > 0, got {v}")))
            }
        };
        pos("lr", self.lr)?;
        pos("eps", self.eps)?;
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::config("learner.weight_decay", "must be finite and >= 0"));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::config(format!("learner.{name}"), "must lie in [0, 1)"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<T: Scalar = f64> {
    pub config: OptimizerConfig,
    pub m: Gradients<T>,
    pub v: Gradients<T>,
    pub step: u64,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(net: &QNetwork<T>, config: OptimizerConfig) -> Self {
        Self {
            config,
            m: Gradients::zeros_like(net),
            v: Gradients::zeros_like(net),
            step: 0,
        }
    }

    fn shaped_like(&self, net: &QNetwork<T>) -> bool {
        self.m.weights.len() == net.layers().len()
            && net
                .layers()
                .iter()
                .zip(&self.m.weights)
                .all(|(l, m)| l.weights.dim() == m.dim())
    }
}

/// One AdamW update:
/// `theta -= lr * (m_hat / (sqrt(v_hat) + eps) + wd * theta)`.
pub fn adamw_step<T: Scalar>(
    net: &mut QNetwork<T>,
    grads: &Gradients<T>,
    opt: &mut OptimizerState<T>,
) -> Result<()> {
    if !opt.shaped_like(net) || grads.weights.len() != net.layers().len() {
        return Err(Error::Architecture("optimizer state does not match network".into()));
    }
    opt.step += 1;
    let c = opt.config;
    let t = opt.step as i32;
    let b1 = T::of(c.beta1);
    let b2 = T::of(c.beta2);
    let one = T::one();
    let corr1 = T::of(1.0 - c.beta1.powi(t));
    let corr2 = T::of(1.0 - c.beta2.powi(t));
    let lr = T::of(c.lr);
    let wd = T::of(c.weight_decay);
    let eps = T::of(c.eps);

    let update = |p: &mut T, g: T, m: &mut T, v: &mut T| {
        *m = b1 * *m + (one - b1) * g;
        *v = b2 * *v + (one - b2) * g * g;
        let m_hat = *m / corr1;
        let v_hat = *v / corr2;
        *p = *p - lr * (m_hat / (v_hat.sqrt() + eps) + wd * *p);
    };
    for (k, layer) in net.layers_mut().iter_mut().enumerate() {
        ndarray::Zip::from(&mut layer.weights)
            .and(&grads.weights[k])
            .and(&mut opt.m.weights[k])
            .and(&mut opt.v.weights[k])
            .for_each(|p, &g, m, v| update(p, g, m, v));
        ndarray::Zip::from(&mut layer.bias)
            .and(&grads.biases[k])
            .and(&mut opt.m.biases[k])
            .and(&mut opt.v.biases[k])
            .for_each(|p, &g, m, v| update(p, g, m, v));
    }
    Ok(())
}
