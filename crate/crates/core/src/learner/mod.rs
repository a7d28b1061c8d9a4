//! KL-regularized Double DQN.

mod metrics;
mod replay;
mod trainer;

pub use metrics::{MetricsRow, MetricsTrace, CSV_COLUMNS};
pub use replay::{ReplayBuffer, DEFAULT_CAPACITY};
pub use trainer::{train, TrainOutcome};

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{Action, CognitiveLabels};
use crate::encoding::StateVector;
use crate::error::{Error, Result};
use crate::network::{adamw_step, Gradients, Mode, OptimizerConfig, OptimizerState, QNetwork, DROPOUT_P, HIDDEN_LAYERS};
use crate::policy::argmax;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Transition<T: Scalar = f64> {
    pub state: StateVector<T>,
    pub action: Action,
    pub reward: f64,
    pub next_state: StateVector<T>,
    pub done: bool,
    pub labels: CognitiveLabels,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LearnerConfig {
    pub gamma: f64,
    pub batch_size: usize,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Environment steps over which epsilon ramps down.
    pub decay_steps: u64,
    pub kl_beta: f64,
    pub temperature: f64,
    /// Hard target sync period, in learner updates.
    pub target_update_every: u64,
    pub total_episodes: usize,
    pub replay_capacity: usize,
    /// Buffer size required before the first update.
    pub warmup: usize,
    pub actors: usize,
    /// Run actors on the rayon pool. Output is identical either way.
    pub threaded: bool,
    /// One learner update per this many environment steps.
    pub train_every: u64,
    /// Environment steps per metrics row.
    pub metrics_interval: u64,
    /// Environment ticks between refreshes of the actors' policy snapshot.
    pub actor_refresh: u64,
    pub hidden: Vec<usize>,
    pub dropout: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Optional global gradient-norm clip; off when absent.
    pub grad_clip: Option<f64>,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        let opt = OptimizerConfig::default();
        Self {
            gamma: 0.8,
            batch_size: 32,
            epsilon_start: 0.9,
            epsilon_end: 0.1,
            decay_steps: 50_000,
            kl_beta: 0.1,
            temperature: 1.0,
            target_update_every: 10,
            total_episodes: 20_000,
            replay_capacity: DEFAULT_CAPACITY,
            warmup: 1_000,
            actors: 8,
            threaded: false,
            train_every: 1,
            metrics_interval: 100,
            actor_refresh: 1,
            hidden: HIDDEN_LAYERS.to_vec(),
            dropout: DROPOUT_P,
            lr: opt.lr,
            weight_decay: opt.weight_decay,
            beta1: opt.beta1,
            beta2: opt.beta2,
            adam_eps: opt.eps,
            grad_clip: None,
        }
    }
}

impl LearnerConfig {
    pub fn optimizer(&self) -> OptimizerConfig {
        OptimizerConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
        }
    }

    /// Layer dims for an input width of `d_in`.
    pub fn layer_dims(&self, d_in: usize) -> Vec<usize> {
        let mut dims = vec![d_in];
        dims.extend(&self.hidden);
        dims.push(Action::COUNT);
        dims
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, reason: String| Err(Error::config(format!("learner.{field}"), reason));
        if !(0.0..1.0).contains(&self.gamma) {
            return bad("gamma", format!("must lie in [0, 1), got {}", self.gamma));
        }
        if !(self.epsilon_end > 0.0 && self.epsilon_end <= self.epsilon_start && self.epsilon_start <= 1.0) {
            return bad(
                "epsilon_end",
                format!(
                    "need 0 < epsilon_end <= epsilon_start <= 1, got {} / {}",
                    self.epsilon_end, self.epsilon_start
                ),
            );
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return bad("temperature", format!("must be > 0, got {}", self.temperature));
        }
        if !(self.kl_beta.is_finite() && self.kl_beta >= 0.0) {
            return bad("kl_beta", format!("must be >= 0, got {}", self.kl_beta));
        }
        for (field, v) in [
            ("batch_size", self.batch_size as u64),
            ("target_update_every", self.target_update_every),
            ("replay_capacity", self.replay_capacity as u64),
            ("actors", self.actors as u64),
            ("train_every", self.train_every),
            ("metrics_interval", self.metrics_interval),
            ("actor_refresh", self.actor_refresh),
        ] {
            if v == 0 {
                return bad(field, "must be > 0".into());
            }
        }
        if self.hidden.contains(&0) {
            return bad("hidden", "layer widths must be > 0".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout", format!("must lie in [0, 1), got {}", self.dropout));
        }
        if let Some(c) = self.grad_clip {
            if !(c.is_finite() && c > 0.0) {
                return bad("grad_clip", format!("must be > 0, got {c}"));
            }
        }
        self.optimizer().validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub q_loss: f64,
    pub kl_loss: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        self.q_loss.is_finite() && self.kl_loss.is_finite() && self.total.is_finite()
    }
}

/// Linear ramp from `epsilon_start` to `epsilon_end` over `decay_steps`.
pub fn epsilon_schedule(step: u64, cfg: &LearnerConfig) -> f64 {
    if cfg.decay_steps == 0 || step >= cfg.decay_steps {
        return cfg.epsilon_end;
    }
    let frac = step as f64 / cfg.decay_steps as f64;
    cfg.epsilon_start + (cfg.epsilon_end - cfg.epsilon_start) * frac
}

/// `r` when done, else `r + gamma * Q_target(s', argmax_a Q_online(s', a))`.
pub fn ddqn_target<T: Scalar>(t: &Transition<T>, online: &QNetwork<T>, target: &QNetwork<T>, gamma: f64) -> Result<T> {
    if t.done {
        return Ok(T::of(t.reward));
    }
    let s = ArrayView2::from_shape((1, t.next_state.len()), t.next_state.as_slice())
        .expect("contiguous row");
    let pick = argmax(online.predict(s)?.row(0).as_slice().expect("contiguous"));
    let value = target.predict(s)?[[0, pick]];
    Ok(T::of(t.reward) + T::of(gamma) * value)
}

/// Batched targets; terminal rows ignore their next state.
pub fn ddqn_targets<T: Scalar>(
    batch: &[&Transition<T>],
    online: &QNetwork<T>,
    target: &QNetwork<T>,
    gamma: f64,
) -> Result<Vec<T>> {
    let next = stack(batch.iter().map(|t| t.next_state.as_slice()), online.input_dim())?;
    let q_online = online.predict(next.view())?;
    let q_target = target.predict(next.view())?;
    Ok(batch
        .iter()
        .enumerate()
        .map(|(i, t)| {
            if t.done {
                T::of(t.reward)
            } else {
                let pick = argmax(q_online.row(i).as_slice().expect("contiguous"));
                T::of(t.reward) + T::of(gamma) * q_target[[i, pick]]
            }
        })
        .collect())
}

fn log_softmax<T: Scalar>(q: &[T], tau: T) -> Vec<T> {
    let max = q.iter().copied().fold(T::neg_infinity(), T::max);
    let shifted: Vec<T> = q.iter().map(|&x| (x - max) / tau).collect();
    let log_z = shifted.iter().map(|&x| x.exp()).sum::<T>().ln();
    shifted.into_iter().map(|x| x - log_z).collect()
}

/// `KL(softmax(q_online / tau) || softmax(q_ref / tau))`.
pub fn kl_regularizer<T: Scalar>(q_online: &[T], q_ref: &[T], tau: f64) -> T {
    kl_with_gradient(q_online, q_ref, tau).0
}

/// KL value and its gradient with respect to the online logits:
/// `d/dx_i = p_i (log p_i - log q_i - KL) / tau`.
pub fn kl_with_gradient<T: Scalar>(q_online: &[T], q_ref: &[T], tau: f64) -> (T, Vec<T>) {
    assert_eq!(q_online.len(), q_ref.len(), "KL needs equal-length vectors");
    let tau = T::of(tau);
    let lp = log_softmax(q_online, tau);
    let lq = log_softmax(q_ref, tau);
    let kl = lp
        .iter()
        .zip(&lq)
        .map(|(&a, &b)| a.exp() * (a - b))
        .sum::<T>()
        .max(T::zero());
    let grad = lp
        .iter()
        .zip(&lq)
        .map(|(&a, &b)| a.exp() * (a - b - kl) / tau)
        .collect();
    (kl, grad)
}

fn stack<'a, T: Scalar>(rows: impl Iterator<Item = &'a [T]>, width: usize) -> Result<Array2<T>> {
    let mut flat = Vec::new();
    let mut n = 0;
    for row in rows {
        if row.len() != width {
            return Err(Error::Dimension {
                expected: width,
                actual: row.len(),
            });
        }
        flat.extend_from_slice(row);
        n += 1;
    }
    Ok(Array2::from_shape_vec((n, width), flat).expect("rows have equal width"))
}

/// Loss on `batch` and its gradient with respect to the online parameters.
///
/// The online forward runs in train mode (dropout drawn from `rng`); targets
/// and the KL reference come from eval-mode forwards and are held constant.
pub fn loss_and_gradients<T: Scalar, R: Rng + ?Sized>(
    batch: &[&Transition<T>],
    online: &QNetwork<T>,
    target: &QNetwork<T>,
    cfg: &LearnerConfig,
    rng: &mut R,
) -> Result<(LossBreakdown, Gradients<T>)> {
    if batch.is_empty() {
        return Err(Error::Empty("training batch"));
    }
    let n = T::of(batch.len() as f64);
    let y = ddqn_targets(batch, online, target, cfg.gamma)?;
    let states = stack(batch.iter().map(|t| t.state.as_slice()), online.input_dim())?;
    let cache = online.forward_batch(states.view(), Mode::Train, rng)?;
    let q = &cache.output;
    let mut d_out = Array2::<T>::zeros(q.raw_dim());

    let mut q_loss = T::zero();
    for (i, t) in batch.iter().enumerate() {
        let a = t.action.index();
        let residual = q[[i, a]] - y[i];
        q_loss += residual * residual;
        d_out[[i, a]] = T::of(2.0) * residual / n;
    }
    q_loss /= n;

    let mut kl_loss = T::zero();
    if cfg.kl_beta > 0.0 {
        let q_ref = target.predict(states.view())?;
        let beta = T::of(cfg.kl_beta);
        for i in 0..batch.len() {
            let row = q.row(i);
            let (kl, grad) = kl_with_gradient(
                row.as_slice().expect("contiguous"),
                q_ref.row(i).as_slice().expect("contiguous"),
                cfg.temperature,
            );
            kl_loss += kl;
            for (j, g) in grad.into_iter().enumerate() {
                d_out[[i, j]] += beta * g / n;
            }
        }
        kl_loss /= n;
    }
    let grads = online.backward(&cache, &d_out);
    let q_loss = q_loss.as_f64();
    let kl_loss = kl_loss.as_f64();
    let loss = LossBreakdown {
        q_loss,
        kl_loss,
        total: q_loss + cfg.kl_beta * kl_loss,
    };
    Ok((loss, grads))
}

/// One optimizer step on `batch`. Returns the pre-update loss. A non-finite
/// loss or gradient leaves the network untouched and yields
/// [`Error::NonFiniteLoss`] tagged with the optimizer step index.
pub fn train_step<T: Scalar, R: Rng + ?Sized>(
    batch: &[&Transition<T>],
    online: &mut QNetwork<T>,
    target: &QNetwork<T>,
    opt: &mut OptimizerState<T>,
    cfg: &LearnerConfig,
    rng: &mut R,
) -> Result<LossBreakdown> {
    let (loss, mut grads) = loss_and_gradients(batch, online, target, cfg, rng)?;
    if !loss.is_finite() || !grads.is_finite() {
        return Err(Error::NonFiniteLoss { step: opt.step + 1 });
    }
    if let Some(clip) = cfg.grad_clip {
        grads.clip_norm(T::of(clip));
    }
    adamw_step(online, &grads, opt)?;
    if !online.is_finite() {
        return Err(Error::NonFiniteLoss { step: opt.step });
    }
    Ok(loss)
}
