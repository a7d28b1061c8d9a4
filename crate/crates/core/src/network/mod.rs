//! Fully connected Q-network with hand-written backpropagation.
//!
//! Layer `k` maps `x -> x . W_k + b_k` with `W_k` stored `(in, out)` row-major.
//! Hidden layers apply ReLU followed by inverted dropout in training mode;
//! the output layer is linear.

mod checkpoint;
mod optim;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint, LearnerFooter, MAGIC};
pub use optim::{adamw_step, OptimizerConfig, OptimizerState};

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::domain::Action;
use crate::error::{Error, Result};
use crate::policy::QFunction;
use crate::scalar::Scalar;

pub const HIDDEN_LAYERS: [usize; 2] = [256, 128];
pub const DROPOUT_P: f64 = 0.1;
const OUTPUT_INIT_SCALE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub weights: Array2<T>,
    pub bias: Array1<T>,
}

impl<T: Scalar> Dense<T> {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weights: Array2::zeros((inputs, outputs)),
            bias: Array1::zeros(outputs),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weights.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.weights.ncols()
    }

    fn forward(&self, x: &ArrayView2<'_, T>) -> Array2<T> {
        let mut z = x.dot(&self.weights);
        z += &self.bias;
        z
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QNetwork<T: Scalar = f64> {
    layers: Vec<Dense<T>>,
    dropout_p: f64,
}

/// Activations retained from a batched forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    input: Array2<T>,
    /// Pre-activation of each hidden layer.
    pre: Vec<Array2<T>>,
    /// Post-ReLU, post-dropout output of each hidden layer.
    hidden: Vec<Array2<T>>,
    /// Scaled keep masks (`0` or `1/(1-p)`), train mode only.
    masks: Vec<Option<Array2<T>>>,
    pub output: Array2<T>,
}

/// Parameter-shaped buffers: gradients, or optimizer moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub weights: Vec<Array2<T>>,
    pub biases: Vec<Array1<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros_like(net: &QNetwork<T>) -> Self {
        Self {
            weights: net.layers.iter().map(|l| Array2::zeros(l.weights.raw_dim())).collect(),
            biases: net.layers.iter().map(|l| Array1::zeros(l.bias.raw_dim())).collect(),
        }
    }

    pub fn scale(&mut self, factor: T) {
        for w in &mut self.weights {
            w.mapv_inplace(|g| g * factor);
        }
        for b in &mut self.biases {
            b.mapv_inplace(|g| g * factor);
        }
    }

    pub fn global_norm(&self) -> T {
        let sq = |acc: T, g: &T| acc + *g * *g;
        let total = self.weights.iter().map(|w| w.iter().fold(T::zero(), sq)).sum::<T>()
            + self.biases.iter().map(|b| b.iter().fold(T::zero(), sq)).sum::<T>();
        total.sqrt()
    }

    /// Rescales so the global L2 norm is at most `max_norm`.
    pub fn clip_norm(&mut self, max_norm: T) {
        let norm = self.global_norm();
        if norm > max_norm && norm > T::zero() {
            self.scale(max_norm / norm);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(|g| g.is_finite())
    }

    /// Flat iteration in checkpoint order: per layer, weights then bias.
    pub fn iter(&self) -> impl Iterator<Item = &T> + '_ {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| w.iter().chain(b.iter()))
    }

    pub fn get(&self, flat_index: usize) -> T {
        *self.iter().nth(flat_index).expect("flat index in range")
    }
}

impl<T: Scalar> QNetwork<T> {
    /// Random initialization: He-uniform hidden layers, `U(+-1e-3)` output
    /// layer, zero biases.
    pub fn new<R: Rng + ?Sized>(dims: &[usize], dropout_p: f64, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(dims, dropout_p)?;
        let last = net.layers.len() - 1;
        for (k, layer) in net.layers.iter_mut().enumerate() {
            let bound = if k == last {
                OUTPUT_INIT_SCALE
            } else {
                (6.0 / layer.inputs() as f64).sqrt()
            };
            let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
            layer.weights.mapv_inplace(|_| T::of(dist.sample(rng)));
        }
        Ok(net)
    }

    /// `[d_in, 256, 128, 10]` with the standard dropout rate.
    pub fn standard<R: Rng + ?Sized>(d_in: usize, rng: &mut R) -> Result<Self> {
        Self::new(&Self::standard_dims(d_in), DROPOUT_P, rng)
    }

    pub fn standard_dims(d_in: usize) -> Vec<usize> {
        let mut dims = vec![d_in];
        dims.extend(HIDDEN_LAYERS);
        dims.push(Action::COUNT);
        dims
    }

    pub fn zeros(dims: &[usize], dropout_p: f64) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::Architecture(format!("bad layer dims {dims:?}")));
        }
        if !(0.0..1.0).contains(&dropout_p) {
            return Err(Error::Architecture(format!("dropout {dropout_p} not in [0, 1)")));
        }
        Ok(Self {
            layers: dims.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect(),
            dropout_p,
        })
    }

    pub fn from_layers(layers: Vec<Dense<T>>, dropout_p: f64) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Architecture("no layers".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].outputs() != pair[1].inputs() || pair[0].outputs() != pair[0].bias.len() {
                return Err(Error::Architecture("layer shapes do not chain".into()));
            }
        }
        Ok(Self { layers, dropout_p })
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut dims = vec![self.input_dim()];
        dims.extend(self.layers.iter().map(Dense::outputs));
        dims
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs()
    }

    pub fn dropout_p(&self) -> f64 {
        self.dropout_p
    }

    pub fn layers(&self) -> &[Dense<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense<T>] {
        &mut self.layers
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn parameters(&self) -> impl Iterator<Item = &T> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()))
    }

    pub fn parameters_mut(&mut self) -> impl Iterator<Item = &mut T> + '_ {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn is_finite(&self) -> bool {
        self.parameters().all(|p| p.is_finite())
    }

    pub fn same_architecture(&self, other: &Self) -> bool {
        self.dims() == other.dims() && self.dropout_p == other.dropout_p
    }

    /// Single-state forward pass.
    pub fn forward<R: Rng + ?Sized>(&self, state: &[T], mode: Mode, rng: &mut R) -> Result<Vec<T>> {
        if state.len() != self.input_dim() {
            return Err(Error::Dimension {
                expected: self.input_dim(),
                actual: state.len(),
            });
        }
        let x = ArrayView2::from_shape((1, state.len()), state).expect("contiguous row");
        let cache = self.forward_batch(x, mode, rng)?;
        Ok(cache.output.row(0).to_vec())
    }

    /// Deterministic eval-mode forward pass over a batch of rows.
    pub fn predict(&self, batch: ArrayView2<'_, T>) -> Result<Array2<T>> {
        self.check_batch(&batch)?;
        let mut x = batch.to_owned();
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            x = layer.forward(&x.view());
            if k < last {
                x.mapv_inplace(relu);
            }
        }
        Ok(x)
    }

    pub fn forward_batch<R: Rng + ?Sized>(
        &self,
        batch: ArrayView2<'_, T>,
        mode: Mode,
        rng: &mut R,
    ) -> Result<ForwardCache<T>> {
        self.check_batch(&batch)?;
        let last = self.layers.len() - 1;
        let keep = 1.0 - self.dropout_p;
        let dropout = mode == Mode::Train && self.dropout_p > 0.0;
        let input = batch.to_owned();
        let mut pre = Vec::with_capacity(last);
        let mut hidden: Vec<Array2<T>> = Vec::with_capacity(last);
        let mut masks = Vec::with_capacity(last);
        for layer in &self.layers[..last] {
            let x = hidden.last().map(|h| h.view()).unwrap_or_else(|| input.view());
            let z = layer.forward(&x);
            let mut h = z.mapv(relu);
            let mask = dropout.then(|| {
                let scale = T::of(1.0 / keep);
                let m = Array2::from_shape_simple_fn(h.raw_dim(), || {
                    if rng.random::<f64>() < keep {
                        scale
                    } else {
                        T::zero()
                    }
                });
                h *= &m;
                m
            });
            pre.push(z);
            hidden.push(h);
            masks.push(mask);
        }
        let x = hidden.last().map(|h| h.view()).unwrap_or_else(|| input.view());
        let output = self.layers[last].forward(&x);
        Ok(ForwardCache {
            input,
            pre,
            hidden,
            masks,
            output,
        })
    }

    /// Backpropagates `d_output` (dLoss/dQ, one row per sample) through the
    /// pass recorded in `cache`.
    pub fn backward(&self, cache: &ForwardCache<T>, d_output: &Array2<T>) -> Gradients<T> {
        assert_eq!(d_output.dim(), cache.output.dim(), "d_output shape");
        let n = self.layers.len();
        let mut grads = Gradients::zeros_like(self);
        let mut delta = d_output.clone();
        for k in (0..n).rev() {
            let x = if k == 0 { cache.input.view() } else { cache.hidden[k - 1].view() };
            grads.weights[k] = x.t().dot(&delta);
            grads.biases[k] = delta.sum_axis(Axis(0));
            if k > 0 {
                let mut d_prev = delta.dot(&self.layers[k].weights.t());
                let h = k - 1;
                Zip::from(&mut d_prev)
                    .and(&cache.pre[h])
                    .for_each(|d, &z| {
                        if z <= T::zero() {
                            *d = T::zero();
                        }
                    });
                if let Some(mask) = &cache.masks[h] {
                    d_prev *= mask;
                }
                delta = d_prev;
            }
        }
        grads
    }

    /// Gradient of the squared TD error `(y - Q(s, a))^2` for one sample.
    pub fn td_gradients<R: Rng + ?Sized>(
        &self,
        state: &[T],
        action_index: usize,
        target: T,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(T, Gradients<T>)> {
        if state.len() != self.input_dim() {
            return Err(Error::Dimension {
                expected: self.input_dim(),
                actual: state.len(),
            });
        }
        let x = ArrayView2::from_shape((1, state.len()), state).expect("contiguous row");
        let cache = self.forward_batch(x, mode, rng)?;
        let residual = cache.output[[0, action_index]] - target;
        let mut d_out = Array2::zeros(cache.output.raw_dim());
        d_out[[0, action_index]] = T::of(2.0) * residual;
        Ok((residual * residual, self.backward(&cache, &d_out)))
    }

    /// Copies every parameter of `source` into `self`.
    pub fn copy_from(&mut self, source: &Self) -> Result<()> {
        if !self.same_architecture(source) {
            return Err(Error::Architecture(format!(
                "cannot copy {:?} into {:?}",
                source.dims(),
                self.dims()
            )));
        }
        for (dst, src) in self.layers.iter_mut().zip(&source.layers) {
            dst.weights.assign(&src.weights);
            dst.bias.assign(&src.bias);
        }
        Ok(())
    }

    fn check_batch(&self, batch: &ArrayView2<'_, T>) -> Result<()> {
        if batch.ncols() != self.input_dim() {
            return Err(Error::Dimension {
                expected: self.input_dim(),
                actual: batch.ncols(),
            });
        }
        Ok(())
    }
}

#[inline]
fn relu<T: Scalar>(z: T) -> T {
    if z > T::zero() {
        z
    } else {
        T::zero()
    }
}

/// Target-network sync: `target` becomes a parameter copy of `online`.
pub fn hard_update<T: Scalar>(target: &mut QNetwork<T>, online: &QNetwork<T>) -> Result<()> {
    target.copy_from(online)
}

impl<T: Scalar> QFunction<T> for QNetwork<T> {
    fn q_values(&self, state: &[T]) -> Vec<T> {
        let x = ArrayView2::from_shape((1, state.len()), state).expect("contiguous row");
        self.predict(x).expect("state matches network input").row(0).to_vec()
    }
}
