//! Reuse predictors and everything needed to train them without an autodiff
//! framework: the dilated causal convolutional network, a feed-forward
//! baseline, binary cross-entropy, exact backpropagation, Adam, the
//! training loop, finite-difference checking and the JSON model format.

pub mod adam;
pub mod gradcheck;
pub mod loss;
pub mod mlp;
pub mod model_io;
pub mod tcn;
pub mod train;

pub use adam::{adam_step, AdamState};
pub use gradcheck::grad_check;
pub use loss::bce_loss;
pub use mlp::{mlp_forward, MlpParams};
pub use model_io::{load_model, save_model, AnyModel};
pub use tcn::{tcn_forward, Mode, TcnForward, TcnParams};
pub use train::{
    train, train_on_trace, training_sets, Architecture, Dataset, TrainConfig, TrainOutcome,
};

use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::trace::{FeatureVector, FEATURE_DIM};

/// Access to a model's learnable tensors, in a fixed order, by name.
pub trait ParamSet {
    fn tensors(&self) -> Vec<(&'static str, &[f64])>;
    fn tensors_mut(&mut self) -> Vec<(&'static str, &mut [f64])>;

    fn num_params(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }

    /// Flat read of parameter `index` in `tensors()` order.
    fn get_flat(&self, mut index: usize) -> f64 {
        for (_, t) in self.tensors() {
            if index < t.len() {
                return t[index];
            }
            index -= t.len();
        }
        panic!("parameter index out of range")
    }

    fn set_flat(&mut self, mut index: usize, value: f64) {
        for (_, t) in self.tensors_mut() {
            if index < t.len() {
                t[index] = value;
                return;
            }
            index -= t.len();
        }
        panic!("parameter index out of range")
    }

    fn fill(&mut self, value: f64) {
        for (_, t) in self.tensors_mut() {
            t.fill(value);
        }
    }
}

/// One supervised example: the trailing feature window ending at the access
/// being predicted, and its binary reuse label.
#[derive(Debug, Clone, Copy)]
pub struct Example<'a> {
    pub window: &'a [FeatureVector],
    pub label: f64,
}

/// Inverted dropout applied during training passes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dropout {
    pub p: f64,
    pub seed: u64,
}

/// Common interface of the learned predictors used by training, the
/// simulator and the online feedback loop.
pub trait ReuseModel: ParamSet + Clone + Send + Sync {
    /// Deterministic inference; the last element of `window` is the access
    /// being predicted.
    fn predict(&self, window: &[FeatureVector]) -> f64;

    /// Mean loss over `batch` and its exact gradient. With `dropout`, sample
    /// `i` uses a mask stream derived from `(dropout.seed, i)`.
    fn loss_and_grad(&self, batch: &[Example<'_>], dropout: Option<Dropout>)
        -> Result<(f64, Self)>;

    fn zeros_like(&self) -> Self;

    /// Number of trailing accesses the prediction can depend on.
    fn context_len(&self) -> usize;
}

/// Fully connected layer, `weights` row-major `[out × in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    /// Gaussian init with standard deviation `sqrt(gain / inputs)`, zero bias.
    pub fn random(inputs: usize, outputs: usize, gain: f64, rng: &mut SplitMix64) -> Self {
        let std = (gain / inputs as f64).sqrt();
        let mut d = Self::zeros(inputs, outputs);
        for w in &mut d.weights {
            *w = rng.normal() * std;
        }
        d
    }

    pub fn forward(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.inputs);
        for (o, slot) in out.iter_mut().enumerate() {
            let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
            let mut acc = self.bias[o];
            for (w, v) in row.iter().zip(x) {
                acc += w * v;
            }
            *slot = acc;
        }
    }

    /// Accumulates parameter gradients for upstream gradient `g_out` at input
    /// `x` into `grad`, and writes the input gradient into `g_in`.
    pub fn backward(&self, x: &[f64], g_out: &[f64], grad: &mut Dense, g_in: &mut [f64]) {
        g_in.fill(0.0);
        for (o, &g) in g_out.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grad.bias[o] += g;
            let row = o * self.inputs..(o + 1) * self.inputs;
            for ((gw, w), (v, gi)) in grad.weights[row.clone()]
                .iter_mut()
                .zip(&self.weights[row])
                .zip(x.iter().zip(g_in.iter_mut()))
            {
                *gw += g * v;
                *gi += g * w;
            }
        }
    }

    fn check_shape(&self, name: &str) -> Result<()> {
        if self.weights.len() != self.inputs * self.outputs || self.bias.len() != self.outputs {
            return Err(Error::Shape(format!(
                "{name}: expected [{}×{}] weights and {} biases",
                self.outputs, self.inputs, self.outputs
            )));
        }
        Ok(())
    }
}

/// Logistic function, kept strictly inside (0, 1) even where f64 would
/// round to an endpoint.
#[inline]
pub fn sigmoid(z: f64) -> f64 {
    let y = if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    };
    y.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

/// Converts raw rows into feature vectors, rejecting wrong dimensions.
pub fn window_from_rows(rows: &[Vec<f64>]) -> Result<Vec<FeatureVector>> {
    rows.iter()
        .enumerate()
        .map(|(i, r)| {
            let arr: [f64; FEATURE_DIM] = r.as_slice().try_into().map_err(|_| {
                Error::Shape(format!(
                    "feature row {i} has {} components, expected {FEATURE_DIM}",
                    r.len()
                ))
            })?;
            Ok(FeatureVector(arr))
        })
        .collect()
}

/// Subtracts `lr * grad` from every parameter (plain gradient descent).
pub fn sgd_step<M: ParamSet>(params: &mut M, grads: &M, lr: f64) {
    let grads = grads.tensors();
    for ((_, p), (_, g)) in params.tensors_mut().into_iter().zip(grads) {
        for (p, g) in p.iter_mut().zip(g) {
            *p -= lr * g;
        }
    }
}

/// `acc += other`, tensor by tensor.
pub fn accumulate<M: ParamSet>(acc: &mut M, other: &M) {
    let other = other.tensors();
    for ((_, a), (_, o)) in acc.tensors_mut().into_iter().zip(other) {
        for (a, o) in a.iter_mut().zip(o) {
            *a += o;
        }
    }
}

pub fn scale<M: ParamSet>(m: &mut M, factor: f64) {
    for (_, t) in m.tensors_mut() {
        for v in t.iter_mut() {
            *v *= factor;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(800.0) < 1.0);
        assert!(sigmoid(-800.0) > 0.0);
        assert!((sigmoid(2.0) + sigmoid(-2.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rows_with_wrong_width_rejected() {
        assert!(window_from_rows(&[vec![0.0; 16]]).is_ok());
        assert!(matches!(
            window_from_rows(&[vec![0.0; 15]]),
            Err(Error::Shape(_))
        ));
    }
}
