//! Feed-forward baseline predictor: 16→64→32→1 with ReLU and a sigmoid
//! output. It sees only the features of the access being predicted.

use super::loss::{bce_logit_grad, bce_single};
use super::{scale, sigmoid, Dense, Dropout, Example, ParamSet, ReuseModel};
use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::trace::{FeatureVector, FEATURE_DIM};

pub const WIDTHS: [usize; 4] = [FEATURE_DIM, 64, 32, 1];

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub layers: [Dense; 3],
}

const NAMES: [&str; 6] = [
    "l0.weights",
    "l0.bias",
    "l1.weights",
    "l1.bias",
    "l2.weights",
    "l2.bias",
];

impl MlpParams {
    pub fn zeros() -> Self {
        Self {
            layers: [0, 1, 2].map(|l| Dense::zeros(WIDTHS[l], WIDTHS[l + 1])),
        }
    }

    pub fn init(seed: u64) -> Self {
        let mut rng = SplitMix64::derive(seed, 0x31F);
        Self {
            layers: [0, 1, 2].map(|l| {
                let gain = if l == 2 { 1.0 } else { 2.0 };
                Dense::random(WIDTHS[l], WIDTHS[l + 1], gain, &mut rng)
            }),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (l, d) in self.layers.iter().enumerate() {
            if d.inputs != WIDTHS[l] || d.outputs != WIDTHS[l + 1] {
                return Err(Error::Shape(format!(
                    "layer {l} must be {}→{}",
                    WIDTHS[l],
                    WIDTHS[l + 1]
                )));
            }
            d.check_shape(NAMES[2 * l])?;
        }
        Ok(())
    }
}

impl ParamSet for MlpParams {
    fn tensors(&self) -> Vec<(&'static str, &[f64])> {
        let [a, b, c] = &self.layers;
        let t: [&[f64]; 6] = [
            &a.weights, &a.bias, &b.weights, &b.bias, &c.weights, &c.bias,
        ];
        NAMES.into_iter().zip(t).collect()
    }

    fn tensors_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        let [a, b, c] = &mut self.layers;
        let t: [&mut [f64]; 6] = [
            &mut a.weights,
            &mut a.bias,
            &mut b.weights,
            &mut b.bias,
            &mut c.weights,
            &mut c.bias,
        ];
        NAMES.into_iter().zip(t).collect()
    }
}

struct MlpForward {
    /// Input then post-ReLU (post-dropout) activations of the hidden layers.
    acts: [Vec<f64>; 3],
    pres: [Vec<f64>; 2],
    masks: [Vec<f64>; 2],
    logit: f64,
}

fn forward(
    params: &MlpParams,
    x: &FeatureVector,
    dropout: Option<(f64, &mut SplitMix64)>,
) -> MlpForward {
    let mut acts: [Vec<f64>; 3] = [x.0.to_vec(), Vec::new(), Vec::new()];
    let mut pres: [Vec<f64>; 2] = Default::default();
    let mut masks: [Vec<f64>; 2] = Default::default();
    let mut dropout = dropout;
    for l in 0..2 {
        let mut z = vec![0.0; WIDTHS[l + 1]];
        params.layers[l].forward(&acts[l], &mut z);
        let mut a: Vec<f64> = z.iter().map(|&v| v.max(0.0)).collect();
        if let Some((p, rng)) = dropout.as_mut() {
            let keep = 1.0 / (1.0 - *p);
            let m: Vec<f64> = (0..a.len())
                .map(|_| if rng.next_f64() < *p { 0.0 } else { keep })
                .collect();
            for (v, s) in a.iter_mut().zip(&m) {
                *v *= s;
            }
            masks[l] = m;
        }
        pres[l] = z;
        acts[l + 1] = a;
    }
    let mut out = [0.0];
    params.layers[2].forward(&acts[2], &mut out);
    MlpForward {
        acts,
        pres,
        masks,
        logit: out[0],
    }
}

/// Eval-mode prediction from a single feature vector.
pub fn mlp_forward(params: &MlpParams, features: &FeatureVector) -> f64 {
    sigmoid(forward(params, features, None).logit)
}

/// Same as [`mlp_forward`] for raw rows, rejecting the wrong dimension.
pub fn mlp_forward_row(params: &MlpParams, row: &[f64]) -> Result<f64> {
    let x = super::window_from_rows(&[row.to_vec()])?;
    Ok(mlp_forward(params, &x[0]))
}

impl ReuseModel for MlpParams {
    fn predict(&self, window: &[FeatureVector]) -> f64 {
        match window.last() {
            Some(x) => mlp_forward(self, x),
            None => 0.5,
        }
    }

    fn loss_and_grad(
        &self,
        batch: &[Example<'_>],
        dropout: Option<Dropout>,
    ) -> Result<(f64, Self)> {
        if batch.is_empty() {
            return Err(Error::InvalidInput("empty batch".into()));
        }
        self.validate()?;
        let mut grad = self.zeros_like();
        let mut loss = 0.0;
        for (i, ex) in batch.iter().enumerate() {
            let x = ex
                .window
                .last()
                .ok_or_else(|| Error::Shape("empty feature window".into()))?;
            let mut rng = dropout.map(|d| SplitMix64::derive(d.seed, i as u64));
            let drop = match (dropout, rng.as_mut()) {
                (Some(d), Some(r)) if d.p > 0.0 => Some((d.p, r)),
                _ => None,
            };
            let f = forward(self, x, drop);
            let y_hat = sigmoid(f.logit);
            loss += bce_single(y_hat, ex.label);
            let mut g = vec![bce_logit_grad(y_hat, ex.label)];
            for l in (0..3).rev() {
                let mut g_in = vec![0.0; WIDTHS[l]];
                self.layers[l].backward(&f.acts[l], &g, &mut grad.layers[l], &mut g_in);
                if l > 0 {
                    let h = l - 1;
                    for (k, gv) in g_in.iter_mut().enumerate() {
                        let m = if f.masks[h].is_empty() {
                            1.0
                        } else {
                            f.masks[h][k]
                        };
                        if f.pres[h][k] <= 0.0 {
                            *gv = 0.0;
                        } else {
                            *gv *= m;
                        }
                    }
                }
                g = g_in;
            }
        }
        let n = batch.len() as f64;
        scale(&mut grad, 1.0 / n);
        Ok((loss / n, grad))
    }

    fn zeros_like(&self) -> Self {
        Self::zeros()
    }

    fn context_len(&self) -> usize {
        1
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Dense matrix-vector oracle, written independently of `Dense`.
    fn oracle(p: &MlpParams, x: &[f64]) -> f64 {
        let mut h = x.to_vec();
        for (l, d) in p.layers.iter().enumerate() {
            let mut next = vec![0.0; d.outputs];
            for (o, n) in next.iter_mut().enumerate() {
                let mut s = d.bias[o];
                for (i, hv) in h.iter().enumerate() {
                    s += d.weights[o * d.inputs + i] * hv;
                }
                *n = if l < 2 { s.max(0.0) } else { s };
            }
            h = next;
        }
        1.0 / (1.0 + (-h[0]).exp())
    }

    #[test]
    fn zero_and_bias_only() {
        let mut p = MlpParams::zeros();
        let x = FeatureVector([0.3; FEATURE_DIM]);
        assert_eq!(mlp_forward(&p, &x), 0.5);
        p.layers[2].bias[0] = 1.7;
        assert!((mlp_forward(&p, &x) - sigmoid(1.7)).abs() < 1e-15);
    }

    #[test]
    fn matches_dense_oracle() {
        let p = MlpParams::init(0);
        let mut rng = SplitMix64::new(11);
        for _ in 0..50 {
            let x: [f64; FEATURE_DIM] = std::array::from_fn(|_| rng.normal());
            let got = mlp_forward(&p, &FeatureVector(x));
            assert!((got - oracle(&p, &x)).abs() <= 1e-12);
        }
    }

    #[test]
    fn ignores_history() {
        let p = MlpParams::init(1);
        let a = FeatureVector([0.1; FEATURE_DIM]);
        let b = FeatureVector([0.9; FEATURE_DIM]);
        assert_eq!(p.predict(&[a, b]), p.predict(&[b]));
        assert_eq!(p.predict(&[b, a]), mlp_forward(&p, &a));
    }

    #[test]
    fn wrong_row_width() {
        let p = MlpParams::zeros();
        assert!(matches!(
            mlp_forward_row(&p, &[0.0; 8]),
            Err(Error::Shape(_))
        ));
        assert_eq!(mlp_forward_row(&p, &[0.0; 16]).unwrap(), 0.5);
    }
}
