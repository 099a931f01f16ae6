//! Dilated causal convolutional reuse predictor.
//!
//! Three causal convolutions (kernel 3, dilations 1, 2, 4, channels
//! 16→32→32→32, ReLU, optional inverted dropout) followed by two dense
//! layers 32→16→1 applied at the last time step, ReLU between them and a
//! sigmoid on the output.
//!
//! Convolution tap `j` of a layer with dilation `d` reads input position
//! `t - (K - 1 - j) * d`; positions before the window start are zero
//! padding. The receptive field is `1 + (K - 1) * (1 + 2 + 4) = 15`
//! accesses, so only the last 15 entries of a window can affect the output
//! and the forward pass evaluates each layer just on the positions the final
//! output depends on.

use super::loss::{bce_logit_grad, bce_single};
use super::{scale, sigmoid, Dense, Dropout, Example, ParamSet, ReuseModel};
use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::trace::{FeatureVector, FEATURE_DIM};

pub const KERNEL: usize = 3;
pub const DILATIONS: [usize; 3] = [1, 2, 4];
pub const CHANNELS: [usize; 4] = [FEATURE_DIM, 32, 32, 32];
pub const HIDDEN: usize = 16;
pub const WINDOW: usize = 64;
pub const RECEPTIVE_FIELD: usize = 1 + (KERNEL - 1) * (1 + 2 + 4);

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub in_ch: usize,
    pub out_ch: usize,
    pub dilation: usize,
    /// Row-major `[out_ch × in_ch × KERNEL]`.
    pub kernel: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ConvLayer {
    fn zeros(in_ch: usize, out_ch: usize, dilation: usize) -> Self {
        Self {
            in_ch,
            out_ch,
            dilation,
            kernel: vec![0.0; out_ch * in_ch * KERNEL],
            bias: vec![0.0; out_ch],
        }
    }

    /// Pre-activations for positions `start..len` of a `[len × in_ch]` input,
    /// written into `out` (`[len × out_ch]`). Other positions are untouched.
    fn forward(&self, input: &[f64], len: usize, start: usize, out: &mut [f64]) {
        let (cin, cout, d) = (self.in_ch, self.out_ch, self.dilation);
        for t in start..len {
            let row = &mut out[t * cout..(t + 1) * cout];
            for (o, slot) in row.iter_mut().enumerate() {
                let mut acc = self.bias[o];
                for j in 0..KERNEL {
                    let back = (KERNEL - 1 - j) * d;
                    if back > t {
                        continue;
                    }
                    let x = &input[(t - back) * cin..(t - back + 1) * cin];
                    let wrow = &self.kernel[o * cin * KERNEL..(o + 1) * cin * KERNEL];
                    for (i, &xv) in x.iter().enumerate() {
                        acc += wrow[i * KERNEL + j] * xv;
                    }
                }
                *slot = acc;
            }
        }
    }

    /// Accumulates kernel/bias gradients from `g_pre` (positions
    /// `start..len`) and adds the input gradient into `g_in`.
    fn backward(
        &self,
        input: &[f64],
        len: usize,
        start: usize,
        g_pre: &[f64],
        grad: &mut ConvLayer,
        g_in: &mut [f64],
    ) {
        let (cin, cout, d) = (self.in_ch, self.out_ch, self.dilation);
        for t in start..len {
            for o in 0..cout {
                let g = g_pre[t * cout + o];
                if g == 0.0 {
                    continue;
                }
                grad.bias[o] += g;
                for j in 0..KERNEL {
                    let back = (KERNEL - 1 - j) * d;
                    if back > t {
                        continue;
                    }
                    let s = t - back;
                    for i in 0..cin {
                        let k = (o * cin + i) * KERNEL + j;
                        grad.kernel[k] += g * input[s * cin + i];
                        g_in[s * cin + i] += g * self.kernel[k];
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TcnParams {
    pub conv: [ConvLayer; 3],
    /// `[HIDDEN × 32]`.
    pub fc1: Dense,
    /// `[1 × HIDDEN]`.
    pub fc2: Dense,
}

impl TcnParams {
    pub fn zeros() -> Self {
        Self {
            conv: [0, 1, 2].map(|l| ConvLayer::zeros(CHANNELS[l], CHANNELS[l + 1], DILATIONS[l])),
            fc1: Dense::zeros(CHANNELS[3], HIDDEN),
            fc2: Dense::zeros(HIDDEN, 1),
        }
    }

    /// He-initialised weights, zero biases.
    pub fn init(seed: u64) -> Self {
        let mut rng = SplitMix64::derive(seed, 0x7C4);
        let mut p = Self::zeros();
        for layer in &mut p.conv {
            let std = (2.0 / (layer.in_ch * KERNEL) as f64).sqrt();
            for w in &mut layer.kernel {
                *w = rng.normal() * std;
            }
        }
        p.fc1 = Dense::random(CHANNELS[3], HIDDEN, 2.0, &mut rng);
        p.fc2 = Dense::random(HIDDEN, 1, 1.0, &mut rng);
        p
    }

    pub fn validate(&self) -> Result<()> {
        for (l, layer) in self.conv.iter().enumerate() {
            if layer.in_ch != CHANNELS[l]
                || layer.out_ch != CHANNELS[l + 1]
                || layer.dilation != DILATIONS[l]
                || layer.kernel.len() != layer.out_ch * layer.in_ch * KERNEL
                || layer.bias.len() != layer.out_ch
            {
                return Err(Error::Shape(format!("conv layer {l} has the wrong shape")));
            }
        }
        if self.fc1.inputs != CHANNELS[3] || self.fc1.outputs != HIDDEN {
            return Err(Error::Shape("fc1 must be 32→16".into()));
        }
        if self.fc2.inputs != HIDDEN || self.fc2.outputs != 1 {
            return Err(Error::Shape("fc2 must be 16→1".into()));
        }
        self.fc1.check_shape("fc1")?;
        self.fc2.check_shape("fc2")
    }
}

const NAMES: [&str; 10] = [
    "conv0.kernel",
    "conv0.bias",
    "conv1.kernel",
    "conv1.bias",
    "conv2.kernel",
    "conv2.bias",
    "fc1.weights",
    "fc1.bias",
    "fc2.weights",
    "fc2.bias",
];

impl ParamSet for TcnParams {
    fn tensors(&self) -> Vec<(&'static str, &[f64])> {
        let [c0, c1, c2] = &self.conv;
        let t: [&[f64]; 10] = [
            &c0.kernel,
            &c0.bias,
            &c1.kernel,
            &c1.bias,
            &c2.kernel,
            &c2.bias,
            &self.fc1.weights,
            &self.fc1.bias,
            &self.fc2.weights,
            &self.fc2.bias,
        ];
        NAMES.into_iter().zip(t).collect()
    }

    fn tensors_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        let [c0, c1, c2] = &mut self.conv;
        let t: [&mut [f64]; 10] = [
            &mut c0.kernel,
            &mut c0.bias,
            &mut c1.kernel,
            &mut c1.bias,
            &mut c2.kernel,
            &mut c2.bias,
            &mut self.fc1.weights,
            &mut self.fc1.bias,
            &mut self.fc2.weights,
            &mut self.fc2.bias,
        ];
        NAMES.into_iter().zip(t).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Mode {
    Eval,
    /// Inverted dropout after every convolution, masks drawn from `seed`.
    Train {
        dropout_p: f64,
        seed: u64,
    },
}

/// Forward result plus the activations needed by [`TcnForward::backward`].
#[derive(Debug, Clone)]
pub struct TcnForward {
    pub y_hat: f64,
    pub logit: f64,
    len: usize,
    /// First computed position of the input and of each conv output.
    starts: [usize; 4],
    input: Vec<f64>,
    pre: [Vec<f64>; 3],
    act: [Vec<f64>; 3],
    /// Dropout scale per conv activation (empty in eval mode).
    masks: [Vec<f64>; 3],
    fc1_pre: Vec<f64>,
    fc1_act: Vec<f64>,
}

fn starts_for(len: usize, all_positions: bool) -> [usize; 4] {
    if all_positions {
        return [0; 4];
    }
    let mut starts = [0; 4];
    let mut need = len - 1;
    starts[3] = need;
    for l in (0..3).rev() {
        need = need.saturating_sub((KERNEL - 1) * DILATIONS[l]);
        starts[l] = need;
    }
    starts
}

fn run_forward(
    params: &TcnParams,
    window: &[FeatureVector],
    mode: Mode,
    all_positions: bool,
) -> Result<TcnForward> {
    if window.is_empty() {
        return Err(Error::Shape("empty feature window".into()));
    }
    if window.len() > WINDOW {
        return Err(Error::Shape(format!(
            "window of {} exceeds the {WINDOW}-access limit",
            window.len()
        )));
    }
    let len = window.len();
    let starts = starts_for(len, all_positions);
    let mut input = vec![0.0; len * FEATURE_DIM];
    for t in starts[0]..len {
        input[t * FEATURE_DIM..(t + 1) * FEATURE_DIM].copy_from_slice(&window[t].0);
    }

    let mut pre: [Vec<f64>; 3] = Default::default();
    let mut act: [Vec<f64>; 3] = Default::default();
    let mut masks: [Vec<f64>; 3] = Default::default();
    let mut mask_rng = match mode {
        Mode::Train { seed, .. } => Some(SplitMix64::new(seed)),
        Mode::Eval => None,
    };
    for l in 0..3 {
        let layer = &params.conv[l];
        let src: &[f64] = if l == 0 { &input } else { &act[l - 1] };
        let mut p = vec![0.0; len * layer.out_ch];
        layer.forward(src, len, starts[l + 1], &mut p);
        let mut a: Vec<f64> = p.iter().map(|&v| v.max(0.0)).collect();
        if let (Mode::Train { dropout_p, .. }, Some(rng)) = (mode, mask_rng.as_mut()) {
            let keep = 1.0 / (1.0 - dropout_p);
            let mut m = vec![0.0; a.len()];
            for idx in starts[l + 1] * layer.out_ch..a.len() {
                m[idx] = if rng.next_f64() < dropout_p {
                    0.0
                } else {
                    keep
                };
                a[idx] *= m[idx];
            }
            masks[l] = m;
        }
        pre[l] = p;
        act[l] = a;
    }

    let last = &act[2][(len - 1) * CHANNELS[3]..len * CHANNELS[3]];
    let mut fc1_pre = vec![0.0; HIDDEN];
    params.fc1.forward(last, &mut fc1_pre);
    let fc1_act: Vec<f64> = fc1_pre.iter().map(|&v| v.max(0.0)).collect();
    let mut logit = [0.0];
    params.fc2.forward(&fc1_act, &mut logit);
    let logit = logit[0];
    Ok(TcnForward {
        y_hat: sigmoid(logit),
        logit,
        len,
        starts,
        input,
        pre,
        act,
        masks,
        fc1_pre,
        fc1_act,
    })
}

/// Forward pass; `window` ends at the access being predicted.
pub fn tcn_forward(params: &TcnParams, window: &[FeatureVector], mode: Mode) -> Result<TcnForward> {
    run_forward(params, window, mode, false)
}

/// Eval-mode post-ReLU outputs of every conv layer at every window
/// position, `[layer][t × channels]`.
pub fn tcn_layer_outputs(params: &TcnParams, window: &[FeatureVector]) -> Result<[Vec<f64>; 3]> {
    Ok(run_forward(params, window, Mode::Eval, true)?.act)
}

impl TcnForward {
    /// Adds `d loss / d logit = g_logit` propagated to every parameter into
    /// `grad`.
    pub fn backward(&self, params: &TcnParams, g_logit: f64, grad: &mut TcnParams) {
        if g_logit == 0.0 {
            return;
        }
        let len = self.len;
        let mut g_fc1_act = vec![0.0; HIDDEN];
        params
            .fc2
            .backward(&self.fc1_act, &[g_logit], &mut grad.fc2, &mut g_fc1_act);
        let g_fc1_pre: Vec<f64> = g_fc1_act
            .iter()
            .zip(&self.fc1_pre)
            .map(|(&g, &z)| if z > 0.0 { g } else { 0.0 })
            .collect();
        let c3 = CHANNELS[3];
        let last = &self.act[2][(len - 1) * c3..len * c3];
        let mut g_last = vec![0.0; c3];
        params
            .fc1
            .backward(last, &g_fc1_pre, &mut grad.fc1, &mut g_last);

        let mut g_act = vec![0.0; len * c3];
        g_act[(len - 1) * c3..].copy_from_slice(&g_last);
        for l in (0..3).rev() {
            let layer = &params.conv[l];
            let cout = layer.out_ch;
            let start = self.starts[l + 1];
            let mut g_pre = vec![0.0; len * cout];
            for idx in start * cout..len * cout {
                if self.pre[l][idx] > 0.0 {
                    let m = if self.masks[l].is_empty() {
                        1.0
                    } else {
                        self.masks[l][idx]
                    };
                    g_pre[idx] = g_act[idx] * m;
                }
            }
            let src: &[f64] = if l == 0 {
                &self.input
            } else {
                &self.act[l - 1]
            };
            let mut g_in = vec![0.0; len * layer.in_ch];
            layer.backward(src, len, start, &g_pre, &mut grad.conv[l], &mut g_in);
            if l > 0 {
                g_act = g_in;
            }
        }
    }
}

/// Gradient of the mean binary cross-entropy over `batch`.
///
/// In train mode sample `i` draws its dropout masks from
/// `SplitMix64::derive(seed, i)`, so the masks are fixed per sample.
pub fn backward(params: &TcnParams, batch: &[Example<'_>], mode: Mode) -> Result<(f64, TcnParams)> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    params.validate()?;
    let mut grad = params.zeros_like();
    let mut loss = 0.0;
    let n = batch.len() as f64;
    for (i, ex) in batch.iter().enumerate() {
        let sample_mode = match mode {
            Mode::Eval => Mode::Eval,
            Mode::Train { dropout_p, seed } => Mode::Train {
                dropout_p,
                seed: SplitMix64::derive(seed, i as u64).next_u64(),
            },
        };
        let fwd = tcn_forward(params, ex.window, sample_mode)?;
        loss += bce_single(fwd.y_hat, ex.label);
        fwd.backward(params, bce_logit_grad(fwd.y_hat, ex.label), &mut grad);
    }
    scale(&mut grad, 1.0 / n);
    Ok((loss / n, grad))
}

impl ReuseModel for TcnParams {
    fn predict(&self, window: &[FeatureVector]) -> f64 {
        let start = window.len().saturating_sub(RECEPTIVE_FIELD);
        match tcn_forward(self, &window[start..], Mode::Eval) {
            Ok(f) => f.y_hat,
            Err(_) => 0.5,
        }
    }

    fn loss_and_grad(
        &self,
        batch: &[Example<'_>],
        dropout: Option<Dropout>,
    ) -> Result<(f64, Self)> {
        let mode = match dropout {
            Some(Dropout { p, seed }) if p > 0.0 => Mode::Train { dropout_p: p, seed },
            _ => Mode::Eval,
        };
        backward(self, batch, mode)
    }

    fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.fill(0.0);
        z
    }

    fn context_len(&self) -> usize {
        RECEPTIVE_FIELD
    }
}
