//! Central finite-difference verification of the analytic gradients.

use super::loss::bce_single;
use super::{Example, ParamSet, ReuseModel};
use crate::error::{Error, Result};
use crate::rng::SplitMix64;

/// Parameters compared per check (at least; small tensors are taken whole).
pub const SAMPLE_TARGET: usize = 256;
const MIN_PER_TENSOR: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

fn eval_loss<M: ReuseModel>(model: &M, batch: &[Example<'_>]) -> f64 {
    let sum: f64 = batch
        .iter()
        .map(|ex| bce_single(model.predict(ex.window), ex.label))
        .sum();
    sum / batch.len() as f64
}

/// Flat indices to check: every tensor contributes in proportion to its
/// size, with a small floor, drawn without replacement from a fixed stream.
fn sample_indices<M: ParamSet>(params: &M) -> Vec<(String, usize)> {
    let total = params.num_params();
    let mut rng = SplitMix64::new(0x6C_EC);
    let mut out = Vec::new();
    let mut offset = 0;
    for (name, t) in params.tensors() {
        let want = ((SAMPLE_TARGET * t.len()).div_ceil(total))
            .max(MIN_PER_TENSOR)
            .min(t.len());
        let mut idx: Vec<usize> = (0..t.len()).collect();
        rng.shuffle(&mut idx);
        idx.truncate(want);
        idx.sort_unstable();
        out.extend(
            idx.into_iter()
                .map(|k| (format!("{name}[{k}]"), offset + k)),
        );
        offset += t.len();
    }
    out
}

/// Largest relative error between backpropagated and central-difference
/// gradients over a sample of parameters, with denominator
/// `max(|analytic|, |numeric|, 1e-12)`. Runs in eval mode (no dropout).
pub fn grad_check_report<M: ReuseModel>(
    params: &M,
    batch: &[Example<'_>],
    eps: f64,
) -> Result<GradCheckReport> {
    if !(eps.is_finite() && eps > 0.0) {
        return Err(Error::InvalidInput(format!(
            "finite-difference step must be positive, got {eps}"
        )));
    }
    if batch.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    let (_, grads) = params.loss_and_grad(batch, None)?;
    let mut probe = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    for (name, flat) in sample_indices(params) {
        let orig = params.get_flat(flat);
        probe.set_flat(flat, orig + eps);
        let plus = eval_loss(&probe, batch);
        probe.set_flat(flat, orig - eps);
        let minus = eval_loss(&probe, batch);
        probe.set_flat(flat, orig);

        let numeric = (plus - minus) / (2.0 * eps);
        let analytic = grads.get_flat(flat);
        let denom = analytic.abs().max(numeric.abs()).max(1e-12);
        let rel = (analytic - numeric).abs() / denom;
        report.checked += 1;
        if rel > report.max_rel_error || report.worst_param.is_empty() {
            report.max_rel_error = rel;
            report.worst_param = name;
            report.analytic = analytic;
            report.numeric = numeric;
        }
    }
    Ok(report)
}

pub fn grad_check<M: ReuseModel>(params: &M, batch: &[Example<'_>], eps: f64) -> Result<f64> {
    grad_check_report(params, batch, eps).map(|r| r.max_rel_error)
}
