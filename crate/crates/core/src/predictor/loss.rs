use crate::error::{Error, Result};

/// Predictions are clipped to `[CLIP, 1 - CLIP]` before taking logs.
pub const CLIP: f64 = 1e-7;

/// Binary cross-entropy of a single prediction.
#[inline]
pub fn bce_single(y_hat: f64, y: f64) -> f64 {
    let p = y_hat.clamp(CLIP, 1.0 - CLIP);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

/// Derivative of [`bce_single`] with respect to the pre-sigmoid logit.
///
/// Zero when the clip is active, since the clipped loss is flat there.
#[inline]
pub fn bce_logit_grad(y_hat: f64, y: f64) -> f64 {
    if !(CLIP..=1.0 - CLIP).contains(&y_hat) {
        0.0
    } else {
        y_hat - y
    }
}

/// Mean binary cross-entropy.
pub fn bce_loss(y_hat: &[f64], y: &[f64]) -> Result<f64> {
    if y_hat.len() != y.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} labels",
            y_hat.len(),
            y.len()
        )));
    }
    if y_hat.is_empty() {
        return Err(Error::InvalidInput("bce_loss on an empty batch".into()));
    }
    let sum: f64 = y_hat.iter().zip(y).map(|(&p, &t)| bce_single(p, t)).sum();
    Ok(sum / y_hat.len() as f64)
}
