use super::ParamSet;
use crate::error::{Error, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// First/second moment accumulators, one vector per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

impl AdamState {
    pub fn new<M: ParamSet>(params: &M) -> Self {
        let zeros: Vec<Vec<f64>> = params
            .tensors()
            .iter()
            .map(|(_, t)| vec![0.0; t.len()])
            .collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }
}

/// One bias-corrected Adam update. Gradients are checked for finiteness
/// before anything is modified.
pub fn adam_step<M: ParamSet>(
    params: &mut M,
    grads: &M,
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    let grads = grads.tensors();
    if grads.len() != state.m.len() {
        return Err(Error::Shape(
            "optimizer state does not match parameters".into(),
        ));
    }
    for ((name, g), m) in grads.iter().zip(&state.m) {
        if g.len() != m.len() {
            return Err(Error::Shape(format!(
                "gradient {name} has the wrong length"
            )));
        }
        if let Some(k) = g.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                param: format!("{name}[{k}]"),
            });
        }
    }

    state.t += 1;
    let bc1 = 1.0 - BETA1.powi(state.t as i32);
    let bc2 = 1.0 - BETA2.powi(state.t as i32);
    for (((_, p), (_, g)), (m, v)) in params
        .tensors_mut()
        .into_iter()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        for k in 0..p.len() {
            m[k] = BETA1 * m[k] + (1.0 - BETA1) * g[k];
            v[k] = BETA2 * v[k] + (1.0 - BETA2) * g[k] * g[k];
            let m_hat = m[k] / bc1;
            let v_hat = v[k] / bc2;
            if lr != 0.0 {
                p[k] -= lr * m_hat / (v_hat.sqrt() + EPSILON);
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Clone)]
    struct Scalar(Vec<f64>);

    impl ParamSet for Scalar {
        fn tensors(&self) -> Vec<(&'static str, &[f64])> {
            vec![("theta", &self.0)]
        }
        fn tensors_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
            vec![("theta", &mut self.0)]
        }
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = Scalar(vec![1.5, -2.0]);
        let mut s = AdamState::new(&p);
        adam_step(&mut p, &Scalar(vec![0.0, 0.0]), &mut s, 1e-3).unwrap();
        assert_eq!(p.0, [1.5, -2.0]);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = Scalar(vec![0.0]);
        let mut s = AdamState::new(&p);
        adam_step(&mut p, &Scalar(vec![1.0]), &mut s, 1e-4).unwrap();
        let expected = -1e-4 / (1.0 + 1e-8);
        assert!((p.0[0] - expected).abs() < 1e-18);
    }

    #[test]
    fn second_identical_step_is_similar() {
        let mut p = Scalar(vec![0.0]);
        let mut s = AdamState::new(&p);
        let g = Scalar(vec![0.37]);
        adam_step(&mut p, &g, &mut s, 1e-4).unwrap();
        let d1 = p.0[0];
        adam_step(&mut p, &g, &mut s, 1e-4).unwrap();
        let d2 = p.0[0] - d1;
        assert!(((d2 - d1) / d1).abs() < 0.01);
    }

    #[test]
    fn non_finite_gradient_named() {
        let mut p = Scalar(vec![0.0, 0.0]);
        let mut s = AdamState::new(&p);
        let err = adam_step(&mut p, &Scalar(vec![0.0, f64::NAN]), &mut s, 1e-4).unwrap_err();
        match err {
            Error::NonFinite { param } => assert_eq!(param, "theta[1]"),
            other => panic!("{other:?}"),
        }
        assert_eq!(s.t, 0);
        assert_eq!(p.0, [0.0, 0.0]);
    }

    #[test]
    fn zero_learning_rate_is_bit_exact_noop() {
        let mut p = Scalar(vec![0.123456789, -7.5]);
        let before = p.0.clone();
        let mut s = AdamState::new(&p);
        for _ in 0..5 {
            adam_step(&mut p, &Scalar(vec![3.0, -0.2]), &mut s, 0.0).unwrap();
        }
        assert_eq!(p.0, before);
        assert!(s.v.iter().flatten().all(|&v| v >= 0.0));
    }
}
