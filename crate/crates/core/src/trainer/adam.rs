use crate::error::{Error, Result};
use crate::nets::{OptimizerRecord, Param};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Adam moments for one network, one buffer per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub first: Vec<Vec<f64>>,
    pub second: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &[&Param]) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|p| vec![0.0; p.len()]).collect();
        Self {
            beta1: BETA1,
            beta2: BETA2,
            eps: EPSILON,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    pub fn to_record(&self) -> OptimizerRecord {
        OptimizerRecord {
            step: self.step,
            first: self.first.clone(),
            second: self.second.clone(),
        }
    }

    pub fn from_record(record: &OptimizerRecord) -> Self {
        Self {
            beta1: BETA1,
            beta2: BETA2,
            eps: EPSILON,
            step: record.step,
            first: record.first.clone(),
            second: record.second.clone(),
        }
    }
}

/// One bias-corrected Adam update of every tensor from its `grad` buffer.
/// Nothing is modified if any gradient is non-finite.
pub fn adam_step(state: &mut AdamState, params: &mut [&mut Param], lr: f64) -> Result<()> {
    if params.len() != state.first.len() {
        return Err(Error::ShapeMismatch(format!(
            "optimizer tracks {} tensors, got {}",
            state.first.len(),
            params.len()
        )));
    }
    for (p, m) in params.iter().zip(&state.first) {
        if p.len() != m.len() {
            return Err(Error::ShapeMismatch(format!(
                "optimizer moment for {} has {} entries, tensor has {}",
                p.name,
                m.len(),
                p.len()
            )));
        }
        if p.grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient(p.name.to_string()));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for ((p, m), v) in params.iter_mut().zip(&mut state.first).zip(&mut state.second) {
        let Param { value, grad, .. } = &mut **p;
        for (((x, &g), m), v) in value.iter_mut().zip(grad.iter()).zip(m).zip(v) {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *x -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param(value: Vec<f64>) -> Param {
        Param::new("w", vec![value.len()], value)
    }

    #[test]
    fn zero_gradient_leaves_values() {
        let mut p = param(vec![1.0, -2.0]);
        let mut s = AdamState::new(&[&p]);
        adam_step(&mut s, &mut [&mut p], 0.1).unwrap();
        assert_eq!(p.value, vec![1.0, -2.0]);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn first_step_closed_form() {
        let g = 0.37;
        let mut p = param(vec![0.5]);
        p.grad[0] = g;
        let mut s = AdamState::new(&[&p]);
        adam_step(&mut s, &mut [&mut p], 1e-3).unwrap();
        let expected = 0.5 - 1e-3 * g / (g.abs() + 1e-8);
        assert!((p.value[0] - expected).abs() < 1e-16);
        assert!((p.value[0] - (0.5 - 1e-3)).abs() < 1e-10);
    }

    #[test]
    fn matches_scalar_reference_loop() {
        let (lr, g) = (0.01, -0.25);
        let mut p = param(vec![0.0]);
        let mut s = AdamState::new(&[&p]);
        let (mut x, mut m, mut v) = (0.0f64, 0.0f64, 0.0f64);
        for t in 1..=100 {
            p.grad[0] = g;
            adam_step(&mut s, &mut [&mut p], lr).unwrap();
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            x -= lr * mh / (vh.sqrt() + 1e-8);
        }
        assert!((p.value[0] - x).abs() < 1e-14);
        assert_eq!(s.step, 100);
    }

    #[test]
    fn non_finite_gradient_is_rejected() {
        let mut p = param(vec![1.0, 1.0]);
        p.grad[1] = f64::NAN;
        let mut s = AdamState::new(&[&p]);
        let err = adam_step(&mut s, &mut [&mut p], 0.1).unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient(ref n) if n == "w"));
        assert_eq!(p.value, vec![1.0, 1.0]);
        assert_eq!(s.step, 0);
    }

    #[test]
    fn record_round_trip() {
        let mut p = param(vec![1.0, 2.0, 3.0]);
        p.grad = vec![0.1, -0.2, 0.3];
        let mut s = AdamState::new(&[&p]);
        adam_step(&mut s, &mut [&mut p], 0.1).unwrap();
        assert_eq!(AdamState::from_record(&s.to_record()), s);
    }
}
