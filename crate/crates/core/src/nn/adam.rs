use serde::{Deserialize, Serialize};

use super::params::{GradBuffer, ParamStore};
use super::NnError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(store: &ParamStore) -> Self {
        Self::with_betas(store, 0.9, 0.98, 1e-9)
    }

    pub fn with_betas(store: &ParamStore, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        let zeros: Vec<Vec<f64>> = store.ids().map(|id| vec![0.0; store.value(id).len()]).collect();
        AdamState { beta1, beta2, epsilon, step: 0, m: zeros.clone(), v: zeros }
    }
}

/// One bias-corrected Adam update. Nothing is modified if any gradient is
/// non-finite.
pub fn adam_step(store: &mut ParamStore, grads: &GradBuffer, state: &mut AdamState, lr: f64) -> Result<(), NnError> {
    if !(lr > 0.0) || !lr.is_finite() {
        return Err(NnError::InvalidArgument(format!("learning rate must be positive, got {lr}")));
    }
    if grads.grads.len() != store.len() || state.m.len() != store.len() {
        return Err(NnError::Shape("gradient or optimizer state does not match parameters".into()));
    }
    for id in store.ids() {
        let g = grads.get(id);
        if g.len() != store.value(id).len() {
            return Err(NnError::Shape(format!("gradient length for {}", store.name(id))));
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(NnError::NonFiniteGradient(store.name(id).to_string()));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - state.beta1.powi(t);
    let c2 = 1.0 - state.beta2.powi(t);
    for id in store.ids() {
        let k = id.index();
        let g = grads.get(id);
        let (m, v) = (&mut state.m[k], &mut state.v[k]);
        for (i, p) in store.value_mut(id).data_mut().iter_mut().enumerate() {
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
            let mh = m[i] / c1;
            let vh = v[i] / c2;
            *p -= lr * mh / (vh.sqrt() + state.epsilon);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor;

    fn single(v: f64) -> (ParamStore, GradBuffer) {
        let mut s = ParamStore::new();
        s.add("p", Tensor::scalar(v));
        let g = GradBuffer::zeros(&s);
        (s, g)
    }

    #[test]
    fn zero_gradient_keeps_params() {
        let (mut s, g) = single(0.7);
        let mut st = AdamState::new(&s);
        adam_step(&mut s, &g, &mut st, 0.1).unwrap();
        let id = s.id("p").unwrap();
        assert_eq!(s.value(id).data()[0], 0.7);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn first_step_hand_value() {
        let (mut s, mut g) = single(0.0);
        g.grads[0][0] = 1.0;
        let mut st = AdamState::new(&s);
        adam_step(&mut s, &g, &mut st, 0.1).unwrap();
        // m_hat = 1, v_hat = 1, so the step is lr / (1 + eps).
        let id = s.id("p").unwrap();
        let p = s.value(id).data()[0];
        assert!((p + 0.1 / (1.0 + 1e-9)).abs() < 1e-15);
        adam_step(&mut s, &g, &mut st, 0.1).unwrap();
        assert!(s.value(id).data()[0] < p);
    }

    #[test]
    fn rejects_non_finite() {
        let (mut s, mut g) = single(1.0);
        g.grads[0][0] = f64::NAN;
        let mut st = AdamState::new(&s);
        match adam_step(&mut s, &g, &mut st, 0.1) {
            Err(NnError::NonFiniteGradient(name)) => assert_eq!(name, "p"),
            other => panic!("{other:?}"),
        }
        assert_eq!(st.step, 0);
        let zeros = GradBuffer::zeros(&s);
        assert!(adam_step(&mut s, &zeros, &mut st, 0.0).is_err());
    }

    #[test]
    fn quadratic_loss_decreases() {
        // f(p) = sum (p - c)^2
        let c = [1.0, -2.0, 0.5];
        let mut s = ParamStore::new();
        let id = s.add("p", Tensor::matrix(1, 3, vec![0.0; 3]).unwrap());
        let loss = |s: &ParamStore| s.value(id).data().iter().zip(&c).map(|(p, c)| (p - c).powi(2)).sum::<f64>();
        let mut st = AdamState::new(&s);
        let before = loss(&s);
        let mut g = GradBuffer::zeros(&s);
        g.grads[0] = s.value(id).data().iter().zip(&c).map(|(p, c)| 2.0 * (p - c)).collect();
        adam_step(&mut s, &g, &mut st, 1e-3).unwrap();
        assert!(loss(&s) < before);

        let mut tiny = s.clone();
        let snapshot = tiny.value(id).clone();
        adam_step(&mut tiny, &g, &mut st, 1e-300).unwrap();
        assert!(tiny.value(id).max_abs_diff(&snapshot) < 1e-290);
    }
}
