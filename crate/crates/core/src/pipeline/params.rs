//! Flat parameter vectors, the EMA teacher update and the Adam optimizer.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParamError {
    #[error("parameter layouts differ: {0:?} vs {1:?}")]
    LayoutMismatch(Layout, Layout),
    #[error("shape mismatch: expected {expected} values, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("EMA decay must be in [0, 1), got {0}")]
    BadDecay(f64),
}

/// Named tensor shapes stored back to back in a [`ParamVector`].
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Layout {
    pub tensors: Vec<(String, Vec<usize>)>,
}

impl Layout {
    pub fn len(&self) -> usize {
        self.tensors.iter().map(|(_, s)| s.iter().product::<usize>()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Start offset and length of the named tensor.
    pub fn range(&self, name: &str) -> Option<std::ops::Range<usize>> {
        let mut off = 0;
        for (n, s) in &self.tensors {
            let len: usize = s.iter().product();
            if n == name {
                return Some(off..off + len);
            }
            off += len;
        }
        None
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ParamVector {
    pub values: Vec<f64>,
    pub layout: Layout,
}

impl ParamVector {
    pub fn zeros(layout: Layout) -> Self {
        Self { values: vec![0.0; layout.len()], layout }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn tensor(&self, name: &str) -> &[f64] {
        let r = self.layout.range(name).unwrap_or_else(|| panic!("no tensor `{name}`"));
        &self.values[r]
    }

    pub fn tensor_mut(&mut self, name: &str) -> &mut [f64] {
        let r = self.layout.range(name).unwrap_or_else(|| panic!("no tensor `{name}`"));
        &mut self.values[r]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Euclidean distance to another vector of the same layout.
    pub fn distance(&self, other: &ParamVector) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
    }

    /// `self += alpha * other`.
    pub fn add_scaled(&mut self, other: &ParamVector, alpha: f64) {
        debug_assert_eq!(self.len(), other.len());
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += alpha * b;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for v in &mut self.values {
            *v *= alpha;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmaState {
    pub decay: f64,
    pub teacher: ParamVector,
    pub steps: u64,
}

impl EmaState {
    pub fn new(teacher: ParamVector, decay: f64) -> Result<Self, ParamError> {
        if !(0.0..1.0).contains(&decay) {
            return Err(ParamError::BadDecay(decay));
        }
        Ok(Self { decay, teacher, steps: 0 })
    }
}

/// `teacher = decay * teacher + (1 - decay) * student`, elementwise.
pub fn ema_update(state: &mut EmaState, student: &ParamVector) -> Result<(), ParamError> {
    if state.teacher.layout != student.layout {
        return Err(ParamError::LayoutMismatch(state.teacher.layout.clone(), student.layout.clone()));
    }
    let d = state.decay;
    for (t, s) in state.teacher.values.iter_mut().zip(&student.values) {
        *t = d * *t + (1.0 - d) * s;
    }
    state.steps += 1;
    Ok(())
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }
}

/// One bias-corrected Adam step, in place.
pub fn adam_step(params: &mut ParamVector, grads: &ParamVector, state: &mut AdamState, lr: f64) -> Result<(), ParamError> {
    let n = params.len();
    for got in [grads.len(), state.m.len(), state.v.len()] {
        if got != n {
            return Err(ParamError::ShapeMismatch { expected: n, got });
        }
    }
    state.t += 1;
    let t = state.t as f64;
    let bc1 = 1.0 - ADAM_BETA1.powf(t);
    let bc2 = 1.0 - ADAM_BETA2.powf(t);
    for i in 0..n {
        let g = grads.values[i];
        state.m[i] = ADAM_BETA1 * state.m[i] + (1.0 - ADAM_BETA1) * g;
        state.v[i] = ADAM_BETA2 * state.v[i] + (1.0 - ADAM_BETA2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params.values[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layout(n: usize) -> Layout {
        Layout { tensors: vec![("w".into(), vec![n])] }
    }

    fn pv(v: Vec<f64>) -> ParamVector {
        let n = v.len();
        ParamVector { values: v, layout: layout(n) }
    }

    #[test]
    fn ema_examples() {
        let s = pv(vec![1.0, -2.0, 3.0]);
        let mut same = EmaState::new(s.clone(), 0.999).unwrap();
        ema_update(&mut same, &s).unwrap();
        assert_eq!(same.teacher, s);
        assert_eq!(same.steps, 1);

        let mut st = EmaState::new(pv(vec![0.0]), 0.999).unwrap();
        ema_update(&mut st, &pv(vec![1.0])).unwrap();
        assert!((st.teacher.values[0] - 0.001).abs() < 1e-15);
    }

    #[test]
    fn ema_layout_checked() {
        let mut st = EmaState::new(pv(vec![0.0, 0.0]), 0.5).unwrap();
        assert!(matches!(ema_update(&mut st, &pv(vec![1.0])), Err(ParamError::LayoutMismatch(..))));
        assert!(EmaState::new(pv(vec![0.0]), 1.0).is_err());
    }

    #[test]
    fn adam_examples() {
        let mut p = pv(vec![1.0, 2.0]);
        let mut st = AdamState::new(2);
        adam_step(&mut p, &pv(vec![0.0, 0.0]), &mut st, 0.1).unwrap();
        assert_eq!(p.values, vec![1.0, 2.0]);

        let mut p = pv(vec![0.0, 0.0, 0.0]);
        let mut st = AdamState::new(3);
        adam_step(&mut p, &pv(vec![3.0, -0.02, 1e3]), &mut st, 0.01).unwrap();
        for (v, s) in p.values.iter().zip([-1.0, 1.0, -1.0]) {
            assert!((v - 0.01 * s).abs() < 1e-7, "{v}");
        }
        let mut st2 = AdamState::new(1);
        assert!(matches!(
            adam_step(&mut pv(vec![0.0]), &pv(vec![1.0, 2.0]), &mut st2, 0.1),
            Err(ParamError::ShapeMismatch { .. })
        ));
    }
}
