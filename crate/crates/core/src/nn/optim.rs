use serde::{Deserialize, Serialize};

use super::{Gradients, Parameterized};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// Optimizer hyperparameters and per-parameter moment estimates.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Number of updates applied so far.
    pub step: u64,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, learning_rate: f64) -> Self {
        Self {
            kind,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
        }
    }

    pub fn sgd(learning_rate: f64) -> Self {
        Self::new(OptimizerKind::Sgd, learning_rate)
    }

    pub fn adam(learning_rate: f64) -> Self {
        Self::new(OptimizerKind::Adam, learning_rate)
    }

    pub fn first_moment(&self) -> &[Vec<f64>] {
        &self.first_moment
    }

    pub fn second_moment(&self) -> &[Vec<f64>] {
        &self.second_moment
    }

    /// Updates every parameter of `model` in place.
    pub fn step_model<P: Parameterized + ?Sized>(&mut self, model: &mut P, grads: &Gradients) -> Result<()> {
        let mut params = model.parameters_mut();
        optimizer_step(&mut params, grads, self)
    }
}

/// One SGD (`theta - lr * g`) or bias-corrected Adam update.
pub fn optimizer_step(
    params: &mut [&mut [f64]],
    grads: &Gradients,
    state: &mut OptimizerState,
) -> Result<()> {
    if params.len() != grads.0.len() {
        return Err(Error::shape(
            "optimizer_step",
            format!("{} gradient arrays", params.len()),
            format!("{}", grads.0.len()),
        ));
    }
    for (i, (p, g)) in params.iter().zip(&grads.0).enumerate() {
        if p.len() != g.len() {
            return Err(Error::shape(
                "optimizer_step",
                format!("gradient {i} of length {}", p.len()),
                format!("length {}", g.len()),
            ));
        }
    }
    if !(state.learning_rate >= 0.0) {
        return Err(Error::Config(format!(
            "learning rate must be nonnegative, got {}",
            state.learning_rate
        )));
    }

    let lr = state.learning_rate;
    match state.kind {
        OptimizerKind::Sgd => {
            for (p, g) in params.iter_mut().zip(&grads.0) {
                for (theta, grad) in p.iter_mut().zip(g) {
                    *theta -= lr * grad;
                }
            }
        }
        OptimizerKind::Adam => {
            if state.first_moment.is_empty() {
                state.first_moment = grads.0.iter().map(|g| vec![0.0; g.len()]).collect();
                state.second_moment = state.first_moment.clone();
            } else if state.first_moment.len() != params.len()
                || state
                    .first_moment
                    .iter()
                    .zip(params.iter())
                    .any(|(m, p)| m.len() != p.len())
            {
                return Err(Error::shape(
                    "optimizer_step",
                    "parameters matching the optimizer moments",
                    "a different parameter layout",
                ));
            }
            state.step += 1;
            let (b1, b2, eps) = (state.beta1, state.beta2, state.epsilon);
            let t = state.step as i32;
            let bias1 = 1.0 - b1.powi(t);
            let bias2 = 1.0 - b2.powi(t);
            for (((p, g), m), v) in params
                .iter_mut()
                .zip(&grads.0)
                .zip(&mut state.first_moment)
                .zip(&mut state.second_moment)
            {
                for (((theta, &grad), m), v) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                    *m = b1 * *m + (1.0 - b1) * grad;
                    *v = b2 * *v + (1.0 - b2) * grad * grad;
                    let m_hat = *m / bias1;
                    let v_hat = *v / bias2;
                    *theta -= lr * m_hat / (v_hat.sqrt() + eps);
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step(kind: OptimizerKind, lr: f64, theta: f64, g: f64) -> f64 {
        let mut p = vec![theta];
        let mut state = OptimizerState::new(kind, lr);
        optimizer_step(&mut [&mut p[..]], &Gradients(vec![vec![g]]), &mut state).unwrap();
        p[0]
    }

    #[test]
    fn sgd_step_by_hand() {
        assert!((step(OptimizerKind::Sgd, 0.1, 1.0, 2.0) - 0.8).abs() < 1e-15);
    }

    #[test]
    fn sgd_with_zero_rate_is_a_no_op() {
        assert_eq!(step(OptimizerKind::Sgd, 0.0, 1.234567, 9.0).to_bits(), 1.234567f64.to_bits());
    }

    #[test]
    fn adam_with_zero_gradient_keeps_parameters() {
        assert_eq!(step(OptimizerKind::Adam, 0.005, 0.75, 0.0), 0.75);
    }

    #[test]
    fn adam_first_step_has_magnitude_of_learning_rate() {
        // m_hat = 1, v_hat = 1 -> theta = -lr / (1 + eps)
        let theta = step(OptimizerKind::Adam, 0.005, 0.0, 1.0);
        assert!((theta + 0.005 / (1.0 + 1e-8)).abs() < 1e-15);
        assert!((theta + 0.005).abs() < 1e-10);
    }

    #[test]
    fn adam_advances_step_counter() {
        let mut p = vec![0.0, 0.0];
        let mut state = OptimizerState::adam(0.01);
        for _ in 0..3 {
            optimizer_step(&mut [&mut p[..]], &Gradients(vec![vec![1.0, -1.0]]), &mut state).unwrap();
        }
        assert_eq!(state.step, 3);
        assert_eq!(state.first_moment()[0].len(), 2);
    }

    #[test]
    fn mismatched_gradient_is_rejected() {
        let mut p = vec![0.0; 3];
        let mut state = OptimizerState::sgd(0.1);
        let err = optimizer_step(&mut [&mut p[..]], &Gradients(vec![vec![1.0; 2]]), &mut state);
        assert!(matches!(err, Err(Error::Shape { .. })));
    }
}
