//! Numerical kernel: dense layers, activations, dropout, loss, gradients and optimizers.

pub(crate) mod activation;
mod dense;
mod dropout;
mod gradcheck;
mod graph;
mod loss;
mod optim;

pub use activation::Activation;
pub use dense::{dense_forward, dnn_forward, DenseLayerParams, DenseNetwork, DenseRecording};
pub use dropout::{dropout_apply, dropout_apply_with, DropoutMode, DropoutSpec};
pub use gradcheck::{finite_difference_gradient, finite_difference_model_gradient, max_relative_error, relative_error};
pub use graph::{Differentiable, LossGraph};
pub use loss::{mse_loss, mse_loss_scaled, mse_loss_with_grad, LossScale};
pub use optim::{optimizer_step, OptimizerKind, OptimizerState};

use rand::Rng;

/// Read and write access to every trainable array of a model, in a fixed order.
///
/// Gradients, optimizer moments and finite-difference checks all index
/// parameters by position in this list.
pub trait Parameterized {
    fn parameters(&self) -> Vec<&[f64]>;
    fn parameters_mut(&mut self) -> Vec<&mut [f64]>;

    fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|p| p.len()).sum()
    }
}

/// Gradients laid out like [`Parameterized::parameters`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients(pub Vec<Vec<f64>>);

impl Gradients {
    pub fn zeros_like<P: Parameterized + ?Sized>(model: &P) -> Self {
        Gradients(model.parameters().iter().map(|p| vec![0.0; p.len()]).collect())
    }

    pub fn global_norm(&self) -> f64 {
        self.0
            .iter()
            .flat_map(|g| g.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for v in self.0.iter_mut().flat_map(|g| g.iter_mut()) {
            *v *= factor;
        }
    }

    /// Rescales so the global L2 norm is at most `max_norm`; returns the norm before clipping.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        if norm > max_norm && norm > 0.0 {
            self.scale(max_norm / norm);
        }
        norm
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().flat_map(|g| g.iter()).all(|v| v.is_finite())
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.0.iter().flat_map(|g| g.iter().copied()).collect()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().flat_map(|g| g.iter()).all(|&v| v == 0.0)
    }
}

/// Uniform draw in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
pub(crate) fn init_uniform<R: Rng + ?Sized>(values: &mut [f64], fan_in: usize, rng: &mut R) {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    for v in values {
        *v = rng.random_range(-bound..=bound);
    }
}
