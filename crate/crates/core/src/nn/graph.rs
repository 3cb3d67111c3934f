use super::loss::{mse_loss_with_grad, LossScale};
use super::{Gradients, Parameterized};
use crate::error::{Error, Result};
use crate::tensor::{BoolMatrix, RealMatrix};

/// A model whose forward pass can be recorded and differentiated in reverse mode.
pub trait Differentiable: Parameterized {
    type Input;
    type Recording;

    fn forward_recorded(&self, input: &Self::Input) -> Result<(RealMatrix, Self::Recording)>;

    /// Exact gradients of a scalar loss given `d_output = dL/d(output)`.
    fn backward(&self, recording: &Self::Recording, d_output: &RealMatrix) -> Result<Gradients>;
}

/// Forward pass, masked MSE loss and the backward pass rooted at that loss.
pub struct LossGraph<'m, M: Differentiable> {
    model: &'m M,
    scale: LossScale,
    recorded: Option<Recorded<M::Recording>>,
}

struct Recorded<R> {
    recording: R,
    output: RealMatrix,
    d_output: RealMatrix,
}

impl<'m, M: Differentiable> LossGraph<'m, M> {
    pub fn new(model: &'m M, scale: LossScale) -> Self {
        Self {
            model,
            scale,
            recorded: None,
        }
    }

    /// Runs and records the forward pass; returns the loss.
    pub fn forward(
        &mut self,
        input: &M::Input,
        target: &RealMatrix,
        mask: Option<&BoolMatrix>,
    ) -> Result<f64> {
        let (output, recording) = self.model.forward_recorded(input)?;
        let (loss, d_output) = mse_loss_with_grad(&output, target, mask, self.scale)?;
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("loss evaluated to {loss}")));
        }
        self.recorded = Some(Recorded {
            recording,
            output,
            d_output,
        });
        Ok(loss)
    }

    pub fn output(&self) -> Option<&RealMatrix> {
        self.recorded.as_ref().map(|r| &r.output)
    }

    pub fn backward(&self) -> Result<Gradients> {
        let rec = self
            .recorded
            .as_ref()
            .ok_or_else(|| Error::State("backward called before forward".into()))?;
        self.model.backward(&rec.recording, &rec.d_output)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, DenseLayerParams, DenseNetwork};

    #[test]
    fn backward_before_forward_is_a_state_error() {
        let net = DenseNetwork::new(vec![DenseLayerParams::zeros(1, 1, Activation::Identity)]).unwrap();
        let graph = LossGraph::new(&net, LossScale::PerSample);
        assert!(matches!(graph.backward(), Err(Error::State(_))));
    }
}
